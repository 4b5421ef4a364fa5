// Copyright 2026 The Semindex Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every op records a closure that maps the output gradient to its
// parents; `Backward` replays them in reverse topological order. Ops whose
// parents need no gradient record nothing, so evaluation-mode forwards build
// no graph at all.

#ifndef SEMINDEX_AUTOGRAD_HPP_
#define SEMINDEX_AUTOGRAD_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace semindex::ag {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void AccumulateGrad(const Matrix& g);
  bool HasGrad() const { return grad.size() != 0; }
};

// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void ZeroGrad() { node_->grad.resize(0, 0); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaf holding trainable state.
Var Parameter(Matrix value);
// Leaf that never receives gradient.
Var Constant(Matrix value);
Var Scalar(double v);

void Backward(const Var& loss);

// ---- linear algebra ----
Var MatMul(const Var& a, const Var& b);    // a * b
Var MatMulNT(const Var& a, const Var& b);  // a * b^T
Var Add(const Var& a, const Var& b);
Var Sub(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b);  // elementwise
Var AddRow(const Var& a, const Var& row);  // broadcast a 1 x n row
Var Scale(const Var& a, double s);
Var SumAll(const Var& a);

// ---- nonlinearities ----
Var Gelu(const Var& a);
Var SoftmaxRows(const Var& a);
Var LayerNorm(const Var& x, const Var& gain, const Var& bias,
              double eps = 1e-5);
// Inverted dropout with a mask drawn from `rng`; identity when rate == 0.
Var Dropout(const Var& x, double rate, std::mt19937_64& rng);

// ---- indexing ----
Var GatherRows(const Var& table, std::span<const int> rows);
Var ConcatRows(std::span<const Var> parts);
// out[g] = sum of x rows whose group is g.
Var GroupSumRows(const Var& x, std::span<const int> group_of_row,
                 int num_groups);

// Value is `replacement` (which must match `x` in shape) while gradient
// flows to `x` unchanged: the forward/backward split of a straight-through
// estimator without the rounding of `x + (replacement - x)`.
Var SubstituteValue(const Var& x, Matrix replacement);
Var Detach(const Var& x);

// ---- attention ----
struct KeyRange {
  int begin = 0;
  int end = 0;  // exclusive
};

// Multi-head scaled dot-product attention. Query row i attends to key rows
// [ranges[i].begin, ranges[i].end). q, k, v are already projected; the
// per-head split is over contiguous column blocks of width cols / heads.
Var Attention(const Var& q, const Var& k, const Var& v, int heads,
              std::span<const KeyRange> ranges);

// ---- losses ----
struct Pick {
  int row = 0;
  int col = 0;
};

// Sum over picks of -log softmax(logits[row])[col]. With a non-empty
// `allowed` mask (rows x cols, row-major, nonzero = allowed) each row's
// softmax runs over allowed entries only; picked entries must be allowed.
Var SoftmaxNll(const Var& logits, std::span<const Pick> picks,
               std::span<const uint8_t> allowed = {});

// Row-wise log-softmax without graph recording.
Matrix LogSoftmaxRows(const Matrix& logits);

}  // namespace semindex::ag

#endif  // SEMINDEX_AUTOGRAD_HPP_
