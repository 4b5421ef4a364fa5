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

#include "semindex/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "semindex/errors.hpp"

namespace semindex::ag {

namespace {

void CheckSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch (" +
                        std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ")");
  }
}

// Builds an op node. When no parent needs gradient the closure and parent
// links are dropped so no graph is retained.
Var MakeOp(Matrix value, std::vector<Var> parents,
           std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

bool Wants(const Node& self, size_t i) {
  return self.parents[i]->requires_grad;
}

}  // namespace

void Node::AccumulateGrad(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var Parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var Constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Constant(std::move(m));
}

void Backward(const Var& loss) {
  if (!loss.requires_grad()) return;
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("Backward: loss must be 1x1");
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !p->parents.empty() && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Matrix one(1, 1);
  one(0, 0) = 1.0;
  loss.node()->AccumulateGrad(one);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->HasGrad()) n->backward(*n);
    // Interior gradients are not needed once propagated.
    if (!n->parents.empty()) n->grad.resize(0, 0);
  }
}

Var MatMul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ContractError("MatMul: inner dim mismatch");
  Matrix out = a.value() * b.value();
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (Wants(self, 0))
      self.parents[0]->AccumulateGrad(self.grad * bv.transpose());
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(av.transpose() * self.grad);
  });
}

Var MatMulNT(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ContractError("MatMulNT: width mismatch");
  Matrix out = a.value() * b.value().transpose();
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (Wants(self, 0)) self.parents[0]->AccumulateGrad(self.grad * bv);
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(self.grad.transpose() * av);
  });
}

Var Add(const Var& a, const Var& b) {
  CheckSameShape(a.value(), b.value(), "Add");
  return MakeOp(a.value() + b.value(), {a, b}, [](Node& self) {
    if (Wants(self, 0)) self.parents[0]->AccumulateGrad(self.grad);
    if (Wants(self, 1)) self.parents[1]->AccumulateGrad(self.grad);
  });
}

Var Sub(const Var& a, const Var& b) {
  CheckSameShape(a.value(), b.value(), "Sub");
  return MakeOp(a.value() - b.value(), {a, b}, [](Node& self) {
    if (Wants(self, 0)) self.parents[0]->AccumulateGrad(self.grad);
    if (Wants(self, 1)) self.parents[1]->AccumulateGrad(-self.grad);
  });
}

Var Mul(const Var& a, const Var& b) {
  CheckSameShape(a.value(), b.value(), "Mul");
  return MakeOp(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (Wants(self, 0))
      self.parents[0]->AccumulateGrad(self.grad.cwiseProduct(bv));
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(self.grad.cwiseProduct(av));
  });
}

Var AddRow(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ContractError("AddRow: row must be 1 x cols");
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return MakeOp(std::move(out), {a, row}, [](Node& self) {
    if (Wants(self, 0)) self.parents[0]->AccumulateGrad(self.grad);
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(self.grad.colwise().sum());
  });
}

Var Scale(const Var& a, double s) {
  return MakeOp(a.value() * s, {a}, [s](Node& self) {
    self.parents[0]->AccumulateGrad(self.grad * s);
  });
}

Var SumAll(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    self.parents[0]->AccumulateGrad(
        Matrix::Constant(av.rows(), av.cols(), self.grad(0, 0)));
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
}

Var Gelu(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double t = std::tanh(kGeluC * (v + 0.044715 * v * v * v));
    out.data()[i] = 0.5 * v * (1.0 + t);
  }
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix& x = self.parents[0]->value;
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double u = kGeluC * (v + 0.044715 * v * v * v);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      g.data()[i] = self.grad.data()[i] * d;
    }
    self.parents[0]->AccumulateGrad(g);
  });
}

Var SoftmaxRows(const Var& a) {
  const Matrix& x = a.value();
  Matrix p(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    p.row(r) = (x.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  Matrix saved = p;
  return MakeOp(std::move(p), {a}, [saved = std::move(saved)](Node& self) {
    Matrix g(saved.rows(), saved.cols());
    for (Eigen::Index r = 0; r < saved.rows(); ++r) {
      const double dot = self.grad.row(r).dot(saved.row(r));
      g.row(r) = saved.row(r).cwiseProduct(
          (self.grad.row(r).array() - dot).matrix());
    }
    self.parents[0]->AccumulateGrad(g);
  });
}

Var LayerNorm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  if (gain.cols() != d || bias.cols() != d) {
    throw ContractError("LayerNorm: gain/bias width mismatch");
  }
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array())
                   .rowwise() +
               bias.value().row(0).array();
  return MakeOp(std::move(out), {x, gain, bias},
                [xhat = std::move(xhat), inv_std](Node& self) {
                  const Matrix& gv = self.parents[1]->value;
                  const Eigen::Index d = xhat.cols();
                  if (Wants(self, 1))
                    self.parents[1]->AccumulateGrad(
                        self.grad.cwiseProduct(xhat).colwise().sum());
                  if (Wants(self, 2))
                    self.parents[2]->AccumulateGrad(
                        self.grad.colwise().sum());
                  if (Wants(self, 0)) {
                    Matrix dxhat =
                        self.grad.array().rowwise() * gv.row(0).array();
                    Matrix dx(xhat.rows(), d);
                    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                      const double m1 = dxhat.row(r).mean();
                      const double m2 = dxhat.row(r).dot(xhat.row(r)) /
                                        static_cast<double>(d);
                      dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 -
                                                xhat.row(r).array() * m2)
                                                   .matrix();
                    }
                    self.parents[0]->AccumulateGrad(dx);
                  }
                });
}

Var Dropout(const Var& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("Dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = keep(rng) ? s : 0.0;
  return Mul(x, Constant(std::move(mask)));
}

Var GatherRows(const Var& table, std::span<const int> rows) {
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.rows()) {
      throw ContractError("GatherRows: index " + std::to_string(rows[i]) +
                          " out of range " + std::to_string(t.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return MakeOp(std::move(out), {table}, [idx = std::move(idx)](Node& self) {
    const Matrix& t = self.parents[0]->value;
    Matrix g = Matrix::Zero(t.rows(), t.cols());
    for (size_t i = 0; i < idx.size(); ++i)
      g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    self.parents[0]->AccumulateGrad(g);
  });
}

Var ConcatRows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("ConcatRows: no parts");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ContractError("ConcatRows: width mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return MakeOp(std::move(out), std::move(parents),
                [offsets = std::move(offsets)](Node& self) {
                  for (size_t i = 0; i < self.parents.size(); ++i) {
                    if (!Wants(self, i)) continue;
                    const Eigen::Index r = self.parents[i]->value.rows();
                    self.parents[i]->AccumulateGrad(
                        self.grad.middleRows(offsets[i], r));
                  }
                });
}

Var GroupSumRows(const Var& x, std::span<const int> group_of_row,
                 int num_groups) {
  if (static_cast<Eigen::Index>(group_of_row.size()) != x.rows()) {
    throw ContractError("GroupSumRows: one group per row required");
  }
  Matrix out = Matrix::Zero(num_groups, x.cols());
  for (size_t i = 0; i < group_of_row.size(); ++i) {
    const int g = group_of_row[i];
    if (g < 0 || g >= num_groups) throw ContractError("GroupSumRows: group");
    out.row(g) += x.value().row(static_cast<Eigen::Index>(i));
  }
  std::vector<int> groups(group_of_row.begin(), group_of_row.end());
  return MakeOp(std::move(out), {x}, [groups = std::move(groups)](Node& self) {
    Matrix g(static_cast<Eigen::Index>(groups.size()), self.grad.cols());
    for (size_t i = 0; i < groups.size(); ++i)
      g.row(static_cast<Eigen::Index>(i)) = self.grad.row(groups[i]);
    self.parents[0]->AccumulateGrad(g);
  });
}

Var SubstituteValue(const Var& x, Matrix replacement) {
  CheckSameShape(x.value(), replacement, "SubstituteValue");
  return MakeOp(std::move(replacement), {x}, [](Node& self) {
    self.parents[0]->AccumulateGrad(self.grad);
  });
}

Var Detach(const Var& x) { return Constant(x.value()); }

Var Attention(const Var& q, const Var& k, const Var& v, int heads,
              std::span<const KeyRange> ranges) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  const Eigen::Index width = qv.cols();
  if (kv.cols() != width || vv.cols() != width || kv.rows() != vv.rows()) {
    throw ContractError("Attention: q/k/v shape mismatch");
  }
  if (heads < 1 || width % heads != 0) {
    throw ContractError("Attention: width not divisible by heads");
  }
  if (static_cast<Eigen::Index>(ranges.size()) != qv.rows()) {
    throw ContractError("Attention: one key range per query row required");
  }
  const int dh = static_cast<int>(width / heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Probabilities stored flat: for row i, head h, block of range length.
  std::vector<size_t> offset(ranges.size() + 1, 0);
  for (size_t i = 0; i < ranges.size(); ++i) {
    const auto& r = ranges[i];
    if (r.begin < 0 || r.end > kv.rows() || r.begin >= r.end) {
      throw ContractError("Attention: empty or out-of-range key range");
    }
    offset[i + 1] = offset[i] + static_cast<size_t>(r.end - r.begin) * heads;
  }
  std::vector<double> probs(offset.back());
  Matrix out = Matrix::Zero(qv.rows(), width);
  for (size_t i = 0; i < ranges.size(); ++i) {
    const int b = ranges[i].begin;
    const int len = ranges[i].end - b;
    const auto qi = static_cast<Eigen::Index>(i);
    for (int h = 0; h < heads; ++h) {
      double* p = probs.data() + offset[i] + static_cast<size_t>(h) * len;
      auto qh = qv.row(qi).segment(h * dh, dh);
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < len; ++j) {
        p[j] = scale * qh.dot(kv.row(b + j).segment(h * dh, dh));
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (int j = 0; j < len; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      auto oh = out.row(qi).segment(h * dh, dh);
      for (int j = 0; j < len; ++j) {
        p[j] /= z;
        oh += p[j] * vv.row(b + j).segment(h * dh, dh);
      }
    }
  }
  std::vector<KeyRange> saved_ranges(ranges.begin(), ranges.end());
  return MakeOp(
      std::move(out), {q, k, v},
      [heads, dh, scale, offset = std::move(offset), probs = std::move(probs),
       saved_ranges = std::move(saved_ranges)](Node& self) {
        const Matrix& qv = self.parents[0]->value;
        const Matrix& kv = self.parents[1]->value;
        const Matrix& vv = self.parents[2]->value;
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        std::vector<double> ds;
        for (size_t i = 0; i < saved_ranges.size(); ++i) {
          const int b = saved_ranges[i].begin;
          const int len = saved_ranges[i].end - b;
          const auto qi = static_cast<Eigen::Index>(i);
          ds.resize(static_cast<size_t>(len));
          for (int h = 0; h < heads; ++h) {
            const double* p =
                probs.data() + offset[i] + static_cast<size_t>(h) * len;
            auto go = self.grad.row(qi).segment(h * dh, dh);
            double dot = 0.0;
            for (int j = 0; j < len; ++j) {
              const double dp = go.dot(vv.row(b + j).segment(h * dh, dh));
              ds[j] = dp;
              dot += p[j] * dp;
              dv.row(b + j).segment(h * dh, dh) += p[j] * go;
            }
            auto qh = qv.row(qi).segment(h * dh, dh);
            auto dqh = dq.row(qi).segment(h * dh, dh);
            for (int j = 0; j < len; ++j) {
              const double g = scale * p[j] * (ds[j] - dot);
              dqh += g * kv.row(b + j).segment(h * dh, dh);
              dk.row(b + j).segment(h * dh, dh) += g * qh;
            }
          }
        }
        if (Wants(self, 0)) self.parents[0]->AccumulateGrad(dq);
        if (Wants(self, 1)) self.parents[1]->AccumulateGrad(dk);
        if (Wants(self, 2)) self.parents[2]->AccumulateGrad(dv);
      });
}

Var SoftmaxNll(const Var& logits, std::span<const Pick> picks,
               std::span<const uint8_t> allowed) {
  const Matrix& x = logits.value();
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  const bool masked = !allowed.empty();
  if (masked && static_cast<Eigen::Index>(allowed.size()) != n * c) {
    throw ContractError("SoftmaxNll: mask shape mismatch");
  }
  auto ok = [&](Eigen::Index r, Eigen::Index j) {
    return !masked || allowed[static_cast<size_t>(r * c + j)] != 0;
  };
  Matrix p = Matrix::Zero(n, c);
  std::vector<double> lse(static_cast<size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < c; ++j)
      if (ok(r, j)) mx = std::max(mx, x(r, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) {
      if (!ok(r, j)) continue;
      p(r, j) = std::exp(x(r, j) - mx);
      z += p(r, j);
    }
    if (z > 0.0) p.row(r) /= z;
    lse[static_cast<size_t>(r)] = mx + std::log(z);
  }
  std::vector<double> count(static_cast<size_t>(n), 0.0);
  double total = 0.0;
  for (const Pick& pk : picks) {
    if (pk.row < 0 || pk.row >= n || pk.col < 0 || pk.col >= c) {
      throw ContractError("SoftmaxNll: pick out of range");
    }
    if (!ok(pk.row, pk.col)) {
      throw ContractError("SoftmaxNll: picked entry is masked out");
    }
    total += lse[static_cast<size_t>(pk.row)] - x(pk.row, pk.col);
    count[static_cast<size_t>(pk.row)] += 1.0;
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<Pick> saved(picks.begin(), picks.end());
  return MakeOp(std::move(out), {logits},
                [p = std::move(p), count = std::move(count),
                 saved = std::move(saved)](Node& self) {
                  const double up = self.grad(0, 0);
                  Matrix g(p.rows(), p.cols());
                  for (Eigen::Index r = 0; r < p.rows(); ++r)
                    g.row(r) = p.row(r) * (count[static_cast<size_t>(r)] * up);
                  for (const Pick& pk : saved) g(pk.row, pk.col) -= up;
                  self.parents[0]->AccumulateGrad(g);
                });
}

Matrix LogSoftmaxRows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse =
        mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

}  // namespace semindex::ag
