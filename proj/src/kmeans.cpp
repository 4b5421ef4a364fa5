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

#include "semindex/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "semindex/errors.hpp"
#include "semindex/seed.hpp"

namespace semindex {

using ag::Matrix;

namespace {

double SqDist(const Matrix& a, Eigen::Index i, const Matrix& b,
              Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

// Indices of the first occurrence of every distinct row.
std::vector<Eigen::Index> DistinctRows(const Matrix& points) {
  std::map<std::vector<double>, Eigen::Index> seen;
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    std::vector<double> key(points.row(i).data(),
                            points.row(i).data() + points.cols());
    if (seen.emplace(std::move(key), i).second) out.push_back(i);
  }
  return out;
}

KMeansResult Degenerate(const Matrix& points,
                        const std::vector<Eigen::Index>& distinct, int k,
                        uint64_t seed) {
  const Eigen::Index dim = points.cols();
  Matrix centroids(k, dim);
  ag::RowVector mean = ag::RowVector::Zero(dim);
  for (auto i : distinct) mean += points.row(i);
  mean /= static_cast<double>(distinct.size());
  double mean_norm = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) mean_norm += points.row(i).norm();
  mean_norm /= static_cast<double>(points.rows());
  const double sigma = 1e-4 * (mean_norm > 0.0 ? mean_norm : 1.0);

  std::vector<Eigen::Index> by_distance = distinct;
  std::stable_sort(by_distance.begin(), by_distance.end(),
                   [&](Eigen::Index a, Eigen::Index b) {
                     return (points.row(a) - mean).squaredNorm() >
                            (points.row(b) - mean).squaredNorm();
                   });
  std::mt19937_64 rng(MixSeed(seed, {0xdecULL}));
  std::normal_distribution<double> noise(0.0, sigma);
  for (size_t c = 0; c < distinct.size(); ++c)
    centroids.row(static_cast<Eigen::Index>(c)) = points.row(distinct[c]);
  for (int c = static_cast<int>(distinct.size()); c < k; ++c) {
    const auto src = by_distance[(static_cast<size_t>(c) - distinct.size()) %
                                 by_distance.size()];
    centroids.row(c) = points.row(src);
    for (Eigen::Index d = 0; d < dim; ++d) centroids(c, d) += noise(rng);
  }
  KMeansResult r;
  r.centroids = std::move(centroids);
  r.assignment = NearestCentroids(points, r.centroids);
  r.wcss = Wcss(points, r.centroids, r.assignment);
  r.wcss_trace = {r.wcss};
  r.degenerate = true;
  return r;
}

Matrix PlusPlusSeeds(const Matrix& points, int k, std::mt19937_64& rng) {
  const Eigen::Index n = points.rows();
  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centroids.row(0) = points.row(first(rng));
  std::vector<double> d2(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<size_t>(i)] = SqDist(points, i, centroids, 0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[static_cast<size_t>(i)];
        if (target < 0.0 && d2[static_cast<size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      // Rounding can leave pick on a zero-weight row; step to a positive one.
      while (d2[static_cast<size_t>(pick)] <= 0.0) pick = (pick + n - 1) % n;
    } else {
      pick = first(rng);
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<size_t>(i)] =
          std::min(d2[static_cast<size_t>(i)], SqDist(points, i, centroids, c));
  }
  return centroids;
}

}  // namespace

std::vector<int> NearestCentroids(const Matrix& points,
                                  const Matrix& centroids) {
  std::vector<int> out(static_cast<size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = SqDist(points, i, centroids, c);
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    out[static_cast<size_t>(i)] = arg;
  }
  return out;
}

double Wcss(const Matrix& points, const Matrix& centroids,
            const std::vector<int>& assignment) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    s += SqDist(points, i, centroids, assignment[static_cast<size_t>(i)]);
  return s;
}

KMeansResult KMeans(const Matrix& points, int k, int iters, int restarts,
                    uint64_t seed) {
  if (points.rows() < 1) throw ContractError("kmeans: no points");
  if (k < 1) throw ContractError("kmeans: k must be >= 1");
  if (!points.allFinite()) throw NumericError("kmeans: non-finite points");
  iters = std::max(iters, 1);
  restarts = std::max(restarts, 1);
  const auto distinct = DistinctRows(points);
  if (static_cast<int>(distinct.size()) < k) {
    return Degenerate(points, distinct, k, seed);
  }
  const Eigen::Index n = points.rows();
  KMeansResult best;
  best.wcss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    std::mt19937_64 rng(MixSeed(seed, {static_cast<uint64_t>(r)}));
    Matrix centroids = PlusPlusSeeds(points, k, rng);
    std::vector<int> assign = NearestCentroids(points, centroids);
    std::vector<double> trace{Wcss(points, centroids, assign)};
    for (int it = 0; it < iters; ++it) {
      Matrix sums = Matrix::Zero(k, points.cols());
      std::vector<int> counts(static_cast<size_t>(k), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(assign[static_cast<size_t>(i)]) += points.row(i);
        ++counts[static_cast<size_t>(assign[static_cast<size_t>(i)])];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<size_t>(c)] > 0) {
          centroids.row(c) = sums.row(c) / counts[static_cast<size_t>(c)];
          continue;
        }
        // Empty cluster: move it onto the point farthest from its centroid.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = SqDist(points, i, centroids, assign[static_cast<size_t>(i)]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids.row(c) = points.row(far);
        assign[static_cast<size_t>(far)] = c;
      }
      std::vector<int> next = NearestCentroids(points, centroids);
      const bool stable = next == assign;
      assign = std::move(next);
      trace.push_back(Wcss(points, centroids, assign));
      if (stable) break;
    }
    const double w = trace.back();
    if (w < best.wcss) {
      best.centroids = std::move(centroids);
      best.assignment = std::move(assign);
      best.wcss = w;
      best.wcss_trace = std::move(trace);
    }
  }
  return best;
}

}  // namespace semindex
