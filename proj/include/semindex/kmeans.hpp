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

#ifndef SEMINDEX_KMEANS_HPP_
#define SEMINDEX_KMEANS_HPP_

#include <cstdint>
#include <vector>

#include "semindex/autograd.hpp"

namespace semindex {

struct KMeansResult {
  ag::Matrix centroids;             // k x D
  std::vector<int> assignment;      // nearest centroid per point
  double wcss = 0.0;                // within-cluster sum of squares
  std::vector<double> wcss_trace;   // after every assignment step, best run
  bool degenerate = false;          // fewer distinct points than k
};

// k-means++ seeding followed by Lloyd iterations; the restart with the
// lowest WCSS wins. When the points hold fewer than k distinct rows, the
// distinct rows are kept and the remaining centroids are copies of the rows
// farthest from their mean, perturbed by N(0, (1e-4 * mean norm)^2).
KMeansResult KMeans(const ag::Matrix& points, int k, int iters, int restarts,
                    uint64_t seed);

// Assignment of each row to its nearest centroid (ties to the lowest index).
std::vector<int> NearestCentroids(const ag::Matrix& points,
                                  const ag::Matrix& centroids);

double Wcss(const ag::Matrix& points, const ag::Matrix& centroids,
            const std::vector<int>& assignment);

}  // namespace semindex

#endif  // SEMINDEX_KMEANS_HPP_
