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

// Pure evaluation functions: clustering agreement, ID diversity,
// reconstruction quality and binary-relevance ranking metrics.

#ifndef SEMINDEX_METRICS_HPP_
#define SEMINDEX_METRICS_HPP_

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace semindex {

struct ContingencyTable {
  std::vector<std::vector<long>> counts;  // rows: labels of a, cols: b
  std::vector<long> row_sums;
  std::vector<long> col_sums;
  long total = 0;
};

ContingencyTable BuildContingency(std::span<const int> a,
                                  std::span<const int> b);

// Mutual information (natural log) of a contingency table.
double MutualInformation(const ContingencyTable& t);
// Expected MI under the hypergeometric model of random labelings with the
// table's marginals.
double ExpectedMutualInformation(const ContingencyTable& t);
double Entropy(std::span<const long> counts);

// Adjusted mutual information, arithmetic-mean normalizer.
double AdjustedMutualInfo(std::span<const int> a, std::span<const int> b);
double AdjustedMutualInfo(const std::vector<std::string>& a,
                          const std::vector<std::string>& b);

// Maps labels to dense integers in order of first appearance.
std::vector<int> EncodeLabels(const std::vector<std::string>& labels);

// exp(Shannon entropy) of the empirical code distribution.
double IdPerplexity(std::span<const int> codes);

// Among unordered document pairs that agree on positions 1..t-1, the share
// that differ at position t (1-based). nullopt when no pair shares a prefix.
std::optional<double> DiffRatio(const std::vector<std::vector<int>>& ids,
                                int position);

// Per-token F1 over a batch (presence in predicted vs true set per
// document), macro-averaged over tokens present in either set anywhere.
double MacroF1(const std::vector<std::set<int>>& predicted,
               const std::vector<std::set<int>>& truth);

struct RankedList {
  std::string query_id;
  std::vector<std::string> doc_ids;   // rank order, no duplicates
  std::set<std::string> relevant;
};

struct RankingMetric {
  double value = 0.0;
  int evaluated = 0;  // queries with at least one relevant document
  int skipped = 0;    // queries with none (excluded from the mean)
};

RankingMetric RecallAtK(std::span<const RankedList> runs, int k);
RankingMetric NdcgAtK(std::span<const RankedList> runs, int k);
RankingMetric MrrAtK(std::span<const RankedList> runs, int k);

}  // namespace semindex

#endif  // SEMINDEX_METRICS_HPP_
