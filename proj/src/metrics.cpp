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

#include "semindex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "semindex/errors.hpp"

namespace semindex {

ContingencyTable BuildContingency(std::span<const int> a,
                                  std::span<const int> b) {
  if (a.size() != b.size()) {
    throw ValidationError("contingency: label sequences differ in length");
  }
  if (a.empty()) throw ValidationError("contingency: empty label sequences");
  std::map<int, size_t> ia, ib;
  for (int x : a) ia.emplace(x, 0);
  for (int x : b) ib.emplace(x, 0);
  size_t n = 0;
  for (auto& [k, v] : ia) v = n++;
  n = 0;
  for (auto& [k, v] : ib) v = n++;
  ContingencyTable t;
  t.counts.assign(ia.size(), std::vector<long>(ib.size(), 0));
  t.row_sums.assign(ia.size(), 0);
  t.col_sums.assign(ib.size(), 0);
  for (size_t i = 0; i < a.size(); ++i) {
    const size_t r = ia[a[i]];
    const size_t c = ib[b[i]];
    ++t.counts[r][c];
    ++t.row_sums[r];
    ++t.col_sums[c];
  }
  t.total = static_cast<long>(a.size());
  return t;
}

double Entropy(std::span<const long> counts) {
  long total = 0;
  for (long c : counts) total += c;
  if (total == 0) return 0.0;
  double h = 0.0;
  for (long c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

double MutualInformation(const ContingencyTable& t) {
  const double n = static_cast<double>(t.total);
  double mi = 0.0;
  for (size_t i = 0; i < t.counts.size(); ++i) {
    for (size_t j = 0; j < t.counts[i].size(); ++j) {
      const long nij = t.counts[i][j];
      if (nij == 0) continue;
      mi += (static_cast<double>(nij) / n) *
            std::log(n * static_cast<double>(nij) /
                     (static_cast<double>(t.row_sums[i]) *
                      static_cast<double>(t.col_sums[j])));
    }
  }
  return std::max(mi, 0.0);
}

double ExpectedMutualInformation(const ContingencyTable& t) {
  const long n = t.total;
  const double nd = static_cast<double>(n);
  const double lg_n = std::lgamma(nd + 1.0);
  double emi = 0.0;
  for (long a : t.row_sums) {
    for (long b : t.col_sums) {
      const long lo = std::max(1L, a + b - n);
      const long hi = std::min(a, b);
      // log of the hypergeometric normalizer pieces that do not depend on nij
      const double fixed = std::lgamma(a + 1.0) + std::lgamma(b + 1.0) +
                           std::lgamma(nd - a + 1.0) + std::lgamma(nd - b + 1.0) - lg_n;
      for (long nij = lo; nij <= hi; ++nij) {
        const double x = static_cast<double>(nij);
        const double log_p = fixed - std::lgamma(x + 1.0) - std::lgamma(a - x + 1.0) -
                             std::lgamma(b - x + 1.0) -
                             std::lgamma(nd - a - b + x + 1.0);
        emi += (x / nd) * std::log(nd * x / (static_cast<double>(a) * b)) * std::exp(log_p);
      }
    }
  }
  return emi;
}

double AdjustedMutualInfo(std::span<const int> a, std::span<const int> b) {
  const ContingencyTable t = BuildContingency(a, b);
  const double ha = Entropy(t.row_sums);
  const double hb = Entropy(t.col_sums);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  const double mi = MutualInformation(t);
  const double emi = ExpectedMutualInformation(t);
  const double denom = 0.5 * (ha + hb) - emi;
  const double numer = mi - emi;
  if (std::abs(denom) < 1e-15) {
    // Both partitions are the same trivial split (e.g. all singletons).
    return std::abs(numer) < 1e-12 ? 1.0 : 0.0;
  }
  return numer / denom;
}

std::vector<int> EncodeLabels(const std::vector<std::string>& labels) {
  std::unordered_map<std::string, int> ids;
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    auto [it, inserted] = ids.emplace(l, static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

double AdjustedMutualInfo(const std::vector<std::string>& a,
                          const std::vector<std::string>& b) {
  const auto ea = EncodeLabels(a);
  const auto eb = EncodeLabels(b);
  return AdjustedMutualInfo(std::span<const int>(ea), std::span<const int>(eb));
}

double IdPerplexity(std::span<const int> codes) {
  if (codes.empty()) throw ValidationError("perplexity: no codes");
  std::map<int, long> counts;
  for (int c : codes) ++counts[c];
  std::vector<long> v;
  for (auto& [k, c] : counts) v.push_back(c);
  return std::exp(Entropy(v));
}

std::optional<double> DiffRatio(const std::vector<std::vector<int>>& ids,
                                int position) {
  if (position < 2) throw ValidationError("diff ratio: position must be >= 2");
  const size_t t = static_cast<size_t>(position);
  std::map<std::vector<int>, std::map<int, long>> groups;
  for (const auto& id : ids) {
    if (id.size() < t) throw ValidationError("diff ratio: ID shorter than position");
    std::vector<int> prefix(id.begin(), id.begin() + static_cast<long>(t - 1));
    ++groups[std::move(prefix)][id[t - 1]];
  }
  double pairs = 0.0, same = 0.0;
  for (const auto& [prefix, by_code] : groups) {
    long g = 0;
    for (const auto& [c, m] : by_code) {
      g += m;
      same += 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
    }
    pairs += 0.5 * static_cast<double>(g) * static_cast<double>(g - 1);
  }
  if (pairs == 0.0) return std::nullopt;
  return (pairs - same) / pairs;
}

double MacroF1(const std::vector<std::set<int>>& predicted,
               const std::vector<std::set<int>>& truth) {
  if (predicted.size() != truth.size()) {
    throw ValidationError("macro F1: batch sizes differ");
  }
  struct Counts { long tp = 0, fp = 0, fn = 0; };
  std::map<int, Counts> per_token;
  for (size_t d = 0; d < predicted.size(); ++d) {
    for (int w : predicted[d]) {
      if (truth[d].count(w)) ++per_token[w].tp; else ++per_token[w].fp;
    }
    for (int w : truth[d])
      if (!predicted[d].count(w)) ++per_token[w].fn;
  }
  if (per_token.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& [w, c] : per_token) {
    sum += 2.0 * static_cast<double>(c.tp) /
           static_cast<double>(2 * c.tp + c.fp + c.fn);
  }
  return sum / static_cast<double>(per_token.size());
}

namespace {

template <typename PerQuery>
RankingMetric Average(std::span<const RankedList> runs, int k, PerQuery f) {
  if (k < 1) throw ValidationError("ranking metric: k must be >= 1");
  RankingMetric m;
  double sum = 0.0;
  for (const auto& run : runs) {
    std::set<std::string> uniq(run.doc_ids.begin(), run.doc_ids.end());
    if (uniq.size() != run.doc_ids.size()) {
      throw ValidationError("ranked list for query '" + run.query_id +
                            "' contains duplicate doc_ids");
    }
    if (run.relevant.empty()) {
      ++m.skipped;
      continue;
    }
    ++m.evaluated;
    const size_t cut = std::min(run.doc_ids.size(), static_cast<size_t>(k));
    sum += f(run, cut);
  }
  m.value = m.evaluated > 0 ? sum / m.evaluated : 0.0;
  return m;
}

}  // namespace

RankingMetric RecallAtK(std::span<const RankedList> runs, int k) {
  return Average(runs, k, [](const RankedList& r, size_t cut) {
    long hit = 0;
    for (size_t i = 0; i < cut; ++i) hit += r.relevant.count(r.doc_ids[i]);
    return static_cast<double>(hit) / static_cast<double>(r.relevant.size());
  });
}

RankingMetric NdcgAtK(std::span<const RankedList> runs, int k) {
  return Average(runs, k, [k](const RankedList& r, size_t cut) {
    double dcg = 0.0;
    for (size_t i = 0; i < cut; ++i)
      if (r.relevant.count(r.doc_ids[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    double ideal = 0.0;
    const size_t n_ideal = std::min(r.relevant.size(), static_cast<size_t>(k));
    for (size_t i = 0; i < n_ideal; ++i) ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / ideal;
  });
}

RankingMetric MrrAtK(std::span<const RankedList> runs, int k) {
  return Average(runs, k, [](const RankedList& r, size_t cut) {
    for (size_t i = 0; i < cut; ++i)
      if (r.relevant.count(r.doc_ids[i])) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
  });
}

}  // namespace semindex
