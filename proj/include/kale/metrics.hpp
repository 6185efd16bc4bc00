#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "kale/error.hpp"

namespace kale {

// Ground truth: query id -> nonempty set of relevant doc ids.
struct Qrels {
  std::map<std::string, std::set<std::string>> relevant;

  const std::set<std::string>& for_query(const std::string& query_id) const {
    auto it = relevant.find(query_id);
    if (it == relevant.end())
      throw InputError("no relevance judgments for query '" + query_id + "'");
    if (it->second.empty())
      throw InputError("empty relevance set for query '" + query_id + "'");
    return it->second;
  }
};

// Per-query rankings, best first.
using Rankings = std::map<std::string, std::vector<std::string>>;

// Hit-rate convention: fraction of queries with at least one relevant
// document in the top `depth`.
double retrieval_accuracy(const Rankings& results, const Qrels& qrels, int depth);

// Graded variant: mean fraction of each query's relevant set found in the
// top `depth` (the "recall 10"-style column).
double recall_fraction(const Rankings& results, const Qrels& qrels, int depth);

// MRR@10 and NDCG@10 (binary gains, discount 1/log2(rank+1), ideal ranking
// puts all relevant documents first).
struct RankingMetrics {
  double mrr_at_10 = 0.0;
  double ndcg_at_10 = 0.0;
};
RankingMetrics ranking_metrics(const Rankings& results, const Qrels& qrels);

// (value - baseline) / baseline * 100.
double relative_impact(double value, double baseline);

// qps / baseline_qps.
double speedup(double qps, double baseline_qps);

// Closed-form baselines for a random ranking over `corpus` docs with
// `relevant` relevant ones.
double hypergeometric_hit_rate(int corpus, int relevant, int depth);
double random_recall_fraction(int corpus, int depth);

struct EvalReport {
  std::vector<std::pair<int, double>> accuracy;  // (depth, hit rate), ascending depth
  double mrr_at_10 = 0.0;
  double ndcg_at_10 = 0.0;
  std::string baseline_name;                    // empty when no baseline attached
  std::vector<std::pair<int, double>> impact;   // percent vs the named baseline

  double accuracy_at(int depth) const;
  void save(const std::string& path) const;
  static EvalReport load(const std::string& path);
};

EvalReport evaluate(const Rankings& results, const Qrels& qrels,
                    const std::vector<int>& depths = {20, 100, 200});

// Copies `report` and fills the impact columns against `baseline`.
EvalReport with_impacts(const EvalReport& report, const EvalReport& baseline,
                        const std::string& baseline_name);

// Qrels file: "query_id TAB doc_id" per line.
void save_qrels(const Qrels& qrels, const std::string& path);
Qrels load_qrels(const std::string& path);

}  // namespace kale
