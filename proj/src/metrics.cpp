#include "kale/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace kale {

double retrieval_accuracy(const Rankings& results, const Qrels& qrels, int depth) {
  if (depth < 1) throw ParameterError("retrieval_accuracy: depth must be >= 1");
  if (results.empty()) throw InputError("retrieval_accuracy: no results");
  int hits = 0;
  for (const auto& [qid, ranking] : results) {
    const auto& rel = qrels.for_query(qid);
    const int limit = std::min<int>(depth, static_cast<int>(ranking.size()));
    for (int i = 0; i < limit; ++i) {
      if (rel.count(ranking[static_cast<std::size_t>(i)])) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double recall_fraction(const Rankings& results, const Qrels& qrels, int depth) {
  if (depth < 1) throw ParameterError("recall_fraction: depth must be >= 1");
  if (results.empty()) throw InputError("recall_fraction: no results");
  double total = 0.0;
  for (const auto& [qid, ranking] : results) {
    const auto& rel = qrels.for_query(qid);
    const int limit = std::min<int>(depth, static_cast<int>(ranking.size()));
    int found = 0;
    for (int i = 0; i < limit; ++i)
      if (rel.count(ranking[static_cast<std::size_t>(i)])) ++found;
    total += static_cast<double>(found) / static_cast<double>(rel.size());
  }
  return total / static_cast<double>(results.size());
}

RankingMetrics ranking_metrics(const Rankings& results, const Qrels& qrels) {
  if (results.empty()) throw InputError("ranking_metrics: no results");
  double mrr = 0.0, ndcg = 0.0;
  for (const auto& [qid, ranking] : results) {
    const auto& rel = qrels.for_query(qid);
    const int limit = std::min<int>(10, static_cast<int>(ranking.size()));
    double dcg = 0.0;
    bool first_found = false;
    for (int i = 0; i < limit; ++i) {
      if (!rel.count(ranking[static_cast<std::size_t>(i)])) continue;
      if (!first_found) {
        mrr += 1.0 / static_cast<double>(i + 1);
        first_found = true;
      }
      dcg += 1.0 / std::log2(static_cast<double>(i + 2));
    }
    double idcg = 0.0;
    const int ideal = std::min<int>(10, static_cast<int>(rel.size()));
    for (int i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
    ndcg += dcg / idcg;
  }
  const double n = static_cast<double>(results.size());
  return {mrr / n, ndcg / n};
}

double relative_impact(double value, double baseline) {
  if (!(baseline > 0.0))
    throw ParameterError("relative_impact: baseline must be positive");
  return (value - baseline) / baseline * 100.0;
}

double speedup(double qps, double baseline_qps) {
  if (!(baseline_qps > 0.0)) throw ParameterError("speedup: baseline must be positive");
  return qps / baseline_qps;
}

double hypergeometric_hit_rate(int corpus, int relevant, int depth) {
  if (corpus < 1 || relevant < 0 || relevant > corpus || depth < 1)
    throw ParameterError("hypergeometric_hit_rate: bad arguments");
  if (depth >= corpus) return relevant > 0 ? 1.0 : 0.0;
  double miss = 1.0;
  for (int i = 0; i < depth; ++i)
    miss *= static_cast<double>(corpus - relevant - i) / static_cast<double>(corpus - i);
  return 1.0 - miss;
}

double random_recall_fraction(int corpus, int depth) {
  if (corpus < 1 || depth < 1)
    throw ParameterError("random_recall_fraction: bad arguments");
  return std::min(1.0, static_cast<double>(depth) / static_cast<double>(corpus));
}

double EvalReport::accuracy_at(int depth) const {
  for (const auto& [d, v] : accuracy)
    if (d == depth) return v;
  throw InputError("eval report has no accuracy at depth " + std::to_string(depth));
}

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void EvalReport::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write eval report " + path);
  for (const auto& [d, v] : accuracy) out << "accuracy." << d << '=' << fmt6(v) << '\n';
  out << "mrr_at_10=" << fmt6(mrr_at_10) << '\n';
  out << "ndcg_at_10=" << fmt6(ndcg_at_10) << '\n';
  if (!baseline_name.empty()) {
    out << "baseline=" << baseline_name << '\n';
    for (const auto& [d, v] : impact) out << "impact." << d << '=' << fmt6(v) << '\n';
  }
}

EvalReport EvalReport::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open eval report " + path);
  EvalReport r;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("malformed report line " + std::to_string(lineno) + " in " + path);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key.rfind("accuracy.", 0) == 0)
      r.accuracy.emplace_back(std::stoi(key.substr(9)), std::stod(val));
    else if (key == "mrr_at_10")
      r.mrr_at_10 = std::stod(val);
    else if (key == "ndcg_at_10")
      r.ndcg_at_10 = std::stod(val);
    else if (key == "baseline")
      r.baseline_name = val;
    else if (key.rfind("impact.", 0) == 0)
      r.impact.emplace_back(std::stoi(key.substr(7)), std::stod(val));
    else
      throw ParseError("unknown report key '" + key + "' at line " +
                       std::to_string(lineno) + " in " + path);
  }
  return r;
}

EvalReport evaluate(const Rankings& results, const Qrels& qrels,
                    const std::vector<int>& depths) {
  EvalReport r;
  std::vector<int> sorted = depths;
  std::sort(sorted.begin(), sorted.end());
  for (int d : sorted) r.accuracy.emplace_back(d, retrieval_accuracy(results, qrels, d));
  const RankingMetrics rm = ranking_metrics(results, qrels);
  r.mrr_at_10 = rm.mrr_at_10;
  r.ndcg_at_10 = rm.ndcg_at_10;
  return r;
}

EvalReport with_impacts(const EvalReport& report, const EvalReport& baseline,
                        const std::string& baseline_name) {
  EvalReport out = report;
  out.baseline_name = baseline_name;
  out.impact.clear();
  for (const auto& [d, v] : report.accuracy)
    out.impact.emplace_back(d, relative_impact(v, baseline.accuracy_at(d)));
  return out;
}

void save_qrels(const Qrels& qrels, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write qrels " + path);
  for (const auto& [qid, docs] : qrels.relevant)
    for (const auto& d : docs) out << qid << '\t' << d << '\n';
}

Qrels load_qrels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open qrels " + path);
  Qrels q;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("malformed qrels line " + std::to_string(lineno) + " in " + path);
    q.relevant[line.substr(0, tab)].insert(line.substr(tab + 1));
  }
  return q;
}

}  // namespace kale
