#include "kale/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <cctype>
#include <sstream>

namespace kale {

double percentile_nearest_rank(std::vector<double> samples, double p) {
  if (samples.empty()) throw ParameterError("percentile of empty sample");
  if (p <= 0.0 || p > 100.0) throw ParameterError("percentile p must be in (0,100]");
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  rank = std::max<std::size_t>(rank, 1);
  return samples[rank - 1];
}

std::optional<std::array<ColumnAggregate, 7>> summarize_runs(
    const std::vector<RunStats>& runs) {
  if (runs.size() < 2) return std::nullopt;
  std::array<ColumnAggregate, 7> agg{};
  const double n = static_cast<double>(runs.size());
  for (std::size_t c = 0; c < 7; ++c) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r.columns[c];
    mean /= n;
    double ss = 0.0;
    for (const auto& r : runs) ss += (r.columns[c] - mean) * (r.columns[c] - mean);
    const double stdev = std::sqrt(ss / (n - 1.0));
    const double ci = 1.96 * stdev / std::sqrt(n);
    agg[c] = {mean, stdev, ci, mean - ci, mean + ci};
  }
  return agg;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string BenchReport::to_table() const {
  std::ostringstream os;
  for (const char* col : kBenchColumns) os << '\t' << col;
  os << '\n';
  for (std::size_t i = 0; i < runs.size(); ++i) {
    os << "Run " << i + 1;
    for (double v : runs[i].columns) os << '\t' << fmt(v);
    os << '\n';
  }
  if (aggregates) {
    const auto& a = *aggregates;
    const std::array<const char*, 5> labels = {"average", "stdev", "CI", "Lower", "High"};
    for (std::size_t row = 0; row < labels.size(); ++row) {
      os << labels[row];
      for (std::size_t c = 0; c < 7; ++c) {
        const double v = row == 0   ? a[c].average
                         : row == 1 ? a[c].stdev
                         : row == 2 ? a[c].ci95
                         : row == 3 ? a[c].lower
                                    : a[c].high;
        os << '\t' << fmt(v);
      }
      os << '\n';
    }
  }
  return os.str();
}

std::string BenchReport::to_key_values() const {
  std::ostringstream os;
  auto key = [](const char* col) {
    std::string k = col;
    for (auto& ch : k) {
      if (ch == '/' || ch == ' ') ch = '_';
      ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return k;
  };
  os << "runs=" << runs.size() << '\n';
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t c = 0; c < 7; ++c)
      os << "run." << i + 1 << '.' << key(kBenchColumns[c]) << '='
         << fmt(runs[i].columns[c]) << '\n';
  if (aggregates) {
    const auto& a = *aggregates;
    for (std::size_t c = 0; c < 7; ++c) {
      const std::string k = key(kBenchColumns[c]);
      os << "average." << k << '=' << fmt(a[c].average) << '\n';
      os << "stdev." << k << '=' << fmt(a[c].stdev) << '\n';
      os << "ci." << k << '=' << fmt(a[c].ci95) << '\n';
      os << "lower." << k << '=' << fmt(a[c].lower) << '\n';
      os << "high." << k << '=' << fmt(a[c].high) << '\n';
    }
  }
  return os.str();
}

void BenchReport::save(const std::string& table_path, const std::string& kv_path) const {
  std::ofstream t(table_path, std::ios::binary);
  if (!t) throw InputError("cannot write bench table " + table_path);
  t << to_table();
  std::ofstream k(kv_path, std::ios::binary);
  if (!k) throw InputError("cannot write bench key-values " + kv_path);
  k << to_key_values();
}

BenchReport run_bench(const TransformerEncoder<float>& encoder,
                      const std::vector<std::string>& queries, const Vocabulary& vocab,
                      const BenchConfig& cfg) {
  cfg.validate();
  if (queries.empty()) throw InputError("run_bench: no queries");
  if (encoder.mode() != Mode::eval)
    throw ParameterError("run_bench: encoder must be in eval mode");
  using clock = std::chrono::steady_clock;
  // Probe the observed clock granularity; latencies below it are noise.
  {
    double min_step = 1.0;
    for (int probe = 0; probe < 64; ++probe) {
      const auto t0 = clock::now();
      auto t1 = clock::now();
      while (t1 == t0) t1 = clock::now();
      min_step = std::min(min_step, std::chrono::duration<double>(t1 - t0).count());
    }
    if (min_step > 1e-6)
      throw NumericError(
          "bench harness: monotonic clock resolution is coarser than 1us; "
          "time larger query batches instead of single queries");
  }

  const int max_len = encoder.config().max_seq_len;
  std::vector<Tokenized> tokenized(static_cast<std::size_t>(cfg.num_queries));
  for (int i = 0; i < cfg.num_queries; ++i)
    tokenized[static_cast<std::size_t>(i)] =
        tokenize(queries[static_cast<std::size_t>(i) % queries.size()], vocab, max_len);

  NoGradGuard ng;
  BenchReport report;
  std::vector<double> latencies(static_cast<std::size_t>(cfg.num_queries));
  for (int run = 0; run < cfg.runs; ++run) {
    for (int w = 0; w < cfg.warmup_iterations; ++w)
      encoder.encode(tokenized[static_cast<std::size_t>(w) % tokenized.size()]);
    const auto run_start = clock::now();
    for (int i = 0; i < cfg.num_queries; ++i) {
      const auto t0 = clock::now();
      encoder.encode(tokenized[static_cast<std::size_t>(i)]);
      const auto t1 = clock::now();
      latencies[static_cast<std::size_t>(i)] =
          std::chrono::duration<double>(t1 - t0).count();
    }
    const double full_time = std::chrono::duration<double>(clock::now() - run_start).count();
    double mean = 0.0;
    for (double v : latencies) mean += v;
    mean /= static_cast<double>(latencies.size());
    RunStats stats;
    stats.columns = {static_cast<double>(cfg.num_queries) / full_time,
                     full_time,
                     mean,
                     percentile_nearest_rank(latencies, 95),
                     percentile_nearest_rank(latencies, 50),
                     percentile_nearest_rank(latencies, 5),
                     percentile_nearest_rank(latencies, 99)};
    report.runs.push_back(stats);
  }
  report.aggregates = summarize_runs(report.runs);
  return report;
}

}  // namespace kale
