#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "kale/encoder.hpp"
#include "kale/vocab.hpp"

namespace kale {

// Protocol: repeated single-query encoding (batch size 1), warmup excluded,
// monotonic clock. Queries are cycled up to num_queries per run.
struct BenchConfig {
  int num_queries = 6500;
  int runs = 5;
  int warmup_iterations = 10;
  unsigned seed = 0;

  void validate() const {
    if (num_queries < 1) throw ConfigError("bench: num_queries must be >= 1");
    if (runs < 2) throw ConfigError("bench: runs must be >= 2 for confidence intervals");
    if (warmup_iterations < 0) throw ConfigError("bench: warmup must be >= 0");
  }
};

inline constexpr std::array<const char*, 7> kBenchColumns = {
    "items/sec", "Full Time", "Mean Time", "95th", "50th", "5th", "99th"};

struct RunStats {
  // Column order mirrors kBenchColumns.
  std::array<double, 7> columns{};
  double items_per_sec() const { return columns[0]; }
  double full_time_sec() const { return columns[1]; }
  double mean_latency() const { return columns[2]; }
  double p95() const { return columns[3]; }
  double p50() const { return columns[4]; }
  double p5() const { return columns[5]; }
  double p99() const { return columns[6]; }
};

struct ColumnAggregate {
  double average = 0.0;
  double stdev = 0.0;
  double ci95 = 0.0;
  double lower = 0.0;
  double high = 0.0;
};

struct BenchReport {
  std::vector<RunStats> runs;
  // Absent (nullopt) rather than zero when only a single run exists.
  std::optional<std::array<ColumnAggregate, 7>> aggregates;

  // Tab-separated table in the appendix layout: header row, Run 1..N, then
  // average / stdev / CI / Lower / High.
  std::string to_table() const;
  // Machine-readable key=value block.
  std::string to_key_values() const;
  void save(const std::string& table_path, const std::string& kv_path) const;
};

// Nearest-rank percentile: rank = ceil(p/100 * n) on the sorted sample; the
// result is always an element of the sample.
double percentile_nearest_rank(std::vector<double> samples, double p);

// Sample stdev (n-1) and ci95 = 1.96 * stdev / sqrt(runs) per column.
std::optional<std::array<ColumnAggregate, 7>> summarize_runs(
    const std::vector<RunStats>& runs);

BenchReport run_bench(const TransformerEncoder<float>& encoder,
                      const std::vector<std::string>& queries, const Vocabulary& vocab,
                      const BenchConfig& cfg);

}  // namespace kale
