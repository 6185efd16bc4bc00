#pragma once

#include <array>
#include <string>
#include <vector>

#include "kale/error.hpp"

namespace kale {

// A numeric cell as printed in a published table. half_ulp is half the last
// printed decimal place; recomputed columns are compared after discounting
// the rounding the publication applied.
struct PrintedValue {
  std::string text;
  double value = 0.0;
  double half_ulp = 0.0;
};

PrintedValue parse_printed(const std::string& text);

struct ThroughputTable {
  struct Row {
    std::string layers;
    PrintedValue size, compressed_size, qps, speedup;
    std::string method;
  };
  std::vector<Row> rows;
};

struct ImpactTable {
  struct Row {
    std::string layers;
    // top20, impact20, top100, impact100, top200, impact200
    std::array<PrintedValue, 6> cells;
  };
  std::vector<Row> rows;  // first row is the uncompressed baseline
};

struct LatencyTable {
  std::string name;
  std::vector<std::pair<std::string, std::array<PrintedValue, 7>>> rows;

  const std::array<PrintedValue, 7>& row(const std::string& label) const;
};

ThroughputTable load_throughput_table(const std::string& path);
ImpactTable load_impact_table(const std::string& path);
LatencyTable load_latency_table(const std::string& path);

struct TableCheck {
  std::string table;
  std::string column;   // which derived column was recomputed
  int entries = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Recomputes every derived column of the bundled tables: throughput
// speedups (+-0.01), pruning impacts (+-0.02 points, plus depth
// monotonicity), and latency CI rows (1.96*stdev/sqrt(5), +-0.002 beyond
// print rounding).
std::vector<TableCheck> verify_reference_tables(const std::string& dir);

std::string format_table_checks(const std::vector<TableCheck>& checks);

}  // namespace kale
