#include "kale/reference_tables.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kale/metrics.hpp"

namespace kale {

PrintedValue parse_printed(const std::string& text) {
  PrintedValue pv;
  pv.text = text;
  std::size_t pos = 0;
  try {
    pv.value = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + text + "'");
  }
  if (pos != text.size()) throw ParseError("trailing characters in number '" + text + "'");

  // Half of the last printed decimal place, honoring E notation.
  int exp10 = 0;
  std::string mantissa = text;
  const auto e = text.find_first_of("eE");
  if (e != std::string::npos) {
    exp10 = std::stoi(text.substr(e + 1));
    mantissa = text.substr(0, e);
  }
  const auto dot = mantissa.find('.');
  const int decimals = dot == std::string::npos
                           ? 0
                           : static_cast<int>(mantissa.size() - dot - 1);
  pv.half_ulp = 0.5 * std::pow(10.0, exp10 - decimals);
  return pv;
}

namespace {

std::vector<std::vector<std::string>> read_tsv(const std::string& path,
                                               std::size_t expected_cols) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open table " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cells.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cells.size() != expected_cols)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(expected_cols) + " columns, got " +
                       std::to_string(cells.size()));
    if (!header_seen) {
      header_seen = true;  // column-name row
      continue;
    }
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw ParseError("table " + path + " has no data rows");
  return rows;
}

}  // namespace

ThroughputTable load_throughput_table(const std::string& path) {
  ThroughputTable t;
  for (auto& cells : read_tsv(path, 6)) {
    ThroughputTable::Row row;
    row.layers = cells[0];
    row.size = parse_printed(cells[1]);
    row.compressed_size = parse_printed(cells[2]);
    row.method = cells[3];
    row.qps = parse_printed(cells[4]);
    row.speedup = parse_printed(cells[5]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

ImpactTable load_impact_table(const std::string& path) {
  ImpactTable t;
  for (auto& cells : read_tsv(path, 7)) {
    ImpactTable::Row row;
    row.layers = cells[0];
    for (std::size_t i = 0; i < 6; ++i) row.cells[i] = parse_printed(cells[i + 1]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

LatencyTable load_latency_table(const std::string& path) {
  LatencyTable t;
  t.name = path;
  for (auto& cells : read_tsv(path, 8)) {
    std::array<PrintedValue, 7> vals;
    for (std::size_t i = 0; i < 7; ++i) vals[i] = parse_printed(cells[i + 1]);
    t.rows.emplace_back(cells[0], vals);
  }
  return t;
}

const std::array<PrintedValue, 7>& LatencyTable::row(const std::string& label) const {
  for (const auto& [name, vals] : rows)
    if (name == label) return vals;
  throw ParseError("latency table " + name + " is missing row '" + label + "'");
}

std::vector<TableCheck> verify_reference_tables(const std::string& dir) {
  std::vector<TableCheck> checks;

  {
    const auto table = load_throughput_table(dir + "/throughput.tsv");
    TableCheck c{"throughput", "speedup", 0, 0.0, 0.01, false};
    for (const auto& row : table.rows) {
      // Baseline: the 12-layer row of the same serving method.
      const ThroughputTable::Row* base = nullptr;
      for (const auto& r : table.rows)
        if (r.method == row.method && r.layers == "12") base = &r;
      if (!base)
        throw ParseError("throughput table lacks a 12-layer row for method " + row.method);
      const double recomputed = speedup(row.qps.value, base->qps.value);
      c.max_deviation = std::max(c.max_deviation,
                                 std::abs(recomputed - row.speedup.value));
      ++c.entries;
    }
    c.pass = c.max_deviation <= c.tolerance;
    checks.push_back(c);
  }

  {
    const auto table = load_impact_table(dir + "/pruning_symmetric.tsv");
    const auto& base = table.rows.at(0);
    TableCheck c{"pruning_symmetric", "impact", 0, 0.0, 0.02, false};
    TableCheck mono{"pruning_symmetric", "depth_monotonicity", 0, 0.0, 0.0, true};
    for (const auto& row : table.rows) {
      for (int d = 0; d < 3; ++d) {
        const double recomputed =
            relative_impact(row.cells[2 * d].value, base.cells[2 * d].value);
        c.max_deviation = std::max(
            c.max_deviation, std::abs(recomputed - row.cells[2 * d + 1].value));
        ++c.entries;
      }
      // Accuracy must be nondecreasing in retrieval depth.
      const bool ordered = row.cells[0].value <= row.cells[2].value &&
                           row.cells[2].value <= row.cells[4].value;
      if (!ordered) mono.pass = false;
      ++mono.entries;
    }
    c.pass = c.max_deviation <= c.tolerance;
    checks.push_back(c);
    checks.push_back(mono);
  }

  const double ci_factor = 1.96 / std::sqrt(5.0);
  for (const char* method : {"cpu", "gpu"}) {
    for (const char* layers : {"12", "9", "6", "3", "2", "1"}) {
      const std::string stem =
          std::string("latency_") + method + "_" + layers;
      const auto table = load_latency_table(dir + "/" + stem + ".tsv");
      const auto& stdev = table.row("stdev");
      const auto& ci = table.row("CI");
      TableCheck c{stem, "ci", 0, 0.0, 0.002, false};
      for (std::size_t col = 0; col < 7; ++col) {
        const double recomputed = ci_factor * stdev[col].value;
        // Discount the publication's print rounding: the stdev it used had
        // more digits than the table shows.
        const double rounding_slack =
            ci[col].half_ulp + ci_factor * stdev[col].half_ulp;
        const double beyond =
            std::max(0.0, std::abs(recomputed - ci[col].value) - rounding_slack);
        c.max_deviation = std::max(c.max_deviation, beyond);
        ++c.entries;
      }
      c.pass = c.max_deviation <= c.tolerance;
      checks.push_back(c);
    }
  }
  return checks;
}

std::string format_table_checks(const std::vector<TableCheck>& checks) {
  std::ostringstream os;
  os << "table\tcolumn\tentries\tmax_deviation\ttolerance\tstatus\n";
  for (const auto& c : checks) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", c.max_deviation);
    os << c.table << '\t' << c.column << '\t' << c.entries << '\t' << buf << '\t'
       << c.tolerance << '\t' << (c.pass ? "ok" : "FAIL") << '\n';
  }
  return os.str();
}

}  // namespace kale
