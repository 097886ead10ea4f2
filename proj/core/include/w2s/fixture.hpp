#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "w2s/metrics.hpp"

namespace w2s {

struct FixtureAccuracy {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Accuracy rows of one reference block. `cells` follow the source-major
/// layout: for source i, columns 3i..3i+2 are evals[i][0..2], and evals[i][0]
/// is the source itself.
struct AccuracyRow {
  std::string role;  // weak, ceiling, naive, conf, seam, anchor
  std::array<FixtureAccuracy, 9> cells;
};

/// Reference metric row. For source i, cells 6i..6i+5 are PGR, WRG,
/// AOG(evals[i][1]), NTS(evals[i][1]), AOG(evals[i][2]), NTS(evals[i][2]).
struct MetricRow {
  std::string method;
  std::array<std::string, 18> cells;
};

struct FixtureBlock {
  std::string family;
  std::string category;
  std::array<std::string, 3> sources;
  std::array<std::array<std::string, 3>, 3> evals;
  std::vector<AccuracyRow> accuracy;
  std::vector<MetricRow> metrics;

  /// Throws ContractError for an unknown role or domain pair.
  double mean(const std::string& role, const std::string& source, const std::string& eval) const;
  double& mean_ref(const std::string& role, const std::string& source, const std::string& eval);
  /// Means as an accuracy matrix, one replicate per cell.
  AccuracyMatrix matrix() const;
};

struct DatasetCounts {
  std::string name;
  std::string category;
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
  std::size_t weak = 0;
  std::size_t w2s = 0;
  /// The dataset ships its own validation split.
  bool provided_validation = false;
};

struct ReferenceFixture {
  std::vector<FixtureBlock> blocks;
  std::vector<DatasetCounts> datasets;

  const FixtureBlock& block(const std::string& family, const std::string& category) const;
  FixtureBlock& block(const std::string& family, const std::string& category);
};

/// The embedded reference tables. Read-only.
const ReferenceFixture& reference_fixture();
/// FNV-1a over a canonical rendering of every number and label.
std::uint64_t fixture_checksum(const ReferenceFixture& fixture);
/// Checksum of the embedded tables as shipped.
extern const std::uint64_t kReferenceFixtureChecksum;

struct AccuracyKey {
  std::string role;
  std::string source;
  std::string eval;
  bool operator==(const AccuracyKey&) const = default;
};

struct CellCheck {
  std::string family;
  std::string category;
  std::string method;
  std::string source;
  std::string target;  // empty for PGR and WRG
  std::string metric;  // PGR, WRG, AOG, NTS
  std::string display;
  double reported = 0.0;
  double recomputed = 0.0;
  /// Acceptance interval for the recomputed side.
  double lower = 0.0;
  double upper = 0.0;
  bool abbreviated = false;
  bool pass = false;
  /// Accuracies this cell is a function of.
  std::vector<AccuracyKey> inputs;

  double delta() const { return recomputed - reported; }
  std::string id() const;
};

struct SplitCheck {
  DatasetCounts expected;
  DatasetCounts derived;
  bool pass = false;
};

struct VerifyOptions {
  /// Absolute tolerance on plain numeric cells.
  double tolerance = 0.02;
  /// Relative tolerance on "k"-abbreviated cells.
  double k_tolerance = 0.10;
  /// PGR cells also pass when the printed value is reachable from accuracies
  /// within their two-decimal rounding interval.
  bool rounding_interval = true;

  /// Everything exact: no tolerance and no rounding interval.
  static VerifyOptions exact() { return {0.0, 0.0, false}; }
};

struct VerifyReport {
  std::vector<CellCheck> cells;
  std::vector<SplitCheck> splits;
  std::uint64_t checksum = 0;
  bool checksum_ok = false;

  std::size_t failed_cells() const;
  std::size_t failed_splits() const;
  bool passed() const { return checksum_ok && failed_cells() == 0 && failed_splits() == 0; }
  /// One line per cell and per dataset followed by a summary.
  std::string text(bool failures_only = false) const;
};

/// Parses a printed cell such as "-3.1", "1k" or "2.7k". Sets `abbreviated`
/// for the k form. Throws DataError on anything else.
double parse_table_value(const std::string& s, bool& abbreviated);

/// Recomputes every reference metric cell from the accuracy means and
/// re-derives the split counts.
VerifyReport verify_fixture(const ReferenceFixture& fixture, const VerifyOptions& options = {});

}  // namespace w2s
