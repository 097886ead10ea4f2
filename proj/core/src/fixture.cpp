#include "w2s/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "w2s/error.hpp"
#include "w2s/io.hpp"
#include "w2s/preference_data.hpp"

namespace w2s {

namespace {

// Reference accuracy means and stds per block, then the printed metric cells.
// Helpful: H3 = HelpSteer3, AH = Anthropic Helpful, UF = UltraFeedback.
// Harmless: AHar = Anthropic Harmless, PKU = PKU-SafeRLHF, RAIL.
ReferenceFixture build_fixture() {
  ReferenceFixture f;
  f.blocks = {
    {"Llama", "Helpful", {"H3", "AH", "UF"},
     {{{"H3", "AH", "UF"}, {"AH", "H3", "UF"}, {"UF", "H3", "AH"}}},
     {
      {"weak", {{{74.03, 0.77}, {52.96, 0.59}, {63.89, 0.23}, {69.47, 0.51}, {64.26, 0.23}, {65.51, 0.72}, {74.94, 0.49}, {64.48, 0.72}, {62.14, 0.72}}}},
      {"ceiling", {{{79.34, 0.37}, {60.98, 0.77}, {73.5, 0.4}, {72.64, 0.59}, {67.76, 0.72}, {71.47, 0.66}, {77.31, 0.26}, {71.26, 0.64}, {64.67, 0.77}}}},
      {"naive", {{{75.74, 0.72}, {54.42, 0.4}, {68.69, 0.71}, {72.6, 0.69}, {68.85, 0.72}, {70.49, 0.77}, {76.68, 0.28}, {70.27, 0.31}, {62.74, 0.77}}}},
      {"conf", {{{71.91, 0.72}, {61.02, 0.24}, {71.53, 0.45}, {71.7, 0.19}, {68.09, 0.77}, {70.25, 0.72}, {75.93, 0.21}, {67.87, 0.72}, {62.39, 0.72}}}},
      {"seam", {{{58.36, 0.77}, {62.91, 0.7}, {70.14, 0.5}, {56.43, 0.77}, {58.25, 0.77}, {65.05, 0.59}, {68.29, 0.76}, {58.8, 0.72}, {62.31, 0.75}}}},
      {"anchor", {{{77.6, 0.38}, {61.15, 0.52}, {71.82, 0.43}, {72.86, 0.47}, {66.34, 0.77}, {71.12, 0.72}, {77.84, 0.29}, {70.49, 0.58}, {66.55, 0.72}}}}},
     {
      {"naive", {"32.23", "1.71", "1.46", "1.46", "4.8", "4.8", "98.7", "3.13", "4.59", "4.59", "4.98", "4.98", "73.4", "1.74", "5.79", "5.79", "0.6", "0.6"}},
      {"conf", {"-39.9", "-2.12", "8.06", "5.94", "7.64", "5.52", "70.3", "2.23", "3.83", "3.83", "4.74", "4.74", "41.8", "0.99", "3.39", "3.39", "0.25", "0.25"}},
      {"seam", {"-295.1", "-15.67", "9.95", "-5.72", "6.25", "-9.42", "-411.4", "-13.04", "-6.01", "-19.05", "-0.46", "-13.5", "-280.6", "-6.65", "-5.68", "-12.33", "0.17", "-6.48"}},
      {"anchor", {"67.2", "3.57", "8.19", "8.19", "7.93", "7.93", "106.9", "3.39", "2.08", "2.08", "5.61", "5.61", "97.9", "2.32", "6.01", "6.01", "4.41", "4.41"}}}},
    {"Qwen", "Helpful", {"H3", "AH", "UF"},
     {{{"H3", "AH", "UF"}, {"AH", "H3", "UF"}, {"UF", "H3", "AH"}}},
     {
      {"weak", {{{75.74, 0.72}, {59.43, 0.32}, {67.42, 0.41}, {71.05, 0.65}, {61.64, 0.16}, {68.58, 0.72}, {76.97, 0.26}, {67.21, 0.5}, {62.09, 0.72}}}},
      {"ceiling", {{{79.23, 0.72}, {58.4, 0.72}, {71.88, 0.25}, {71.31, 0.72}, {65.36, 0.25}, {75.23, 0.53}, {77.43, 0.62}, {69.73, 0.77}, {62.99, 0.34}}}},
      {"naive", {{{72.68, 0.72}, {59.39, 0.27}, {67.59, 0.72}, {71.5, 0.16}, {67.21, 0.35}, {73.73, 0.77}, {76.56, 0.15}, {70.82, 0.5}, {63.46, 0.18}}}},
      {"conf", {{{73.44, 0.49}, {57.85, 0.35}, {71.82, 0.77}, {72.77, 0.72}, {68.42, 0.49}, {73.5, 0.55}, {76.79, 0.33}, {68.63, 0.72}, {65.35, 0.2}}}},
      {"seam", {{{64.15, 0.22}, {67.63, 0.77}, {73.21, 0.49}, {67.63, 0.72}, {62.19, 0.72}, {74.07, 0.72}, {74.59, 0.19}, {65.36, 0.2}, {67.97, 0.33}}}},
      {"anchor", {{{76.07, 0.72}, {56.82, 0.77}, {72.11, 0.77}, {73.8, 0.76}, {70.6, 0.72}, {74.31, 0.56}, {77.84, 0.72}, {69.73, 0.72}, {65.22, 0.33}}}}},
     {
      {"naive", {"-87.7", "-3.06", "-0.04", "-3.1", "0.17", "-2.89", "173.1", "0.45", "5.57", "5.57", "5.15", "5.15", "-89.1", "-0.41", "3.61", "3.2", "1.37", "0.96"}},
      {"conf", {"-65.9", "-2.3", "-1.58", "-3.88", "4.4", "2.1", "661.5", "1.72", "6.78", "6.78", "4.92", "4.92", "-39.1", "-0.18", "1.42", "1.24", "3.26", "3.08"}},
      {"seam", {"-332.1", "-11.59", "8.2", "-3.39", "5.79", "-5.8", "-1.3k", "-3.42", "0.55", "-2.87", "5.49", "2.07", "-517.4", "-2.38", "-1.85", "-4.23", "5.88", "3.5"}},
      {"anchor", {"9.5", "0.33", "-2.61", "-2.61", "4.69", "4.69", "1k", "2.75", "8.96", "8.96", "5.73", "5.73", "189.1", "0.87", "3.28", "3.28", "3.13", "3.13"}}}},
    {"Llama", "Harmless", {"AHar", "PKU", "RAIL"},
     {{{"AHar", "PKU", "RAIL"}, {"PKU", "AHar", "RAIL"}, {"RAIL", "AHar", "PKU"}}},
     {
      {"weak", {{{70.02, 0.77}, {90.75, 0.72}, {88.49, 0.37}, {85.92, 0.64}, {61.58, 0.46}, {76.98, 0.56}, {89.21, 0.62}, {68.62, 0.21}, {93.62, 0.5}}}},
      {"ceiling", {{{72.54, 0.65}, {92.64, 0.46}, {90.24, 0.33}, {89.28, 0.77}, {64.88, 0.55}, {81.19, 0.72}, {91.06, 0.47}, {70.23, 0.69}, {96.48, 0.72}}}},
      {"naive", {{{73.11, 0.39}, {92.72, 0.72}, {88.49, 0.43}, {90.83, 0.77}, {64.23, 0.72}, {79.24, 0.72}, {90.24, 0.77}, {71.06, 0.33}, {95.66, 0.45}}}},
      {"conf", {{{73.28, 0.72}, {93.86, 0.65}, {88.18, 0.62}, {91.0, 0.35}, {64.19, 0.5}, {79.45, 0.7}, {87.87, 0.77}, {69.41, 0.35}, {93.94, 0.72}}}},
      {"seam", {{{63.36, 0.69}, {95.25, 0.68}, {87.98, 0.54}, {93.86, 0.5}, {63.22, 0.77}, {83.25, 0.72}, {84.07, 0.55}, {63.88, 0.72}, {93.37, 0.33}}}},
      {"anchor", {{{73.41, 0.57}, {93.37, 0.21}, {89.0, 0.35}, {91.41, 0.44}, {65.01, 0.72}, {81.6, 0.22}, {90.65, 0.24}, {71.24, 0.54}, {95.34, 0.77}}}}},
     {
      {"naive", {"122.6", "3.09", "1.97", "1.97", "0", "0", "146.1", "4.91", "2.65", "2.65", "2.26", "2.26", "55.7", "1.03", "2.44", "2.44", "2.04", "2.04"}},
      {"conf", {"129.4", "3.26", "3.11", "3.11", "-0.31", "-0.31", "151.2", "5.08", "2.61", "2.61", "2.47", "2.47", "-72.4", "-1.34", "0.79", "-0.55", "0.32", "-1.02"}},
      {"seam", {"-264.3", "-6.66", "4.5", "-2.16", "-0.51", "-7.17", "236.3", "7.94", "1.64", "1.64", "6.27", "6.27", "-277.8", "-5.14", "-4.74", "-9.88", "-0.25", "-5.39"}},
      {"anchor", {"134.5", "3.39", "2.38", "2.38", "0.31", "0.31", "163.4", "5.49", "3.43", "3.43", "4.62", "4.62", "77.8", "1.44", "2.62", "2.62", "2.37", "2.37"}}}},
    {"Qwen", "Harmless", {"AHar", "PKU", "RAIL"},
     {{{"AHar", "PKU", "RAIL"}, {"PKU", "AHar", "RAIL"}, {"RAIL", "AHar", "PKU"}}},
     {
      {"weak", {{{71.8, 0.72}, {87.97, 0.28}, {82.73, 0.77}, {87.97, 0.48}, {63.58, 0.77}, {81.5, 0.27}, {89.31, 0.41}, {67.75, 0.56}, {91.24, 0.72}}}},
      {"ceiling", {{{72.72, 0.33}, {93.21, 0.67}, {87.46, 0.53}, {88.05, 0.42}, {64.53, 0.72}, {81.5, 0.77}, {91.98, 0.72}, {69.58, 0.58}, {95.34, 0.77}}}},
      {"naive", {{{73.28, 0.24}, {90.02, 0.77}, {83.25, 0.34}, {88.79, 0.46}, {64.93, 0.46}, {83.35, 0.72}, {88.8, 0.72}, {69.28, 0.72}, {92.96, 0.35}}}},
      {"conf", {{{71.85, 0.21}, {86.25, 0.45}, {82.22, 0.19}, {89.2, 0.77}, {63.19, 0.77}, {83.04, 0.51}, {88.49, 0.72}, {69.63, 0.3}, {95.17, 0.47}}}},
      {"seam", {{{57.09, 0.31}, {93.37, 0.72}, {81.19, 0.2}, {91.33, 0.77}, {55.09, 0.72}, {78.83, 0.7}, {79.03, 0.76}, {56.96, 0.19}, {92.31, 0.61}}}},
      {"anchor", {{{73.28, 0.77}, {88.46, 0.53}, {84.38, 0.72}, {90.18, 0.32}, {65.01, 0.67}, {82.43, 0.34}, {89.31, 0.77}, {69.15, 0.71}, {93.7, 0.72}}}}},
     {
      {"naive", {"160.9", "1.48", "2.05", "2.05", "0.52", "0.52", "1k", "0.82", "1.35", "1.35", "1.85", "1.85", "-19.1", "-0.51", "1.53", "1.02", "1.72", "1.21"}},
      {"conf", {"5.4", "0.05", "-1.72", "-1.72", "-0.51", "-0.51", "1.5k", "1.23", "-0.39", "-0.39", "1.54", "1.54", "-30.7", "-0.82", "1.88", "1.06", "3.93", "3.11"}},
      {"seam", {"-1.6k", "-14.71", "5.4", "-9.31", "-1.54", "-16.25", "4.2k", "3.36", "-8.49", "-8.49", "-2.67", "-2.67", "-385", "-10.28", "-10.79", "-21.07", "1.07", "-9.21"}},
      {"anchor", {"160.9", "1.48", "0.66", "0.66", "1.65", "1.65", "2.7k", "2.21", "1.43", "1.43", "1.85", "1.85", "0", "0", "1.4", "1.4", "2.46", "2.46"}}}},
  };
  f.datasets = {
      {"Anthropic Helpful", "Helpful", 115396, 11540, 2332, 57698, 57698, false},
      {"HelpSteer3", "Helpful", 17708, 1771, 915, 8854, 8854, false},
      {"UltraFeedback", "Helpful", 53748, 5375, 1728, 26874, 26874, false},
      {"Anthropic Harmless", "Harmless", 42254, 4226, 2298, 21127, 21127, false},
      {"PKU-SafeRLHF", "Harmless", 26874, 2688, 1222, 13437, 13437, false},
      {"RAIL", "Harmless", 7862, 887, 973, 3931, 3931, true},
  };
  return f;
}

std::size_t column(const FixtureBlock& b, const std::string& source, const std::string& eval) {
  for (std::size_t i = 0; i < 3; ++i) {
    if (b.sources[i] != source) continue;
    for (std::size_t j = 0; j < 3; ++j) {
      if (b.evals[i][j] == eval) return 3 * i + j;
    }
  }
  throw ContractError("fixture block " + b.family + "/" + b.category + " has no column " + source + " -> " + eval);
}

}  // namespace

double FixtureBlock::mean(const std::string& role, const std::string& source, const std::string& eval) const {
  for (const AccuracyRow& r : accuracy) {
    if (r.role == role) return r.cells[column(*this, source, eval)].mean;
  }
  throw ContractError("fixture block " + family + "/" + category + " has no role " + role);
}

double& FixtureBlock::mean_ref(const std::string& role, const std::string& source, const std::string& eval) {
  for (AccuracyRow& r : accuracy) {
    if (r.role == role) return r.cells[column(*this, source, eval)].mean;
  }
  throw ContractError("fixture block " + family + "/" + category + " has no role " + role);
}

AccuracyMatrix FixtureBlock::matrix() const {
  AccuracyMatrix m;
  for (std::size_t i = 0; i < 3; ++i) {
    for (const std::string& e : evals[i]) {
      for (const AccuracyRow& r : accuracy) {
        const double v = mean(r.role, sources[i], e);
        if (r.role == "weak") {
          m.add_weak(sources[i], e, v);
        } else if (r.role == "ceiling") {
          m.add_ceiling(sources[i], e, v);
        } else {
          m.add_student(r.role, sources[i], e, v);
        }
      }
    }
  }
  return m;
}

const FixtureBlock& ReferenceFixture::block(const std::string& family, const std::string& category) const {
  for (const FixtureBlock& b : blocks) {
    if (b.family == family && b.category == category) return b;
  }
  throw ContractError("fixture has no block " + family + "/" + category);
}

FixtureBlock& ReferenceFixture::block(const std::string& family, const std::string& category) {
  return const_cast<FixtureBlock&>(std::as_const(*this).block(family, category));
}

const ReferenceFixture& reference_fixture() {
  static const ReferenceFixture f = build_fixture();
  return f;
}

std::uint64_t fixture_checksum(const ReferenceFixture& fixture) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const FixtureBlock& b : fixture.blocks) {
    feed(b.family);
    feed(b.category);
    for (std::size_t i = 0; i < 3; ++i) {
      for (const std::string& e : b.evals[i]) feed(b.sources[i] + ">" + e);
    }
    for (const AccuracyRow& r : b.accuracy) {
      feed(r.role);
      for (const FixtureAccuracy& c : r.cells) feed(format_fixed(c.mean, 2) + "/" + format_fixed(c.stddev, 2));
    }
    for (const MetricRow& r : b.metrics) {
      feed(r.method);
      for (const std::string& c : r.cells) feed(c);
    }
  }
  for (const DatasetCounts& d : fixture.datasets) {
    feed(d.name + "|" + d.category + "|" + std::to_string(d.train) + "|" + std::to_string(d.validation) + "|" +
         std::to_string(d.test) + "|" + std::to_string(d.weak) + "|" + std::to_string(d.w2s) + "|" +
         (d.provided_validation ? "provided" : "derived"));
  }
  return h;
}

double parse_table_value(const std::string& s, bool& abbreviated) {
  abbreviated = !s.empty() && s.back() == 'k';
  const std::string body = abbreviated ? s.substr(0, s.size() - 1) : s;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(body, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (body.empty() || used != body.size()) throw DataError("unparseable table cell \"" + s + "\"");
  return abbreviated ? v * 1000.0 : v;
}

std::string CellCheck::id() const {
  std::string out = family + "/" + category + " " + method + " " + source;
  if (!target.empty()) out += "->" + target;
  return out + " " + metric;
}

namespace {

// Half a unit in the last printed digit.
double half_unit(const std::string& display) {
  const auto dot = display.find('.');
  if (dot == std::string::npos) return 0.5;
  return 0.5 * std::pow(10.0, -static_cast<double>(display.size() - dot - 1));
}

// Range of 100 (m - w) / (g - w) over the box of +-r around each accuracy.
// Returns an unbounded range when the denominator can vanish inside the box.
std::pair<double, double> pgr_range(double m, double w, double g, double r) {
  if (std::abs(g - w) <= 2.0 * r) {
    return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int corner = 0; corner < 8; ++corner) {
    const double mm = m + ((corner & 1) ? r : -r);
    const double ww = w + ((corner & 2) ? r : -r);
    const double gg = g + ((corner & 4) ? r : -r);
    const double v = 100.0 * (mm - ww) / (gg - ww);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

void judge(CellCheck& c, const VerifyOptions& opt, const std::pair<double, double>* rounding) {
  if (c.abbreviated) {
    c.lower = c.reported - opt.k_tolerance * std::abs(c.reported);
    c.upper = c.reported + opt.k_tolerance * std::abs(c.reported);
  } else {
    c.lower = c.reported - opt.tolerance;
    c.upper = c.reported + opt.tolerance;
  }
  // Small slack for binary floating point on exact decimal differences.
  constexpr double kUlp = 1e-9;
  c.pass = c.recomputed >= c.lower - kUlp && c.recomputed <= c.upper + kUlp;
  if (!c.pass && rounding != nullptr && opt.rounding_interval && !c.abbreviated) {
    const double h = half_unit(c.display);
    if (c.reported + h >= rounding->first && c.reported - h <= rounding->second) c.pass = true;
  }
}

}  // namespace

VerifyReport verify_fixture(const ReferenceFixture& fixture, const VerifyOptions& opt) {
  VerifyReport report;
  report.checksum = fixture_checksum(fixture);
  report.checksum_ok = report.checksum == kReferenceFixtureChecksum;
  for (const FixtureBlock& b : fixture.blocks) {
    const TransferReport tr = build_report(b.matrix(), b.category, b.family);
    for (const MetricRow& row : b.metrics) {
      for (std::size_t i = 0; i < 3; ++i) {
        const std::string& s = b.sources[i];
        const SourceMetrics& sm = tr.at(s, row.method);
        auto make = [&](std::size_t k, const std::string& metric, const std::string& target, double value) {
          CellCheck c;
          c.family = b.family;
          c.category = b.category;
          c.method = row.method;
          c.source = s;
          c.target = target;
          c.metric = metric;
          c.display = row.cells[6 * i + k];
          c.reported = parse_table_value(c.display, c.abbreviated);
          c.recomputed = value;
          return c;
        };
        const AccuracyKey m_ss{row.method, s, s};
        const AccuracyKey w_ss{"weak", s, s};
        const AccuracyKey g_ss{"ceiling", s, s};

        CellCheck pgr = make(0, "PGR", "", sm.pgr);
        pgr.inputs = {m_ss, w_ss, g_ss};
        const auto range = pgr_range(sm.acc_student, sm.acc_weak, sm.acc_ceiling, 0.005);
        judge(pgr, opt, &range);
        report.cells.push_back(pgr);

        CellCheck wrg = make(1, "WRG", "", sm.wrg);
        wrg.inputs = {m_ss, w_ss};
        judge(wrg, opt, nullptr);
        report.cells.push_back(wrg);

        for (std::size_t j = 1; j < 3; ++j) {
          const std::string& t = b.evals[i][j];
          const TargetMetrics& tm = tr.at(s, t, row.method);
          CellCheck aog = make(2 * j, "AOG", t, tm.aog);
          aog.inputs = {{row.method, s, t}, {"weak", s, t}};
          judge(aog, opt, nullptr);
          report.cells.push_back(aog);
          CellCheck nts = make(2 * j + 1, "NTS", t, tm.nts);
          nts.inputs = {{row.method, s, t}, {"weak", s, t}, m_ss, w_ss};
          judge(nts, opt, nullptr);
          report.cells.push_back(nts);
        }
      }
    }
  }
  for (const DatasetCounts& d : fixture.datasets) {
    SplitCheck sc;
    sc.expected = d;
    sc.derived = d;
    // The listed train size is the pool that gets halved; validation is 10%
    // of it, rounded up, unless the dataset ships its own.
    const SplitCounts halves = derive_split_counts(d.train, true);
    sc.derived.weak = halves.gold;
    sc.derived.w2s = halves.w2s;
    if (!d.provided_validation) sc.derived.validation = derive_split_counts(d.train, false).validation;
    sc.pass = sc.derived.weak == d.weak && sc.derived.w2s == d.w2s && sc.derived.validation == d.validation;
    report.splits.push_back(sc);
  }
  return report;
}

std::size_t VerifyReport::failed_cells() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellCheck& c) { return !c.pass; }));
}

std::size_t VerifyReport::failed_splits() const {
  return static_cast<std::size_t>(
      std::count_if(splits.begin(), splits.end(), [](const SplitCheck& c) { return !c.pass; }));
}

std::string VerifyReport::text(bool failures_only) const {
  std::string out;
  char buf[256];
  for (const CellCheck& c : cells) {
    if (failures_only && c.pass) continue;
    std::snprintf(buf, sizeof buf, "%-4s %-44s printed %9s  recomputed %12.4f  delta %+10.4f\n", c.pass ? "ok" : "FAIL",
                  c.id().c_str(), c.display.c_str(), c.recomputed, c.delta());
    out += buf;
  }
  for (const SplitCheck& s : splits) {
    if (failures_only && s.pass) continue;
    std::snprintf(buf, sizeof buf, "%-4s split %-20s train %zu -> validation %zu%s weak %zu w2s %zu (printed %zu/%zu/%zu)\n",
                  s.pass ? "ok" : "FAIL", s.expected.name.c_str(), s.expected.train, s.derived.validation,
                  s.expected.provided_validation ? " (provided)" : "", s.derived.weak, s.derived.w2s,
                  s.expected.validation, s.expected.weak, s.expected.w2s);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "checksum %016llx %s\n", static_cast<unsigned long long>(checksum),
                checksum_ok ? "ok" : "MISMATCH");
  out += buf;
  std::snprintf(buf, sizeof buf, "%zu/%zu metric cells within tolerance, %zu/%zu split rows exact\n",
                cells.size() - failed_cells(), cells.size(), splits.size() - failed_splits(), splits.size());
  out += buf;
  return out;
}

const std::uint64_t kReferenceFixtureChecksum = 0xf72b80fe794c72dfULL;

}  // namespace w2s
