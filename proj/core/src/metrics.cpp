#include "w2s/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "w2s/error.hpp"
#include "w2s/io.hpp"

namespace w2s {

namespace {

void check_acc(double a, const char* what) {
  if (!(a >= 0.0 && a <= 100.0)) {
    throw ContractError(std::string(what) + ": accuracy " + std::to_string(a) + " outside [0, 100]");
  }
}

}  // namespace

double compute_wrg(double acc_student_ss, double acc_weak_ss) {
  check_acc(acc_student_ss, "compute_wrg");
  check_acc(acc_weak_ss, "compute_wrg");
  return acc_student_ss - acc_weak_ss;
}

double compute_aog(double acc_student_st, double acc_weak_st) {
  check_acc(acc_student_st, "compute_aog");
  check_acc(acc_weak_st, "compute_aog");
  return acc_student_st - acc_weak_st;
}

double compute_cid(double acc_weak_ss, double acc_student_ss) {
  check_acc(acc_weak_ss, "compute_cid");
  check_acc(acc_student_ss, "compute_cid");
  return std::max(0.0, acc_weak_ss - acc_student_ss);
}

double compute_nts(double aog, double acc_weak_ss, double acc_student_ss) {
  return aog - compute_cid(acc_weak_ss, acc_student_ss);
}

double compute_pgr(double acc_student_ss, double acc_weak_ss, double acc_ceiling_ss) {
  check_acc(acc_student_ss, "compute_pgr");
  check_acc(acc_weak_ss, "compute_pgr");
  check_acc(acc_ceiling_ss, "compute_pgr");
  if (acc_ceiling_ss == acc_weak_ss) throw NumericError("compute_pgr: undefined, ceiling equals weak teacher");
  return 100.0 * (acc_student_ss - acc_weak_ss) / (acc_ceiling_ss - acc_weak_ss);
}

void AccuracyMatrix::add_weak(const std::string& source, const std::string& eval, double acc) {
  check_acc(acc, "AccuracyMatrix");
  weak_[{"", source, eval}].push_back(acc);
}

void AccuracyMatrix::add_ceiling(const std::string& source, const std::string& eval, double acc) {
  check_acc(acc, "AccuracyMatrix");
  ceiling_[{"", source, eval}].push_back(acc);
}

void AccuracyMatrix::add_student(const std::string& method, const std::string& source, const std::string& eval,
                                 double acc) {
  check_acc(acc, "AccuracyMatrix");
  if (method.empty()) throw ContractError("AccuracyMatrix: empty method label");
  student_[{method, source, eval}].push_back(acc);
}

const std::vector<double>& AccuracyMatrix::find(Role role, const Key& key) const {
  const auto& m = role == Role::weak ? weak_ : role == Role::ceiling ? ceiling_ : student_;
  const Key k = role == Role::student ? key : Key{"", std::get<1>(key), std::get<2>(key)};
  auto it = m.find(k);
  if (it == m.end() || it->second.empty()) {
    const char* r = role == Role::weak ? "weak" : role == Role::ceiling ? "ceiling" : "student";
    throw DataError(std::string("accuracy matrix has no ") + r + " entry for " +
                    (role == Role::student ? std::get<0>(key) + "/" : std::string()) + std::get<1>(key) + " -> " +
                    std::get<2>(key));
  }
  return it->second;
}

const std::vector<double>& AccuracyMatrix::replicates(Role role, const std::string& method, const std::string& source,
                                                      const std::string& eval) const {
  return find(role, {method, source, eval});
}

double AccuracyMatrix::mean(Role role, const std::string& method, const std::string& source,
                            const std::string& eval) const {
  const auto& v = replicates(role, method, source, eval);
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double AccuracyMatrix::stddev(Role role, const std::string& method, const std::string& source,
                              const std::string& eval) const {
  const auto& v = replicates(role, method, source, eval);
  if (v.size() < 2) return 0.0;
  const double mu = mean(role, method, source, eval);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<std::string> AccuracyMatrix::sources() const {
  std::set<std::string> out;
  for (const auto* m : {&weak_, &ceiling_, &student_}) {
    for (const auto& [k, v] : *m) out.insert(std::get<1>(k));
  }
  return {out.begin(), out.end()};
}

std::vector<std::string> AccuracyMatrix::methods() const {
  std::set<std::string> out;
  for (const auto& [k, v] : student_) out.insert(std::get<0>(k));
  return {out.begin(), out.end()};
}

std::vector<std::string> AccuracyMatrix::evals(const std::string& source) const {
  std::set<std::string> out;
  for (const auto* m : {&weak_, &ceiling_, &student_}) {
    for (const auto& [k, v] : *m) {
      if (std::get<1>(k) == source) out.insert(std::get<2>(k));
    }
  }
  return {out.begin(), out.end()};
}

std::vector<std::string> AccuracyMatrix::missing_cells() const {
  std::vector<std::string> missing;
  const auto methods_all = methods();
  for (const std::string& s : sources()) {
    const auto evals_s = evals(s);
    if (std::find(evals_s.begin(), evals_s.end(), s) == evals_s.end()) {
      missing.push_back("in-domain evaluation " + s + " -> " + s);
    }
    for (const std::string& e : evals_s) {
      if (!weak_.count({"", s, e})) missing.push_back("weak " + s + " -> " + e);
      if (!ceiling_.count({"", s, e})) missing.push_back("ceiling " + s + " -> " + e);
      for (const std::string& m : methods_all) {
        if (!student_.count({m, s, e})) missing.push_back("student " + m + " " + s + " -> " + e);
      }
    }
  }
  return missing;
}

const SourceMetrics& TransferReport::at(const std::string& source, const std::string& method) const {
  for (const auto& r : in_domain) {
    if (r.source == source && r.method == method) return r;
  }
  throw ContractError("transfer report has no row " + method + "/" + source);
}

const TargetMetrics& TransferReport::at(const std::string& source, const std::string& target,
                                        const std::string& method) const {
  for (const auto& r : transfer) {
    if (r.source == source && r.target == target && r.method == method) return r;
  }
  throw ContractError("transfer report has no row " + method + "/" + source + " -> " + target);
}

TransferReport build_report(const AccuracyMatrix& matrix, const std::string& category,
                            const std::string& model_family) {
  const auto missing = matrix.missing_cells();
  if (!missing.empty()) {
    std::string msg = "incomplete accuracy matrix, absent cells:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  TransferReport report;
  report.category = category;
  report.model_family = model_family;
  for (const std::string& s : matrix.sources()) {
    const double w_ss = matrix.mean(Role::weak, "", s, s);
    const double gt_ss = matrix.mean(Role::ceiling, "", s, s);
    for (const std::string& m : matrix.methods()) {
      const double m_ss = matrix.mean(Role::student, m, s, s);
      SourceMetrics row{s, m, w_ss, m_ss, gt_ss, compute_wrg(m_ss, w_ss), 0.0, compute_cid(w_ss, m_ss)};
      row.pgr = gt_ss == w_ss ? std::numeric_limits<double>::quiet_NaN() : compute_pgr(m_ss, w_ss, gt_ss);
      report.in_domain.push_back(row);
      for (const std::string& t : matrix.evals(s)) {
        if (t == s) continue;
        const double w_st = matrix.mean(Role::weak, "", s, t);
        const double m_st = matrix.mean(Role::student, m, s, t);
        const double aog = compute_aog(m_st, w_st);
        report.transfer.push_back({s, t, m, w_st, m_st, matrix.mean(Role::ceiling, "", s, t), aog,
                                   compute_nts(aog, w_ss, m_ss)});
      }
    }
  }
  return report;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? "nan" : format_fixed(v, 6); }

nlohmann::json num(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace

std::string report_csv(const std::vector<TransferReport>& reports) {
  std::string out = "category,model_family,source,method,eval_domain,acc_weak,acc_student,acc_ceiling,WRG,PGR,AOG,NTS\n";
  for (const TransferReport& r : reports) {
    for (const SourceMetrics& s : r.in_domain) {
      const std::string prefix = r.category + "," + r.model_family + "," + s.source + "," + s.method + ",";
      out += prefix + s.source + "," + cell(s.acc_weak) + "," + cell(s.acc_student) + "," + cell(s.acc_ceiling) + "," +
             cell(s.wrg) + "," + cell(s.pgr) + ",,\n";
      for (const TargetMetrics& t : r.transfer) {
        if (t.source != s.source || t.method != s.method) continue;
        out += prefix + t.target + "," + cell(t.acc_weak) + "," + cell(t.acc_student) + "," + cell(t.acc_ceiling) +
               ",,," + cell(t.aog) + "," + cell(t.nts) + "\n";
      }
    }
  }
  return out;
}

std::string report_json(const std::vector<TransferReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const TransferReport& r : reports) {
    for (const SourceMetrics& s : r.in_domain) {
      rows.push_back({{"category", r.category},
                      {"model_family", r.model_family},
                      {"source", s.source},
                      {"method", s.method},
                      {"eval_domain", s.source},
                      {"acc_weak", s.acc_weak},
                      {"acc_student", s.acc_student},
                      {"acc_ceiling", s.acc_ceiling},
                      {"WRG", s.wrg},
                      {"PGR", num(s.pgr)},
                      {"C_ID", s.c_id}});
      for (const TargetMetrics& t : r.transfer) {
        if (t.source != s.source || t.method != s.method) continue;
        rows.push_back({{"category", r.category},
                        {"model_family", r.model_family},
                        {"source", t.source},
                        {"method", t.method},
                        {"eval_domain", t.target},
                        {"acc_weak", t.acc_weak},
                        {"acc_student", t.acc_student},
                        {"acc_ceiling", t.acc_ceiling},
                        {"AOG", t.aog},
                        {"NTS", t.nts}});
      }
    }
  }
  return rows.dump(2) + "\n";
}

}  // namespace w2s
