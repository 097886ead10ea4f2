#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace w2s {

// Transfer metrics over accuracies in percent. Inputs outside [0, 100]
// throw ContractError.

/// WRG(S; m) = A_m(S, S) - A_w(S, S).
double compute_wrg(double acc_student_ss, double acc_weak_ss);
/// AOG(S, T; m) = A_m(S, T) - A_w(S, T), for T != S.
double compute_aog(double acc_student_st, double acc_weak_st);
/// C_ID(S; m) = max(0, A_w(S, S) - A_m(S, S)).
double compute_cid(double acc_weak_ss, double acc_student_ss);
/// NTS(S, T; m) = AOG(S, T; m) - C_ID(S; m).
double compute_nts(double aog, double acc_weak_ss, double acc_student_ss);
/// PGR = 100 (A_m - A_w) / (A_gt - A_w) on the source domain. Throws
/// NumericError when the ceiling equals the weak teacher.
double compute_pgr(double acc_student_ss, double acc_weak_ss, double acc_ceiling_ss);

enum class Role { weak, student, ceiling };

/// Accuracies A(role, source, eval) with one replicate per seed. Weak and
/// ceiling entries are shared by every method of a source.
class AccuracyMatrix {
 public:
  void add_weak(const std::string& source, const std::string& eval, double acc);
  void add_ceiling(const std::string& source, const std::string& eval, double acc);
  void add_student(const std::string& method, const std::string& source, const std::string& eval, double acc);

  /// Arithmetic mean over replicates. Throws DataError when absent.
  double mean(Role role, const std::string& method, const std::string& source, const std::string& eval) const;
  /// Sample standard deviation (0 for a single replicate).
  double stddev(Role role, const std::string& method, const std::string& source, const std::string& eval) const;
  const std::vector<double>& replicates(Role role, const std::string& method, const std::string& source,
                                        const std::string& eval) const;

  std::vector<std::string> sources() const;
  std::vector<std::string> methods() const;
  /// Every eval domain seen for `source`.
  std::vector<std::string> evals(const std::string& source) const;
  /// Cells needed for a complete report that have no replicate.
  std::vector<std::string> missing_cells() const;

 private:
  using Key = std::tuple<std::string, std::string, std::string>;  // method, source, eval
  const std::vector<double>& find(Role role, const Key& key) const;

  std::map<Key, std::vector<double>> weak_, ceiling_, student_;
};

struct SourceMetrics {
  std::string source;
  std::string method;
  double acc_weak = 0.0;
  double acc_student = 0.0;
  double acc_ceiling = 0.0;
  double wrg = 0.0;
  /// NaN when the ceiling equals the weak teacher.
  double pgr = 0.0;
  double c_id = 0.0;
};

struct TargetMetrics {
  std::string source;
  std::string target;
  std::string method;
  double acc_weak = 0.0;
  double acc_student = 0.0;
  double acc_ceiling = 0.0;
  double aog = 0.0;
  double nts = 0.0;
};

struct TransferReport {
  std::string category;
  std::string model_family;
  std::vector<SourceMetrics> in_domain;
  std::vector<TargetMetrics> transfer;

  const SourceMetrics& at(const std::string& source, const std::string& method) const;
  const TargetMetrics& at(const std::string& source, const std::string& target, const std::string& method) const;
};

/// Mean over seeds first, then every metric for every (source, target,
/// method). Throws DataError listing absent cells when incomplete.
TransferReport build_report(const AccuracyMatrix& matrix, const std::string& category = "",
                            const std::string& model_family = "");

/// One row per (category, model family, source, method, eval domain). The
/// in-domain row carries WRG and PGR, transfer rows carry AOG and NTS.
std::string report_csv(const std::vector<TransferReport>& reports);
/// Same content as the CSV at full precision.
std::string report_json(const std::vector<TransferReport>& reports);

}  // namespace w2s
