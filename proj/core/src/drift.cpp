#include "w2s/drift.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "w2s/error.hpp"
#include "w2s/io.hpp"

namespace w2s {

std::vector<ActivationMatrix> collect_activations(const ModelView& model, const std::vector<PreferencePair>& pairs,
                                                  const std::vector<std::size_t>& layers, ActivationPooling pooling,
                                                  const std::string& corpus) {
  const ModelConfig& cfg = model.model().config();
  for (std::size_t l : layers) {
    if (l < 1 || l > cfg.n_layers) {
      throw ContractError("collect_activations: layer " + std::to_string(l) + " outside 1.." +
                          std::to_string(cfg.n_layers));
    }
  }
  const auto n = static_cast<Eigen::Index>(2 * pairs.size());
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  std::vector<ActivationMatrix> out(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out[i].values = Eigen::MatrixXd::Zero(n, d);
    out[i].layer = layers[i];
    out[i].pooling = pooling;
    out[i].corpus = corpus;
  }
  ForwardOptions opts;
  opts.adapters = model.adapters_enabled();
  opts.capture_layers = layers;
  constexpr std::size_t kChunk = 128;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const std::size_t m = std::min(kChunk, pairs.size() - start);
    std::vector<Sequence> seqs;
    for (std::size_t j = 0; j < m; ++j) {
      seqs.push_back(pairs[start + j].sequence_a());
      seqs.push_back(pairs[start + j].sequence_b());
    }
    const PackedBatch batch = pack_sequences(seqs, cfg.max_seq_len);
    Graph g;
    const ForwardResult fr = model.model().forward(g, batch, opts);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto h = fr.hidden_at(layers[li]).value().mat();
      for (std::size_t s = 0; s < seqs.size(); ++s) {
        const auto row = static_cast<Eigen::Index>(2 * start + s);
        const Segment seg = batch.segments[s];
        if (pooling == ActivationPooling::last_response_token) {
          out[li].values.row(row) = h.row(static_cast<Eigen::Index>(batch.last_rows[s]));
          continue;
        }
        double count = 0.0;
        for (std::size_t t = seg.begin; t < seg.begin + seg.length; ++t) {
          if (batch.mask[t] == 0.0) continue;
          out[li].values.row(row) += batch.mask[t] * h.row(static_cast<Eigen::Index>(t));
          count += batch.mask[t];
        }
        out[li].values.row(row) /= count;
      }
    }
  }
  return out;
}

namespace {

Eigen::MatrixXd centered(const Eigen::MatrixXd& x) { return x.rowwise() - x.colwise().mean(); }

void require_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const char* op) {
  if (x.rows() != y.rows() || x.rows() < 2) {
    throw ShapeError(std::string(op) + ": need the same number (>= 2) of rows, got " + std::to_string(x.rows()) +
                     " and " + std::to_string(y.rows()));
  }
}

}  // namespace

double linear_cka_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  require_rows(x, y, "linear_cka_distance");
  const Eigen::MatrixXd xc = centered(x);
  const Eigen::MatrixXd yc = centered(y);
  const double xx = (xc.transpose() * xc).norm();
  const double yy = (yc.transpose() * yc).norm();
  if (xx == 0.0 || yy == 0.0) throw NumericError("linear_cka_distance: similarity undefined for zero-variance input");
  const double xy = (xc.transpose() * yc).squaredNorm();
  return 1.0 - xy / (xx * yy);
}

namespace {

struct Whitener {
  Eigen::MatrixXd inv_sqrt;
  double condition = 0.0;
};

Whitener whiten(const Eigen::MatrixXd& cov, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double hi = ev.maxCoeff();
  const double lo = ev.minCoeff();
  Whitener w;
  w.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(lo > 0.0) || !(w.condition < 1e14)) {
    std::ostringstream msg;
    msg << "cca_distance: covariance of " << which << " is rank-deficient beyond the ridge (eigenvalues in ["
        << lo << ", " << hi << "], condition " << w.condition << ")";
    throw NumericError(msg.str());
  }
  w.inv_sqrt = es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return w;
}

}  // namespace

CcaResult cca_analysis(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double ridge) {
  require_rows(x, y, "cca_distance");
  const Eigen::MatrixXd xc = centered(x);
  const Eigen::MatrixXd yc = centered(y);
  const double scale = 1.0 / static_cast<double>(x.rows() - 1);
  Eigen::MatrixXd cxx = scale * xc.transpose() * xc;
  Eigen::MatrixXd cyy = scale * yc.transpose() * yc;
  cxx.diagonal().array() += ridge;
  cyy.diagonal().array() += ridge;
  const Eigen::MatrixXd cxy = scale * xc.transpose() * yc;
  const Whitener wx = whiten(cxx, "X");
  const Whitener wy = whiten(cyy, "Y");
  const Eigen::MatrixXd m = wx.inv_sqrt * cxy * wy.inv_sqrt;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Eigen::VectorXd sv = svd.singularValues();
  const auto k = std::min(x.cols(), y.cols());
  CcaResult r;
  r.condition_x = wx.condition;
  r.condition_y = wy.condition;
  double total = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double rho = std::clamp(sv[i], 0.0, 1.0);
    r.correlations.push_back(rho);
    total += rho;
  }
  r.distance = 1.0 - total / static_cast<double>(k);
  return r;
}

double cca_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) { return cca_analysis(x, y).distance; }

std::string DriftProfile::to_csv() const {
  std::string out = "layer,corpus,cka_distance,cca_distance,n_examples\n";
  for (const DriftEntry& e : entries) {
    out += std::to_string(e.layer) + "," + e.corpus + "," + format_double(e.cka_distance) + "," +
           format_double(e.cca_distance) + "," + std::to_string(e.n_examples) + "\n";
  }
  return out;
}

DriftProfile DriftProfile::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "layer,corpus,cka_distance,cca_distance,n_examples") {
    throw ParseError(1, "unexpected drift profile header");
  }
  DriftProfile p;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ParseError(number, "expected 5 columns");
    try {
      p.entries.push_back({std::stoul(cells[0]), cells[1], std::stod(cells[2]), std::stod(cells[3]), std::stoul(cells[4])});
    } catch (const std::exception&) {
      throw ParseError(number, "malformed number");
    }
  }
  return p;
}

const DriftEntry& DriftProfile::at(const std::string& corpus, std::size_t layer) const {
  for (const DriftEntry& e : entries) {
    if (e.corpus == corpus && e.layer == layer) return e;
  }
  throw ContractError("drift profile has no entry for corpus " + corpus + " layer " + std::to_string(layer));
}

DriftProfile drift_profile(const ModelView& student, const ModelView& reference,
                           const std::map<std::string, std::vector<PreferencePair>>& corpora,
                           const std::vector<std::size_t>& layers, ActivationPooling pooling) {
  const ModelConfig& a = student.model().config();
  const ModelConfig& b = reference.model().config();
  if (a.d_model != b.d_model || a.n_layers != b.n_layers || a.n_heads != b.n_heads) {
    throw ContractError("drift_profile: student and reference architectures differ");
  }
  DriftProfile profile;
  for (const auto& [name, pairs] : corpora) {
    const auto xs = collect_activations(student, pairs, layers, pooling, name);
    const auto ys = collect_activations(reference, pairs, layers, pooling, name);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      DriftEntry e;
      e.layer = layers[i];
      e.corpus = name;
      e.cka_distance = linear_cka_distance(xs[i].values, ys[i].values);
      try {
        e.cca_distance = cca_distance(xs[i].values, ys[i].values);
      } catch (const NumericError&) {
        e.cca_distance = std::numeric_limits<double>::quiet_NaN();
      }
      e.n_examples = static_cast<std::size_t>(xs[i].values.rows());
      profile.entries.push_back(e);
    }
  }
  std::stable_sort(profile.entries.begin(), profile.entries.end(), [](const DriftEntry& l, const DriftEntry& r) {
    return l.corpus != r.corpus ? l.corpus < r.corpus : l.layer < r.layer;
  });
  return profile;
}

}  // namespace w2s
