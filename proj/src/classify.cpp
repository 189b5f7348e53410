#include "mcnn/classify.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "mcnn/diagnostics.hpp"
#include "mcnn/nn/checkpoint.hpp"

namespace mcnn::classify {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd to_matrix(const dataio::FeatureSet& data) {
  if (data.count() == 0 || data.dim <= 0) throw std::invalid_argument("empty feature set");
  if (data.values.size() != data.count() * static_cast<std::size_t>(data.dim)) throw std::invalid_argument("feature set size mismatch");
  MatrixXd x(static_cast<Eigen::Index>(data.count()), data.dim);
  for (std::size_t i = 0; i < data.count(); ++i)
    for (int j = 0; j < data.dim; ++j) {
      const double v = data.row(i)[j];
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value in row " + std::to_string(i));
      x(static_cast<Eigen::Index>(i), j) = v;
    }
  return x;
}

double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

// theta = [w; b]
double objective(const MatrixXd& x, const VectorXd& y, const VectorXd& theta, double inv_c, VectorXd& grad) {
  const Eigen::Index d = x.cols();
  const auto w = theta.head(d);
  const double b = theta(d);
  const VectorXd z = x * w + VectorXd::Constant(x.rows(), b);
  VectorXd r(x.rows());
  double f = 0.5 * inv_c * w.squaredNorm();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = y(i) * z(i);
    f += softplus(-m);
    r(i) = -y(i) * sigmoid(-m);
  }
  grad.resize(d + 1);
  grad.head(d) = inv_c * w + x.transpose() * r;
  grad(d) = r.sum();
  return f;
}

BinaryTrace lbfgs(const MatrixXd& x, const VectorXd& y, const LrConfig& cfg, VectorXd& theta) {
  const double inv_c = 1.0 / cfg.c;
  BinaryTrace trace;
  theta = VectorXd::Zero(x.cols() + 1);
  VectorXd g;
  double f = objective(x, y, theta, inv_c, g);
  trace.objective.push_back(f);
  std::deque<std::pair<VectorXd, VectorXd>> memory;
  VectorXd g_new;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (g.norm() < cfg.tolerance) {
      trace.converged = true;
      break;
    }
    // Two-loop recursion.
    VectorXd q = g;
    std::vector<double> alpha(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
      const auto& [s, yk] = memory[k];
      alpha[k] = s.dot(q) / yk.dot(s);
      q -= alpha[k] * yk;
    }
    if (!memory.empty()) {
      const auto& [s, yk] = memory.back();
      q *= s.dot(yk) / yk.squaredNorm();
    } else {
      q /= std::max(1.0, g.norm());
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const auto& [s, yk] = memory[k];
      const double beta = yk.dot(q) / yk.dot(s);
      q += (alpha[k] - beta) * s;
    }
    VectorXd dir = -q;
    double slope = g.dot(dir);
    if (slope >= 0) {
      dir = -g / std::max(1.0, g.norm());
      slope = g.dot(dir);
      memory.clear();
    }
    // Armijo backtracking keeps the objective monotone.
    double step = 1.0, f_new = f;
    VectorXd theta_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      theta_new = theta + step * dir;
      f_new = objective(x, y, theta_new, inv_c, g_new);
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const VectorXd s = theta_new - theta, yk = g_new - g;
    if (s.dot(yk) > 1e-12 * s.norm() * yk.norm()) {
      memory.emplace_back(s, yk);
      if (static_cast<int>(memory.size()) > cfg.history) memory.pop_front();
    }
    theta = theta_new;
    g = g_new;
    f = f_new;
    trace.objective.push_back(f);
    ++trace.iterations;
  }
  trace.final_gradient_norm = g.norm();
  if (trace.final_gradient_norm < cfg.tolerance) trace.converged = true;
  return trace;
}

template <typename Derived>
nn::Tensor<float> to_tensor(const Eigen::MatrixBase<Derived>& m) {
  nn::Tensor<float> t(nn::Shape{1, 1, static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
  return t;
}

const nn::Tensor<float>& require(const nn::NamedTensors& t, const std::string& name, const std::filesystem::path& path) {
  const auto it = t.find(name);
  if (it == t.end()) throw nn::CheckpointError("'" + path.string() + "' has no '" + name + "' record");
  return it->second;
}

MatrixXd from_tensor(const nn::Tensor<float>& t) {
  MatrixXd m(t.shape().h, t.shape().w);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t[static_cast<std::size_t>(i * m.cols() + j)];
  return m;
}

// Deterministic sign: the largest-magnitude entry is positive.
void fix_sign(Eigen::Ref<VectorXd> v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v(idx) < 0) v = -v;
}

}  // namespace

void LrConfig::validate() const {
  if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("lr: C must be positive");
  if (max_iterations <= 0 || !(tolerance > 0.0) || history <= 0) throw std::invalid_argument("lr: bad solver settings");
}

LrModel train_lr_ova(const dataio::FeatureSet& data, int classes, const LrConfig& config) {
  config.validate();
  const MatrixXd x = to_matrix(data);
  if (classes < 2) throw std::invalid_argument("lr: need at least 2 classes");
  std::vector<int> present(classes, 0);
  for (int l : data.labels) {
    if (l < 0 || l >= classes) throw std::invalid_argument("lr: label " + std::to_string(l) + " out of range");
    present[l] = 1;
  }
  if (std::count(present.begin(), present.end(), 1) < 2) throw std::invalid_argument("lr: training data has a single class");

  LrModel model;
  model.weights.resize(classes, data.dim);
  model.bias.resize(classes);
  for (int c = 0; c < classes; ++c) {
    VectorXd y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) y(i) = data.labels[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
    VectorXd theta;
    BinaryTrace trace = lbfgs(x, y, config, theta);
    if (!trace.converged) {
      warn("lr: class " + std::to_string(c) + " stopped at gradient norm " + std::to_string(trace.final_gradient_norm));
    }
    model.weights.row(c) = theta.head(data.dim).cast<float>().transpose();
    model.bias(c) = static_cast<float>(theta(data.dim));
    model.traces.push_back(std::move(trace));
  }
  return model;
}

LrPrediction predict_lr(const LrModel& model, const dataio::FeatureSet& data) {
  if (data.dim != model.dim()) {
    throw std::invalid_argument("lr: feature dim " + std::to_string(data.dim) + " != model dim " + std::to_string(model.dim()));
  }
  const MatrixXd x = to_matrix(data);
  LrPrediction out;
  out.scores = x * model.weights.cast<double>().transpose();
  out.scores.rowwise() += model.bias.cast<double>().transpose();
  for (Eigen::Index i = 0; i < out.scores.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < model.classes(); ++c)
      if (out.scores(i, c) > out.scores(i, best)) best = c;
    out.labels.push_back(best);
  }
  return out;
}

void save_lr(const std::filesystem::path& path, const LrModel& model) {
  nn::NamedTensors t;
  t.emplace("lr.weights", to_tensor(model.weights));
  t.emplace("lr.bias", to_tensor(model.bias.transpose()));
  nn::write_checkpoint(path, t);
}

LrModel load_lr(const std::filesystem::path& path) {
  const nn::NamedTensors t = nn::read_checkpoint(path);
  LrModel m;
  m.weights = from_tensor(require(t, "lr.weights", path)).cast<float>();
  m.bias = from_tensor(require(t, "lr.bias", path)).row(0).transpose().cast<float>();
  if (m.bias.size() != m.weights.rows()) throw nn::CheckpointError("'" + path.string() + "': bias/weight mismatch");
  return m;
}

WhiteningModel fit_svd_whitening(const dataio::FeatureSet& data, int k) {
  MatrixXd x = to_matrix(data);
  const Eigen::Index n = x.rows(), d = x.cols();
  if (k <= 0 || k > std::min<Eigen::Index>(n, d)) {
    throw std::invalid_argument("whitening: k=" + std::to_string(k) + " must be in [1, min(samples=" + std::to_string(n) +
                                ", dim=" + std::to_string(d) + ")]");
  }
  WhiteningModel m;
  m.samples = n;
  m.mean = x.colwise().mean().transpose();
  x.rowwise() -= m.mean.transpose();

  // Eigen returns ascending eigenvalues; walk them from the top.
  const bool via_samples = n <= d;
  const MatrixXd gram = via_samples ? MatrixXd(x * x.transpose()) : MatrixXd(x.transpose() * x);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw std::runtime_error("whitening: eigendecomposition failed");
  const VectorXd& lambda = eig.eigenvalues();
  const Eigen::Index m_eig = lambda.size();
  const double top = std::max(lambda(m_eig - 1), 0.0);
  const double rank_floor = 1e-12 * std::max(top, 1e-300) * static_cast<double>(std::max(n, d));

  m.basis = MatrixXd::Zero(d, k);
  m.singular = VectorXd::Zero(k);
  int filled = 0;
  for (int i = 0; i < k; ++i) {
    const double l = lambda(m_eig - 1 - i);
    if (l <= rank_floor) break;
    VectorXd v = via_samples ? VectorXd(x.transpose() * eig.eigenvectors().col(m_eig - 1 - i)) : VectorXd(eig.eigenvectors().col(m_eig - 1 - i));
    v.normalize();
    // Re-orthogonalise against earlier columns to absorb round-off.
    for (int j = 0; j < filled; ++j) v -= m.basis.col(j).dot(v) * m.basis.col(j);
    v.normalize();
    fix_sign(v);
    m.basis.col(filled) = v;
    m.singular(filled) = std::sqrt(l);
    ++filled;
  }
  // Rank-deficient tail: any orthonormal completion (singular value 0).
  for (Eigen::Index e = 0; filled < k && e < d; ++e) {
    VectorXd v = VectorXd::Unit(d, e);
    for (int pass = 0; pass < 2; ++pass)
      for (int j = 0; j < filled; ++j) v -= m.basis.col(j).dot(v) * m.basis.col(j);
    if (v.norm() < 1e-6) continue;
    m.basis.col(filled++) = v.normalized();
  }
  // Stored at float precision so a saved model reproduces this one exactly.
  m.mean = m.mean.cast<float>().cast<double>();
  m.basis = m.basis.cast<float>().cast<double>();
  m.singular = m.singular.cast<float>().cast<double>();
  return m;
}

dataio::FeatureSet apply_whitening(const WhiteningModel& model, const dataio::FeatureSet& data) {
  if (data.dim != model.input_dim()) {
    throw std::invalid_argument("whitening: feature dim " + std::to_string(data.dim) + " != model dim " +
                                std::to_string(model.input_dim()));
  }
  MatrixXd x = to_matrix(data);
  x.rowwise() -= model.mean.transpose();
  MatrixXd y = x * model.basis;
  const double denom_n = std::sqrt(std::max<double>(1.0, static_cast<double>(model.samples - 1)));
  for (int i = 0; i < model.output_dim(); ++i) y.col(i) /= model.singular(i) / denom_n + model.epsilon;
  dataio::FeatureSet out;
  out.dim = model.output_dim();
  out.labels = data.labels;
  out.values.resize(static_cast<std::size_t>(y.rows()) * out.dim);
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (int j = 0; j < out.dim; ++j) out.values[static_cast<std::size_t>(i) * out.dim + j] = static_cast<float>(y(i, j));
  return out;
}

void save_whitening(const std::filesystem::path& path, const WhiteningModel& model) {
  nn::NamedTensors t;
  t.emplace("whiten.mean", to_tensor(model.mean.transpose()));
  t.emplace("whiten.basis", to_tensor(model.basis.transpose()));
  t.emplace("whiten.singular", to_tensor(model.singular.transpose()));
  t.emplace("whiten.meta", nn::Tensor<float>(nn::Shape{1, 1, 1, 2}, {static_cast<float>(model.samples), static_cast<float>(model.epsilon)}));
  nn::write_checkpoint(path, t);
}

WhiteningModel load_whitening(const std::filesystem::path& path) {
  const nn::NamedTensors t = nn::read_checkpoint(path);
  WhiteningModel m;
  m.mean = from_tensor(require(t, "whiten.mean", path)).row(0).transpose();
  m.basis = from_tensor(require(t, "whiten.basis", path)).transpose();
  m.singular = from_tensor(require(t, "whiten.singular", path)).row(0).transpose();
  const auto& meta = require(t, "whiten.meta", path);
  if (meta.size() != 2) throw nn::CheckpointError("'" + path.string() + "': bad whitening meta record");
  m.samples = static_cast<long>(meta[0]);
  m.epsilon = kWhiteningEpsilon;
  if (m.basis.rows() != m.mean.size() || m.singular.size() != m.basis.cols()) {
    throw nn::CheckpointError("'" + path.string() + "': inconsistent whitening shapes");
  }
  return m;
}

}  // namespace mcnn::classify
