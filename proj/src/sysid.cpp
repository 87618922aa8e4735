#include "blendid/sysid.hpp"

#include <cmath>
#include <stdexcept>

namespace blendid {

using nlohmann::json;

EstimatorKind estimator_kind_from_string(const std::string& name) {
  if (name == "ukf") return EstimatorKind::ukf;
  if (name == "spm") return EstimatorKind::spm;
  if (name == "perfect") return EstimatorKind::perfect;
  throw std::invalid_argument("unknown estimator: " + name);
}

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::ukf: return "ukf";
    case EstimatorKind::spm: return "spm";
    case EstimatorKind::perfect: return "perfect";
  }
  throw std::logic_error("bad estimator kind");
}

SigmaPoints sigma_points(const Eigen::VectorXd& mean,
                         const Eigen::MatrixXd& cov, double alpha, double beta,
                         double kappa) {
  const Eigen::Index n = mean.size();
  const double lambda = alpha * alpha * (n + kappa) - n;
  const double scale = n + lambda;

  Eigen::LLT<Eigen::MatrixXd> llt(scale * cov);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("sigma_points: covariance not positive definite");
  }
  const Eigen::MatrixXd L = llt.matrixL();

  SigmaPoints sp;
  sp.points.resize(n, 2 * n + 1);
  sp.points.col(0) = mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    sp.points.col(1 + i) = mean + L.col(i);
    sp.points.col(1 + n + i) = mean - L.col(i);
  }
  sp.wm = Eigen::VectorXd::Constant(2 * n + 1, 1.0 / (2.0 * scale));
  sp.wc = sp.wm;
  sp.wm[0] = lambda / scale;
  sp.wc[0] = sp.wm[0] + (1.0 - alpha * alpha + beta);
  return sp;
}

namespace {

std::vector<double> flat4(const Eigen::Vector4d& v) {
  return {v[0], v[1], v[2], v[3]};
}

// Unscented transform of a sigma-point set (points already propagated).
void unscented_moments(const SigmaPoints& sp, Eigen::VectorXd* mean,
                       Eigen::MatrixXd* cov) {
  *mean = sp.points * sp.wm;
  const Eigen::Index n = sp.points.rows();
  cov->setZero(n, n);
  for (Eigen::Index i = 0; i < sp.points.cols(); ++i) {
    const Eigen::VectorXd d = sp.points.col(i) - *mean;
    *cov += sp.wc[i] * d * d.transpose();
  }
}

}  // namespace

void ukf_update(Eigen::VectorXd& mean, Eigen::MatrixXd& cov,
                const Eigen::VectorXd& z, const Eigen::MatrixXd& Q,
                const Eigen::MatrixXd& R, double alpha, double beta,
                double kappa) {
  // Predict through the identity dynamics.
  SigmaPoints sp = sigma_points(mean, cov, alpha, beta, kappa);
  Eigen::VectorXd x_pred;
  Eigen::MatrixXd p_pred;
  unscented_moments(sp, &x_pred, &p_pred);
  p_pred += Q;

  // Fresh sigma points through the identity measurement.
  SigmaPoints spz = sigma_points(x_pred, p_pred, alpha, beta, kappa);
  Eigen::VectorXd z_pred;
  Eigen::MatrixXd s;
  unscented_moments(spz, &z_pred, &s);
  Eigen::MatrixXd cross = s;  // state and measurement points coincide
  s += R;

  const Eigen::MatrixXd gain = s.llt().solve(cross.transpose()).transpose();
  mean = x_pred + gain * (z - z_pred);
  cov = p_pred - gain * s * gain.transpose();
  cov = 0.5 * (cov + cov.transpose());
}

Eigen::Vector4d measure_params(const ParamVector& truth,
                               const Eigen::Vector4d& meas_noise_std,
                               RngStream& rng) {
  Eigen::Vector4d z = truth.flatten();
  for (int i = 0; i < kNumParams; ++i) z[i] += meas_noise_std[i] * rng.normal();
  return z;
}

// --- UkfEstimator ----------------------------------------------------------

UkfEstimator::UkfEstimator(UkfParams params, ParamBounds bounds,
                           bool reset_each_episode)
    : params_(params),
      bounds_(bounds),
      reset_each_episode_(reset_each_episode) {
  reset();
}

void UkfEstimator::reset() {
  mean_ = bounds_.midpoint();
  cov_ = (bounds_.range() / 2.0).array().square().matrix().asDiagonal();
}

void UkfEstimator::step(const Eigen::Vector4d& z) {
  Eigen::VectorXd m = mean_;
  Eigen::MatrixXd p = cov_;
  const Eigen::MatrixXd q =
      params_.process_noise * Eigen::MatrixXd::Identity(kNumParams, kNumParams);
  const Eigen::MatrixXd r =
      params_.meas_noise_std.array().square().matrix().asDiagonal();
  ukf_update(m, p, z, q, r, params_.alpha, params_.beta, params_.kappa);
  mean_ = m.cwiseMax(bounds_.lo.flatten()).cwiseMin(bounds_.hi.flatten());
  cov_ = p;
}

void UkfEstimator::begin_episode(const ParamVector& truth, RngStream& rng) {
  if (reset_each_episode_) reset();
  step(measure_params(truth, params_.meas_noise_std, rng));
}

json UkfEstimator::to_json() const {
  json j;
  j["kind"] = "ukf";
  j["alpha"] = params_.alpha;
  j["beta"] = params_.beta;
  j["kappa"] = params_.kappa;
  j["process_noise"] = params_.process_noise;
  j["meas_noise_std"] = flat4(params_.meas_noise_std);
  j["reset_each_episode"] = reset_each_episode_;
  j["bounds_lo"] = flat4(bounds_.lo.flatten());
  j["bounds_hi"] = flat4(bounds_.hi.flatten());
  j["mean"] = flat4(mean_);
  j["cov"] = std::vector<double>(cov_.data(), cov_.data() + 16);
  return j;
}

namespace {

Eigen::Vector4d vec4_from_json(const json& j) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw std::runtime_error("expected 4 values");
  return Eigen::Vector4d(v[0], v[1], v[2], v[3]);
}

ParamBounds bounds_from_json(const json& jlo, const json& jhi) {
  ParamBounds b;
  b.lo = ParamVector::from_flat(vec4_from_json(jlo));
  b.hi = ParamVector::from_flat(vec4_from_json(jhi));
  return b;
}

}  // namespace

UkfEstimator UkfEstimator::from_json(const json& j) {
  UkfParams p;
  p.alpha = j.at("alpha").get<double>();
  p.beta = j.at("beta").get<double>();
  p.kappa = j.at("kappa").get<double>();
  p.process_noise = j.at("process_noise").get<double>();
  p.meas_noise_std = vec4_from_json(j.at("meas_noise_std"));
  UkfEstimator e(p, bounds_from_json(j.at("bounds_lo"), j.at("bounds_hi")),
                 j.at("reset_each_episode").get<bool>());
  e.mean_ = vec4_from_json(j.at("mean"));
  auto c = j.at("cov").get<std::vector<double>>();
  if (c.size() != 16) throw std::runtime_error("expected 4x4 covariance");
  e.cov_ = Eigen::Map<Eigen::Matrix4d>(c.data());
  return e;
}

// --- PerfectEstimator ------------------------------------------------------

PerfectEstimator::PerfectEstimator(ParamBounds bounds)
    : bounds_(bounds), estimate_(bounds.midpoint()) {}

void PerfectEstimator::begin_episode(const ParamVector& truth, RngStream&) {
  estimate_ = bounds_.clip(truth).flatten();
}

json PerfectEstimator::to_json() const {
  json j;
  j["kind"] = "perfect";
  j["bounds_lo"] = flat4(bounds_.lo.flatten());
  j["bounds_hi"] = flat4(bounds_.hi.flatten());
  return j;
}

// --- SPM -------------------------------------------------------------------

Eigen::VectorXd spm_features(const TraceWindow& w, const Eigen::Vector4d& guess,
                             const SpmConfig& cfg) {
  const int step_dim = kObsDim + kActDim;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(spm_feature_dim(cfg));
  const int len = std::min(cfg.window, w.length());
  for (int t = 0; t < len; ++t) {
    const int src = w.length() - len + t;
    const int dst = cfg.window - len + t;
    f.segment(dst * step_dim, kObsDim) = w.obs.col(src);
    f.segment(dst * step_dim + kObsDim, kActDim) = w.actions.col(src);
  }
  f.tail(kNumParams) = guess;
  return f;
}

Eigen::Vector4d spm_labels(const Eigen::Vector4d& guess,
                           const Eigen::Vector4d& truth) {
  Eigen::Vector4d y;
  for (int i = 0; i < kNumParams; ++i) {
    const double d = guess[i] - truth[i];
    y[i] = std::abs(d) <= 1e-9 ? 0.5 : (d > 0.0 ? 1.0 : 0.0);
  }
  return y;
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Eigen::Vector4d spm_predict(const Mlp& clf, const Eigen::VectorXd& features) {
  const Eigen::VectorXd logits = clf.forward(features);
  Eigen::Vector4d p;
  for (int i = 0; i < kNumParams; ++i) p[i] = sigmoid(logits[i]);
  return p;
}

double spm_train_step(Mlp& clf, AdamState& opt, const Eigen::MatrixXd& X,
                      const Eigen::MatrixXd& Y, double lr) {
  MlpCache cache;
  const Eigen::MatrixXd logits = clf.forward(X, cache);
  const double count = static_cast<double>(logits.size());

  // Stable BCE with logits: max(x,0) - x*y + log(1 + exp(-|x|)).
  double loss = 0.0;
  Eigen::MatrixXd dlogits(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double x = logits(r, c), y = Y(r, c);
      loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
      dlogits(r, c) = (sigmoid(x) - y) / count;
    }
  }
  loss /= count;

  GradBuffer g = clf.make_grad(false);
  clf.backward(cache, dlogits, g);
  adam_step(clf, g, opt, lr);
  return loss;
}

Eigen::Vector4d spm_search_update(const Eigen::Vector4d& guess,
                                  const Eigen::Vector4d& probs,
                                  const ParamBounds& bounds, double eta) {
  const Eigen::Vector4d step =
      eta * (Eigen::Vector4d::Constant(0.5) - probs).cwiseProduct(
                bounds.range());
  Eigen::Vector4d g = guess + step;
  return g.cwiseMax(bounds.lo.flatten()).cwiseMin(bounds.hi.flatten());
}

SpmEstimator::SpmEstimator(SpmConfig cfg, ParamBounds bounds,
                           std::uint64_t seed)
    : cfg_(std::move(cfg)), bounds_(bounds), guess_(bounds.midpoint()) {
  std::vector<int> sizes;
  sizes.push_back(spm_feature_dim(cfg_));
  for (int h : cfg_.hidden) sizes.push_back(h);
  sizes.push_back(kNumParams);
  RngStream rng(seed, 0x51);
  clf_ = Mlp::orthogonal_init(sizes, 1.0, rng);
}

void SpmEstimator::end_episode(const TraceWindow& window,
                               const ParamVector& truth) {
  Labeled item;
  item.x = spm_features(window, guess_, cfg_);
  item.y = spm_labels(guess_, truth.flatten());
  fifo_.push_back(std::move(item));
  while (static_cast<int>(fifo_.size()) > cfg_.fifo_capacity) fifo_.pop_front();

  Eigen::MatrixXd X(spm_feature_dim(cfg_), fifo_.size());
  Eigen::MatrixXd Y(kNumParams, fifo_.size());
  for (size_t k = 0; k < fifo_.size(); ++k) {
    X.col(static_cast<Eigen::Index>(k)) = fifo_[k].x;
    Y.col(static_cast<Eigen::Index>(k)) = fifo_[k].y;
  }
  for (int s = 0; s < cfg_.train_steps; ++s) {
    spm_train_step(clf_, opt_, X, Y, cfg_.learning_rate);
  }

  const Eigen::Vector4d p = spm_predict(clf_, fifo_.back().x);
  guess_ = spm_search_update(guess_, p, bounds_, cfg_.eta);
}

json SpmEstimator::to_json() const {
  json j;
  j["kind"] = "spm";
  j["window"] = cfg_.window;
  j["eta"] = cfg_.eta;
  j["fifo_capacity"] = cfg_.fifo_capacity;
  j["learning_rate"] = cfg_.learning_rate;
  j["train_steps"] = cfg_.train_steps;
  j["hidden"] = cfg_.hidden;
  j["bounds_lo"] = flat4(bounds_.lo.flatten());
  j["bounds_hi"] = flat4(bounds_.hi.flatten());
  j["guess"] = flat4(guess_);
  j["classifier"] = mlp_to_json(clf_);
  j["optimizer"] = adam_to_json(opt_);
  json fifo = json::array();
  for (const auto& item : fifo_) {
    json e;
    e["x"] = std::vector<double>(item.x.data(), item.x.data() + item.x.size());
    e["y"] = flat4(item.y);
    fifo.push_back(std::move(e));
  }
  j["fifo"] = std::move(fifo);
  return j;
}

SpmEstimator SpmEstimator::from_json(const json& j) {
  SpmConfig cfg;
  cfg.window = j.at("window").get<int>();
  cfg.eta = j.at("eta").get<double>();
  cfg.fifo_capacity = j.at("fifo_capacity").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.train_steps = j.at("train_steps").get<int>();
  cfg.hidden = j.at("hidden").get<std::vector<int>>();
  SpmEstimator e(cfg, bounds_from_json(j.at("bounds_lo"), j.at("bounds_hi")),
                 0);
  e.guess_ = vec4_from_json(j.at("guess"));
  e.clf_ = mlp_from_json(j.at("classifier"));
  e.opt_ = adam_from_json(j.at("optimizer"), e.clf_);
  for (const auto& item : j.at("fifo")) {
    Labeled l;
    auto x = item.at("x").get<std::vector<double>>();
    l.x = Eigen::Map<Eigen::VectorXd>(x.data(),
                                      static_cast<Eigen::Index>(x.size()));
    l.y = vec4_from_json(item.at("y"));
    e.fifo_.push_back(std::move(l));
  }
  return e;
}

// --- factories ---------------------------------------------------------------

std::unique_ptr<Estimator> make_estimator(EstimatorKind kind,
                                          std::uint64_t seed,
                                          const ParamBounds& bounds,
                                          const UkfParams& ukf,
                                          const SpmConfig& spm) {
  switch (kind) {
    case EstimatorKind::ukf:
      return std::make_unique<UkfEstimator>(ukf, bounds);
    case EstimatorKind::spm:
      return std::make_unique<SpmEstimator>(spm, bounds, seed);
    case EstimatorKind::perfect:
      return std::make_unique<PerfectEstimator>(bounds);
  }
  throw std::logic_error("bad estimator kind");
}

std::unique_ptr<Estimator> estimator_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "ukf") {
    return std::make_unique<UkfEstimator>(UkfEstimator::from_json(j));
  }
  if (kind == "spm") {
    return std::make_unique<SpmEstimator>(SpmEstimator::from_json(j));
  }
  if (kind == "perfect") {
    return std::make_unique<PerfectEstimator>(
        bounds_from_json(j.at("bounds_lo"), j.at("bounds_hi")));
  }
  throw std::runtime_error("unknown estimator kind: " + kind);
}

}  // namespace blendid
