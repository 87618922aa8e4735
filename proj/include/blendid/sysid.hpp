#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>

#include "json.hpp"

#include "blendid/env.hpp"
#include "blendid/nn.hpp"
#include "blendid/rng.hpp"

namespace blendid {

enum class EstimatorKind { ukf, spm, perfect };

EstimatorKind estimator_kind_from_string(const std::string& name);
std::string to_string(EstimatorKind k);

// Trailing slice of an episode trace; columns are consecutive steps.
struct TraceWindow {
  Eigen::MatrixXd obs;      // kObsDim x T
  Eigen::MatrixXd actions;  // kActDim x T

  int length() const { return static_cast<int>(obs.cols()); }
};

// ---------------------------------------------------------------------------
// Unscented Kalman filter on the parameter vector. Dynamics and measurement
// are both identity: params persist within an episode and the per-episode
// measurement is a noisy read of them, so the filter reduces to recursive
// Bayesian averaging. Kept in UKF form to match the sigma-point machinery.

struct UkfParams {
  double alpha = 0.1;
  double beta = 2.0;
  double kappa = 0.0;
  double process_noise = 1e-6;  // Q = process_noise * I
  Eigen::Vector4d meas_noise_std{0.02, 0.02, 0.05, 0.05};
};

// Merwe scaled sigma points: 2n+1 columns with mean/covariance weights.
struct SigmaPoints {
  Eigen::MatrixXd points;  // n x (2n+1)
  Eigen::VectorXd wm, wc;
};

SigmaPoints sigma_points(const Eigen::VectorXd& mean,
                         const Eigen::MatrixXd& cov, double alpha, double beta,
                         double kappa);

// One predict+update cycle with identity models; mutates mean and cov.
// No clipping here; callers project onto parameter bounds if needed.
void ukf_update(Eigen::VectorXd& mean, Eigen::MatrixXd& cov,
                const Eigen::VectorXd& z, const Eigen::MatrixXd& Q,
                const Eigen::MatrixXd& R, double alpha, double beta,
                double kappa);

// Noisy parameter read: truth + meas_noise_std .* N(0, I).
Eigen::Vector4d measure_params(const ParamVector& truth,
                               const Eigen::Vector4d& meas_noise_std,
                               RngStream& rng);

// ---------------------------------------------------------------------------
// Estimator interface. The harness calls begin_episode with the sampled
// ground truth (estimators that sense do their own noisy measurement from
// it), steps the episode, then hands the trailing trace to end_episode.
// Policies only ever see estimate().

class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual EstimatorKind kind() const = 0;
  virtual void begin_episode(const ParamVector& truth, RngStream& rng) = 0;
  virtual void end_episode(const TraceWindow& window,
                           const ParamVector& truth) = 0;
  virtual Eigen::Vector4d estimate() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

class UkfEstimator : public Estimator {
 public:
  explicit UkfEstimator(UkfParams params = {},
                        ParamBounds bounds = ParamBounds::defaults(),
                        bool reset_each_episode = true);

  EstimatorKind kind() const override { return EstimatorKind::ukf; }
  void begin_episode(const ParamVector& truth, RngStream& rng) override;
  void end_episode(const TraceWindow&, const ParamVector&) override {}
  Eigen::Vector4d estimate() const override { return mean_; }
  nlohmann::json to_json() const override;

  // Back to the prior: mean at the bounds midpoint, covariance covering the
  // half-range per axis.
  void reset();
  // One filter cycle on measurement z; posterior mean projected onto bounds.
  void step(const Eigen::Vector4d& z);

  const Eigen::Vector4d& mean() const { return mean_; }
  const Eigen::Matrix4d& cov() const { return cov_; }
  const UkfParams& params() const { return params_; }

  static UkfEstimator from_json(const nlohmann::json& j);

 private:
  UkfParams params_;
  ParamBounds bounds_;
  bool reset_each_episode_;
  Eigen::Vector4d mean_;
  Eigen::Matrix4d cov_;
};

class PerfectEstimator : public Estimator {
 public:
  explicit PerfectEstimator(ParamBounds bounds = ParamBounds::defaults());

  EstimatorKind kind() const override { return EstimatorKind::perfect; }
  void begin_episode(const ParamVector& truth, RngStream&) override;
  void end_episode(const TraceWindow&, const ParamVector&) override {}
  Eigen::Vector4d estimate() const override { return estimate_; }
  nlohmann::json to_json() const override;

 private:
  ParamBounds bounds_;
  Eigen::Vector4d estimate_;
};

// ---------------------------------------------------------------------------
// Search with a parameter model: a binary classifier predicts, per
// parameter, whether the current guess exceeds the truth, and the guess
// walks against that signal. Labels come from the episode that just ran, so
// the estimate trails the truth by one episode.

struct SpmConfig {
  int window = 10;          // trailing steps fed to the classifier
  double eta = 0.3;         // search step, scaled by the per-axis range
  int fifo_capacity = 200;  // labeled windows kept for retraining
  double learning_rate = 1e-3;
  int train_steps = 5;  // full-batch Adam steps per episode
  std::vector<int> hidden = {64, 64};
};

inline int spm_feature_dim(const SpmConfig& cfg) {
  return cfg.window * (kObsDim + kActDim) + kNumParams;
}

// Step-major flattening: [obs_0, act_0, obs_1, act_1, ..., guess]. Windows
// shorter than cfg.window are left-padded with zeros.
Eigen::VectorXd spm_features(const TraceWindow& w, const Eigen::Vector4d& guess,
                             const SpmConfig& cfg);

// Per-axis targets: 1 when guess > truth, 0 when below, 0.5 within 1e-9.
Eigen::Vector4d spm_labels(const Eigen::Vector4d& guess,
                           const Eigen::Vector4d& truth);

// Sigmoid of the classifier logits.
Eigen::Vector4d spm_predict(const Mlp& clf, const Eigen::VectorXd& features);

// One full-batch Adam step on mean binary cross-entropy (stable logits
// form); returns the pre-step loss. X: features x B, Y: 4 x B.
double spm_train_step(Mlp& clf, AdamState& opt, const Eigen::MatrixXd& X,
                      const Eigen::MatrixXd& Y, double lr);

// guess + eta * (0.5 - p) .* (hi - lo), clipped to bounds.
Eigen::Vector4d spm_search_update(const Eigen::Vector4d& guess,
                                  const Eigen::Vector4d& probs,
                                  const ParamBounds& bounds, double eta);

class SpmEstimator : public Estimator {
 public:
  SpmEstimator(SpmConfig cfg, ParamBounds bounds, std::uint64_t seed);

  EstimatorKind kind() const override { return EstimatorKind::spm; }
  void begin_episode(const ParamVector&, RngStream&) override {}
  void end_episode(const TraceWindow& window, const ParamVector& truth) override;
  Eigen::Vector4d estimate() const override { return guess_; }
  nlohmann::json to_json() const override;

  const Mlp& classifier() const { return clf_; }
  const Eigen::Vector4d& guess() const { return guess_; }
  int fifo_size() const { return static_cast<int>(fifo_.size()); }
  const SpmConfig& config() const { return cfg_; }

  static SpmEstimator from_json(const nlohmann::json& j);

 private:
  struct Labeled {
    Eigen::VectorXd x;
    Eigen::Vector4d y;
  };

  SpmConfig cfg_;
  ParamBounds bounds_;
  Mlp clf_;
  AdamState opt_;
  Eigen::Vector4d guess_;
  std::deque<Labeled> fifo_;
};

std::unique_ptr<Estimator> make_estimator(
    EstimatorKind kind, std::uint64_t seed,
    const ParamBounds& bounds = ParamBounds::defaults(),
    const UkfParams& ukf = {}, const SpmConfig& spm = {});

std::unique_ptr<Estimator> estimator_from_json(const nlohmann::json& j);

}  // namespace blendid
