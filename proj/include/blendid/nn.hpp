#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"

#include "blendid/rng.hpp"

namespace blendid {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 1.0;
inline constexpr double kLogStdInit = -0.6931471805599453;  // ln 0.5
inline constexpr int kCheckpointVersion = 1;

// Gradients for one Mlp, plus the Gaussian head's log-std when the owner has
// one (size 0 otherwise).
struct GradBuffer {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  Eigen::VectorXd log_std;

  void setZero();
  double squaredNorm() const;
  void scale(double s);
  bool allFinite() const;
};

// Cached per-layer activations from a forward pass; act[0] is the input.
struct MlpCache {
  std::vector<Eigen::MatrixXd> act;
};

// Fixed-topology feed-forward network: tanh hidden layers, linear output.
// Columns are samples in the batched entry points.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes);  // zero-initialized

  // Orthogonal weights (gain 1 hidden, output_gain on the last layer),
  // zero biases.
  static Mlp orthogonal_init(std::vector<int> sizes, double output_gain,
                             RngStream& rng);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(w.size()); }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& X, MlpCache& cache) const;

  // Accumulates d<out_grad, output>/dparams into grad. The cache must come
  // from a forward call on these parameters.
  void backward(const MlpCache& cache, const Eigen::MatrixXd& out_grad,
                GradBuffer& grad) const;

  GradBuffer make_grad(bool with_log_std = false) const;
  bool same_shape(const GradBuffer& g) const;

  std::vector<Eigen::MatrixXd> w;  // w[l]: sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> b;

 private:
  std::vector<int> sizes_;
};

struct GaussianSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

// action = mean + exp(log_std) * z, z ~ N(0, I).
GaussianSample gaussian_sample(const Eigen::VectorXd& mean,
                               const Eigen::VectorXd& log_std, RngStream& rng);

double gaussian_log_prob(const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& log_std,
                         const Eigen::VectorXd& action);

// Diagonal-Gaussian policy: Mlp mean head plus a state-independent log-std.
struct GaussianPolicy {
  Mlp net;
  Eigen::VectorXd log_std;

  static GaussianPolicy make(int obs_dim, int act_dim, RngStream& rng,
                             const std::vector<int>& hidden = {64, 64});

  Eigen::VectorXd mean(const Eigen::VectorXd& obs) const {
    return net.forward(obs);
  }
  GaussianSample act(const Eigen::VectorXd& obs, RngStream& rng) const {
    return gaussian_sample(net.forward(obs), log_std, rng);
  }
  void clamp_log_std() {
    log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  GradBuffer m, v;
  long step = 0;
  bool initialized = false;
};

// One Adam step on net (and log_std when grad.log_std is non-empty).
void adam_step(Mlp& net, Eigen::VectorXd* log_std, const GradBuffer& grad,
               AdamState& state, double lr, const AdamConfig& cfg = {});

inline void adam_step(Mlp& net, const GradBuffer& grad, AdamState& state,
                      double lr, const AdamConfig& cfg = {}) {
  adam_step(net, nullptr, grad, state, lr, cfg);
}

// Checkpoint serialization. Versioned; loaders reject other versions.
nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const GaussianPolicy& p,
                              const AdamState* opt = nullptr);
GaussianPolicy policy_from_json(const nlohmann::json& j,
                                AdamState* opt = nullptr);
nlohmann::json adam_to_json(const AdamState& s);
AdamState adam_from_json(const nlohmann::json& j, const Mlp& shapes_like);

void save_checkpoint(const std::string& path, const nlohmann::json& j);
nlohmann::json load_checkpoint(const std::string& path);

}  // namespace blendid
