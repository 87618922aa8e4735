#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "blendid/env.hpp"
#include "blendid/nn.hpp"
#include "blendid/rng.hpp"

namespace blendid {

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double learning_rate = 3e-4;
  int rollout_steps = 4000;  // 20 episodes at horizon 200
  int update_epochs = 10;
  int minibatch_size = 500;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  long total_steps = 300000;
};

// Rollout interface the trainer sees. Wrapping the environment here keeps
// PPO agnostic to whether actions drive robot joints directly or blending
// weights through the gate.
class AgentTask {
 public:
  struct Feedback {
    Eigen::VectorXd state;
    double reward = 0.0;
    double force = 0.0;
    bool done = false;
  };

  virtual ~AgentTask() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int horizon() const = 0;
  virtual Eigen::VectorXd reset(RngStream& rng) = 0;
  virtual Feedback step(const Eigen::VectorXd& action) = 0;
};

// Policy sees the raw 14-dim observation and outputs joint velocities.
class EnvTask : public AgentTask {
 public:
  EnvTask(EnvConfig cfg, ImpairmentSampler sampler);

  int state_dim() const override { return kObsDim; }
  int action_dim() const override { return kActDim; }
  int horizon() const override { return env_.config().horizon; }
  Eigen::VectorXd reset(RngStream& rng) override;
  Feedback step(const Eigen::VectorXd& action) override;

  const Env& env() const { return env_; }

 private:
  Env env_;
  ImpairmentSampler sampler_;
};

// One on-policy batch; columns are timesteps.
struct RolloutBuffer {
  Eigen::MatrixXd states;      // state_dim x n
  Eigen::MatrixXd actions;     // act_dim x n
  Eigen::VectorXd log_probs;   // under the policy that collected the batch
  Eigen::VectorXd rewards;
  Eigen::VectorXd values;
  Eigen::VectorXd time_frac;   // t/horizon at decision time
  std::vector<std::uint8_t> dones;  // episode ended after step t
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  std::vector<double> episode_rewards;  // completed episodes only

  int size() const { return static_cast<int>(log_probs.size()); }
};

// Value-net input: state with normalized episode time appended. The time
// feature is for the critic only; policies never see it.
Eigen::VectorXd value_input(const Eigen::VectorXd& state, double time_frac);

// GAE(gamma, lambda) over a batch with episode boundaries marked in dones.
// last_value bootstraps past the final transition when it is non-terminal.
void compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                 const std::vector<std::uint8_t>& dones, double gamma,
                 double lambda, double last_value, Eigen::VectorXd* advantages,
                 Eigen::VectorXd* returns);

RolloutBuffer collect_rollout(AgentTask& task, const GaussianPolicy& policy,
                              const Mlp& value_net, int n_steps,
                              RngStream& rng, const PpoConfig& cfg);

struct PpoLossStats {
  double policy_loss = 0.0;  // negated clipped surrogate
  double value_loss = 0.0;   // unweighted MSE
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;    // mean(logp_old - logp_new)
};

// Total minibatch loss: policy + value_coef * value - entropy_coef * entropy.
double ppo_minibatch_loss(const GaussianPolicy& policy, const Mlp& value_net,
                          const RolloutBuffer& buf,
                          const std::vector<int>& idx, const PpoConfig& cfg);

// Accumulates d(total loss)/d(params) into the two grad buffers (which must
// be zeroed and shaped by the caller) and reports minibatch statistics.
PpoLossStats ppo_minibatch_grads(const GaussianPolicy& policy,
                                 const Mlp& value_net,
                                 const RolloutBuffer& buf,
                                 const std::vector<int>& idx,
                                 const PpoConfig& cfg, GradBuffer* policy_grad,
                                 GradBuffer* value_grad);

// Runs update_epochs passes of shuffled minibatch Adam steps on one buffer.
// Advantages are normalized once per buffer. Gradients are jointly clipped
// to max_grad_norm by global norm.
PpoLossStats ppo_update(GaussianPolicy& policy, Mlp& value_net,
                        AdamState& policy_opt, AdamState& value_opt,
                        RolloutBuffer& buf, const PpoConfig& cfg,
                        RngStream& rng);

struct CurvePoint {
  long timestep = 0;         // cumulative env steps
  double avg_reward = 0.0;   // mean of the last <=50 episode returns
};

struct TrainCurve {
  std::vector<CurvePoint> points;
  void write_csv(const std::string& path, std::uint64_t seed) const;
};

struct TrainResult {
  GaussianPolicy policy;  // snapshot with the best moving-average return
  Mlp value_net;          // final critic
  TrainCurve curve;
  double best_avg_reward = 0.0;
  long steps_trained = 0;
};

using ProgressFn = std::function<void(long steps, double avg_reward)>;

TrainResult train_ppo(AgentTask& task, const PpoConfig& cfg,
                      std::uint64_t seed, const ProgressFn& progress = {});

}  // namespace blendid
