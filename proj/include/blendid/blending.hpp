#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"

#include "blendid/env.hpp"
#include "blendid/nn.hpp"
#include "blendid/ppo.hpp"
#include "blendid/sysid.hpp"

namespace blendid {

// Frozen specialist policies in fixed blend order; weight i scales policy i.
inline constexpr int kNumSubPolicies = 3;

struct SubPolicySet {
  // Order: [involuntary, weak, limited].
  std::vector<GaussianPolicy> policies;

  int size() const { return static_cast<int>(policies.size()); }
};

// a = (1/N) * sum_i w_i * a_i. Weights are unconstrained reals.
Eigen::Vector2d blend_combine(const std::vector<Eigen::Vector2d>& sub_actions,
                              const Eigen::VectorXd& weights);

// blend_combine clamped to the actuator box [-1, 1].
Eigen::Vector2d blend_action(const std::vector<Eigen::Vector2d>& sub_actions,
                             const Eigen::VectorXd& weights);

struct BlendStep {
  Eigen::VectorXd weights;
  std::vector<Eigen::Vector2d> sub_actions;
  Eigen::Vector2d action;
};

// One gate decision: gate reads ONLY the parameter estimate, specialists
// read the full observation and contribute their deterministic means. Pass
// rng to sample gate weights, nullptr for the gate mean.
BlendStep blend_step(const GaussianPolicy& gate, const SubPolicySet& subs,
                     const Eigen::VectorXd& obs,
                     const Eigen::Vector4d& estimate, RngStream* rng);

// PPO task for gate training. The trainer's action is the weight vector;
// the state it sees is the estimator output alone (dim kNumParams), held
// fixed within an episode.
class BlendTask : public AgentTask {
 public:
  BlendTask(EnvConfig cfg, ImpairmentSampler sampler, SubPolicySet subs,
            Estimator& estimator);

  int state_dim() const override { return kNumParams; }
  int action_dim() const override { return subs_.size(); }
  int horizon() const override { return env_.config().horizon; }
  Eigen::VectorXd reset(RngStream& rng) override;
  Feedback step(const Eigen::VectorXd& weights) override;

  const Env& env() const { return env_; }
  const Estimator& estimator() const { return estimator_; }

 private:
  Env env_;
  ImpairmentSampler sampler_;
  SubPolicySet subs_;
  Estimator& estimator_;
  Eigen::VectorXd obs_;
  Eigen::Vector4d estimate_;
  Eigen::MatrixXd trace_obs_;  // kObsDim x horizon
  Eigen::MatrixXd trace_act_;  // kActDim x horizon
  int trace_len_ = 0;
};

// Everything eval needs to run a blending agent.
struct BlendBundle {
  GaussianPolicy gate;
  SubPolicySet subs;
  std::vector<std::string> sub_names;  // provenance, blend order
  nlohmann::json estimator_state;

  EstimatorKind estimator_kind() const;
};

nlohmann::json blend_bundle_to_json(const BlendBundle& b);
BlendBundle blend_bundle_from_json(const nlohmann::json& j);

}  // namespace blendid
