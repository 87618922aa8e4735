#include "blendid/blending.hpp"

#include <stdexcept>

namespace blendid {

using nlohmann::json;

Eigen::Vector2d blend_combine(const std::vector<Eigen::Vector2d>& sub_actions,
                              const Eigen::VectorXd& weights) {
  const int n = static_cast<int>(sub_actions.size());
  if (weights.size() != n || n == 0) {
    throw std::invalid_argument("blend_combine: weight/action count mismatch");
  }
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) a += weights[i] * sub_actions[i];
  return a / n;
}

Eigen::Vector2d blend_action(const std::vector<Eigen::Vector2d>& sub_actions,
                             const Eigen::VectorXd& weights) {
  return blend_combine(sub_actions, weights)
      .cwiseMax(-1.0)
      .cwiseMin(1.0);
}

BlendStep blend_step(const GaussianPolicy& gate, const SubPolicySet& subs,
                     const Eigen::VectorXd& obs,
                     const Eigen::Vector4d& estimate, RngStream* rng) {
  BlendStep out;
  const Eigen::VectorXd gate_in = estimate;
  out.weights = rng ? gate.act(gate_in, *rng).action : gate.mean(gate_in);
  out.sub_actions.reserve(subs.policies.size());
  for (const auto& p : subs.policies) {
    out.sub_actions.push_back(Eigen::Vector2d(p.mean(obs)));
  }
  out.action = blend_action(out.sub_actions, out.weights);
  return out;
}

BlendTask::BlendTask(EnvConfig cfg, ImpairmentSampler sampler,
                     SubPolicySet subs, Estimator& estimator)
    : env_(std::move(cfg)),
      sampler_(std::move(sampler)),
      subs_(std::move(subs)),
      estimator_(estimator) {
  trace_obs_.resize(kObsDim, env_.config().horizon);
  trace_act_.resize(kActDim, env_.config().horizon);
}

Eigen::VectorXd BlendTask::reset(RngStream& rng) {
  ParamVector params = sampler_(rng);
  obs_ = env_.reset(params, rng.child(0));
  estimator_.begin_episode(params, rng);
  estimate_ = estimator_.estimate();
  trace_len_ = 0;
  return estimate_;
}

AgentTask::Feedback BlendTask::step(const Eigen::VectorXd& weights) {
  std::vector<Eigen::Vector2d> sub_actions;
  sub_actions.reserve(subs_.policies.size());
  for (const auto& p : subs_.policies) {
    sub_actions.push_back(Eigen::Vector2d(p.mean(obs_)));
  }
  const Eigen::Vector2d action = blend_action(sub_actions, weights);

  trace_obs_.col(trace_len_) = obs_;
  trace_act_.col(trace_len_) = action;
  ++trace_len_;

  StepResult r = env_.step(action);
  obs_ = r.obs;
  if (r.done) {
    TraceWindow w{trace_obs_.leftCols(trace_len_),
                  trace_act_.leftCols(trace_len_)};
    estimator_.end_episode(w, env_.params());
  }
  return Feedback{estimate_, r.reward, r.force, r.done};
}

EstimatorKind BlendBundle::estimator_kind() const {
  return estimator_kind_from_string(
      estimator_state.at("kind").get<std::string>());
}

json blend_bundle_to_json(const BlendBundle& b) {
  json j;
  j["format_version"] = kCheckpointVersion;
  j["kind"] = "blend_bundle";
  j["gate"] = policy_to_json(b.gate);
  json subs = json::array();
  for (const auto& p : b.subs.policies) subs.push_back(policy_to_json(p));
  j["subs"] = std::move(subs);
  j["sub_names"] = b.sub_names;
  j["estimator"] = b.estimator_state;
  return j;
}

BlendBundle blend_bundle_from_json(const json& j) {
  if (j.at("format_version").get<int>() != kCheckpointVersion ||
      j.at("kind").get<std::string>() != "blend_bundle") {
    throw std::runtime_error("not a blend bundle checkpoint");
  }
  BlendBundle b;
  b.gate = policy_from_json(j.at("gate"));
  for (const auto& js : j.at("subs")) {
    b.subs.policies.push_back(policy_from_json(js));
  }
  b.sub_names = j.at("sub_names").get<std::vector<std::string>>();
  b.estimator_state = j.at("estimator");
  return b;
}

}  // namespace blendid
