#include "blendid/env.hpp"

#include <cmath>
#include <stdexcept>

namespace blendid {

namespace {

double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

Eigen::Vector2d clamp_vec(const Eigen::Vector2d& v, double lo, double hi) {
  return {clamp(v[0], lo, hi), clamp(v[1], lo, hi)};
}

}  // namespace

Scenario scenario_from_string(const std::string& name) {
  if (name == "involuntary") return Scenario::involuntary;
  if (name == "weak") return Scenario::weak;
  if (name == "limited") return Scenario::limited;
  if (name == "combined") return Scenario::combined;
  if (name == "dr") return Scenario::dr;
  throw std::invalid_argument("unknown scenario: " + name);
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::involuntary: return "involuntary";
    case Scenario::weak: return "weak";
    case Scenario::limited: return "limited";
    case Scenario::combined: return "combined";
    case Scenario::dr: return "dr";
  }
  throw std::invalid_argument("invalid scenario value");
}

Eigen::Vector2d forward_kinematics(const Eigen::Vector2d& angles,
                                   const Eigen::Vector2d& lengths,
                                   const Eigen::Vector2d& base) {
  const double a1 = angles[0];
  const double a12 = angles[0] + angles[1];
  return base + lengths[0] * Eigen::Vector2d{std::cos(a1), std::sin(a1)} +
         lengths[1] * Eigen::Vector2d{std::cos(a12), std::sin(a12)};
}

Eigen::Vector2d target_position(const Eigen::Vector2d& human_angles,
                                const EnvConfig& cfg) {
  Eigen::Vector2d half{cfg.human_lengths[0], 0.5 * cfg.human_lengths[1]};
  return forward_kinematics(human_angles, half, cfg.human_base);
}

Eigen::Vector2d apply_impairments(const Eigen::Vector2d& command,
                                  const ParamVector& params, RngStream& rng,
                                  double velocity_clamp) {
  Eigen::Vector2d noise{rng.normal(0.0, params.noise_std[0]),
                        rng.normal(0.0, params.noise_std[1])};
  Eigen::Vector2d impaired = params.weakness * command + noise;
  return clamp_vec(impaired, -velocity_clamp, velocity_clamp);
}

double contact_force(const Eigen::Vector2d& effector,
                     const Eigen::Vector2d& target, const EnvConfig& cfg) {
  double d = (effector - target).norm();
  return cfg.contact_stiffness * std::max(0.0, cfg.contact_radius - d);
}

double reward(double distance, const Eigen::Vector2d& action, double force,
              const EnvConfig& cfg) {
  return cfg.w_distance * distance + cfg.w_action * action.squaredNorm() +
         cfg.w_force * force;
}

std::pair<double, double> reward_bounds(const EnvConfig& cfg) {
  double robot_reach = cfg.robot_lengths.sum();
  double target_reach = cfg.human_lengths[0] + 0.5 * cfg.human_lengths[1];
  double d_max = (cfg.robot_base - cfg.human_base).norm() + robot_reach +
                 target_reach;
  double lo = cfg.w_distance * d_max + cfg.w_action * 2.0;
  double hi = cfg.w_force * cfg.contact_stiffness * cfg.contact_radius;
  return {lo, hi};
}

ParamVector sample_impairments(Scenario scenario, RngStream& rng,
                               const ImpairmentDistributions& dists,
                               const ParamBounds& bounds) {
  ParamVector p = ParamVector::neutral();
  switch (scenario) {
    case Scenario::involuntary:
      p.noise_std = {dists.involuntary_noise_std, dists.involuntary_noise_std};
      break;
    case Scenario::weak:
      p.weakness = rng.normal(dists.weak_mean, dists.weak_std);
      break;
    case Scenario::limited:
      p.range_limit = rng.normal(dists.limited_mean, dists.limited_std);
      break;
    case Scenario::combined:
      p.noise_std = {dists.involuntary_noise_std, dists.involuntary_noise_std};
      p.weakness = rng.normal(dists.weak_mean, dists.weak_std);
      p.range_limit = rng.normal(dists.limited_mean, dists.limited_std);
      break;
    case Scenario::dr:
      p.noise_std = {rng.uniform(0.0, dists.dr_noise_hi),
                     rng.uniform(0.0, dists.dr_noise_hi)};
      p.weakness = rng.uniform(bounds.lo.weakness, bounds.hi.weakness);
      p.range_limit = rng.uniform(bounds.lo.range_limit, bounds.hi.range_limit);
      break;
  }
  return bounds.clip(p);
}

ImpairmentSampler scenario_sampler(Scenario scenario,
                                   const ImpairmentDistributions& dists,
                                   const ParamBounds& bounds) {
  return [scenario, dists, bounds](RngStream& rng) {
    return sample_impairments(scenario, rng, dists, bounds);
  };
}

Env::Env(EnvConfig cfg) : cfg_(std::move(cfg)) {}

Eigen::VectorXd Env::reset(const ParamVector& params, RngStream rng) {
  params_ = params;
  rng_ = rng;
  human_q_.setZero();
  human_qd_.setZero();
  robot_q_ = cfg_.robot_init_angles;
  robot_qd_.setZero();
  step_idx_ = 0;
  accumulated_force_ = 0.0;
  return observation();
}

Eigen::VectorXd Env::observation() const {
  Eigen::Vector2d target = target_position(human_q_, cfg_);
  Eigen::Vector2d effector =
      forward_kinematics(robot_q_, cfg_.robot_lengths, cfg_.robot_base);
  Eigen::VectorXd obs(kObsDim);
  obs << human_q_, human_qd_, robot_q_, robot_qd_, target, effector,
      target - effector;
  return obs;
}

StepResult Env::step(const Eigen::Vector2d& robot_action) {
  if (done()) {
    throw std::logic_error("Env::step called on a finished episode");
  }
  Eigen::Vector2d action = clamp_vec(robot_action, -1.0, 1.0);

  // Scripted human: P controller toward the itch-side motion targets.
  double t = step_idx_ * cfg_.dt;
  Eigen::Vector2d theta_star =
      cfg_.target_amplitude * std::sin(cfg_.target_omega * t);
  Eigen::Vector2d human_cmd = clamp_vec(cfg_.human_kp * (theta_star - human_q_),
                                        -cfg_.velocity_clamp,
                                        cfg_.velocity_clamp);
  human_qd_ = apply_impairments(human_cmd, params_, rng_, cfg_.velocity_clamp);
  // The action *is* the robot joint-velocity command (rad/s), already in
  // [-1,1]; the 2 rad/s clamp therefore never binds for the robot.
  robot_qd_ = action;

  human_q_ += cfg_.dt * human_qd_;
  robot_q_ += cfg_.dt * robot_qd_;

  double limit = params_.range_limit * cfg_.human_joint_limit;
  human_q_ = clamp_vec(human_q_, -limit, limit);

  Eigen::Vector2d target = target_position(human_q_, cfg_);
  Eigen::Vector2d effector =
      forward_kinematics(robot_q_, cfg_.robot_lengths, cfg_.robot_base);
  double distance = (effector - target).norm();
  double force = contact_force(effector, target, cfg_);

  accumulated_force_ += force;
  ++step_idx_;

  StepResult out;
  out.obs = observation();
  out.reward = reward(distance, action, force, cfg_);
  out.force = force;
  out.done = done();
  return out;
}

}  // namespace blendid
