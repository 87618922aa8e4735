#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "blendid/rng.hpp"

namespace blendid {

// Number of varying system parameters: two per-joint noise stds, one
// weakness gain, one range-of-motion multiplier.
inline constexpr int kNumParams = 4;
inline constexpr int kObsDim = 14;
inline constexpr int kActDim = 2;

// Impairment magnitudes of the simulated human. Flattening order is fixed:
// [noise_std[0], noise_std[1], weakness, range_limit].
struct ParamVector {
  Eigen::Vector2d noise_std{0.0, 0.0};  // involuntary motion std, rad
  double weakness = 1.0;                // command gain in [0.25, 1]
  double range_limit = 1.0;             // joint-limit multiplier in [0.5, 1]

  Eigen::Vector4d flatten() const {
    return {noise_std[0], noise_std[1], weakness, range_limit};
  }

  static ParamVector from_flat(const Eigen::Vector4d& v) {
    return ParamVector{{v[0], v[1]}, v[2], v[3]};
  }

  static ParamVector neutral() { return ParamVector{}; }
};

// Box bounds of the parameter space. Impairment samples are clipped here so
// the space stays convex.
struct ParamBounds {
  ParamVector lo;
  ParamVector hi;

  static ParamBounds defaults() {
    ParamBounds b;
    b.lo = ParamVector{{0.0, 0.0}, 0.25, 0.5};
    b.hi = ParamVector{{0.35, 0.35}, 1.0, 1.0};
    return b;
  }

  ParamVector clip(const ParamVector& p) const {
    Eigen::Vector4d v = p.flatten();
    Eigen::Vector4d l = lo.flatten();
    Eigen::Vector4d h = hi.flatten();
    return ParamVector::from_flat(v.cwiseMax(l).cwiseMin(h));
  }

  Eigen::Vector4d range() const { return hi.flatten() - lo.flatten(); }
  Eigen::Vector4d midpoint() const {
    return 0.5 * (lo.flatten() + hi.flatten());
  }
};

// Planar two-arm world: an impaired human arm scratches-to-be at a target on
// its own forearm, a robot arm applies the force. All constants are
// config-file overridable.
struct EnvConfig {
  double dt = 0.1;    // s
  int horizon = 200;  // steps per episode (20 s)

  Eigen::Vector2d human_lengths{0.5, 0.4};
  Eigen::Vector2d human_base{0.0, 0.0};
  Eigen::Vector2d robot_lengths{0.5, 0.4};
  Eigen::Vector2d robot_base{1.2, 0.0};

  double human_kp = 2.0;                    // s^-1, scripted P controller
  double human_joint_limit = 1.5707963267948966;  // rad, nominal +/- limit
  Eigen::Vector2d target_amplitude{0.6, 0.4};     // rad, scripted motion
  double target_omega = 0.5;                // rad/s
  double velocity_clamp = 2.0;              // rad/s, both arms

  Eigen::Vector2d robot_init_angles{1.5707963267948966, 0.0};

  double contact_radius = 0.05;     // m
  double contact_stiffness = 100.0; // N/m

  double w_distance = -1.0;  // 1/m
  double w_action = -0.01;
  double w_force = 1.0;      // 1/N
};

struct StepResult {
  Eigen::VectorXd obs;  // 14-vector
  double reward = 0.0;
  double force = 0.0;  // N
  bool done = false;
};

enum class Scenario { involuntary, weak, limited, combined, dr };

Scenario scenario_from_string(const std::string& name);
std::string to_string(Scenario s);

// Distribution constants for impairment sampling (see sample_impairments).
struct ImpairmentDistributions {
  double involuntary_noise_std = 5.0 * 3.14159265358979323846 / 180.0;
  double weak_mean = 0.66;
  double weak_std = 0.2;
  double limited_mean = 0.75;
  double limited_std = 0.1;
  double dr_noise_hi = 10.0 * 3.14159265358979323846 / 180.0;
};

// Planar 2-link forward kinematics.
Eigen::Vector2d forward_kinematics(const Eigen::Vector2d& angles,
                                   const Eigen::Vector2d& lengths,
                                   const Eigen::Vector2d& base);

// Itch target: midpoint of the human forearm link.
Eigen::Vector2d target_position(const Eigen::Vector2d& human_angles,
                                const EnvConfig& cfg);

// Weakness gain plus involuntary-motion noise on a joint-velocity command;
// result clamped to +/- velocity_clamp. Range limiting is enforced at state
// clamping, not here.
Eigen::Vector2d apply_impairments(const Eigen::Vector2d& command,
                                  const ParamVector& params, RngStream& rng,
                                  double velocity_clamp = 2.0);

// Penalty-spring contact proxy: k_c * max(0, r_c - ||effector - target||).
double contact_force(const Eigen::Vector2d& effector,
                     const Eigen::Vector2d& target, const EnvConfig& cfg);

double reward(double distance, const Eigen::Vector2d& action, double force,
              const EnvConfig& cfg);

// Per-step reward bounds [lo, hi] for the given config; used by invariant
// checks. d_max is a reachability upper bound on effector-target separation.
std::pair<double, double> reward_bounds(const EnvConfig& cfg);

ParamVector sample_impairments(Scenario scenario, RngStream& rng,
                               const ImpairmentDistributions& dists = {},
                               const ParamBounds& bounds = ParamBounds::defaults());

// Single-episode state machine. One instance per rollout worker; episodes
// are deterministic given (config, params, rng stream, action sequence).
class Env {
 public:
  explicit Env(EnvConfig cfg = {});

  Eigen::VectorXd reset(const ParamVector& params, RngStream rng);
  StepResult step(const Eigen::Vector2d& robot_action);

  Eigen::VectorXd observation() const;
  bool done() const { return step_idx_ >= cfg_.horizon; }
  int step_index() const { return step_idx_; }
  double accumulated_force() const { return accumulated_force_; }
  const ParamVector& params() const { return params_; }
  const EnvConfig& config() const { return cfg_; }

 private:
  EnvConfig cfg_;
  ParamVector params_;
  RngStream rng_{0};
  Eigen::Vector2d human_q_{0.0, 0.0}, human_qd_{0.0, 0.0};
  Eigen::Vector2d robot_q_{0.0, 0.0}, robot_qd_{0.0, 0.0};
  int step_idx_ = 0;
  double accumulated_force_ = 0.0;
};

// Per-episode impairment source used by trainers and evaluation.
using ImpairmentSampler = std::function<ParamVector(RngStream&)>;

ImpairmentSampler scenario_sampler(
    Scenario scenario, const ImpairmentDistributions& dists = {},
    const ParamBounds& bounds = ParamBounds::defaults());

}  // namespace blendid
