#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "blendid/blending.hpp"
#include "blendid/env.hpp"
#include "blendid/ppo.hpp"
#include "blendid/sysid.hpp"

namespace blendid {

inline PpoConfig default_blend_ppo() {
  PpoConfig c;
  c.total_steps = 100000;
  return c;
}

// Every tunable of the experiment stack. JSON config files override only the
// fields they name; everything else keeps these defaults.
struct HarnessConfig {
  EnvConfig env;
  ParamBounds bounds = ParamBounds::defaults();
  ImpairmentDistributions dists;
  PpoConfig ppo_sub;                         // specialists and the DR baseline
  PpoConfig ppo_blend = default_blend_ppo();  // gate on top of frozen subs
  UkfParams ukf;
  SpmConfig spm;
  int eval_episodes = 100;
  std::uint64_t train_seed = 1;  // default training seed; eval loads these
};

nlohmann::json config_to_json(const HarnessConfig& c);
HarnessConfig config_from_json(const nlohmann::json& j);
HarnessConfig load_config(const std::string& path);  // "" -> defaults

std::uint64_t fnv1a64(const std::string& s);
std::uint64_t config_hash(const HarnessConfig& c);

// Agents under evaluation: a bare policy or a blend bundle. Episodes run
// deterministic means; only estimator measurement noise draws from rng.
class EvalAgent {
 public:
  virtual ~EvalAgent() = default;
  virtual void begin_episode(const ParamVector&, RngStream&) {}
  virtual Eigen::Vector2d act(const Eigen::VectorXd& obs) = 0;
  virtual void end_episode(const TraceWindow&, const ParamVector&) {}
  virtual bool has_estimate() const { return false; }
  virtual Eigen::Vector4d estimate() const { return Eigen::Vector4d::Zero(); }
};

class PolicyAgent : public EvalAgent {
 public:
  explicit PolicyAgent(GaussianPolicy policy) : policy_(std::move(policy)) {}
  Eigen::Vector2d act(const Eigen::VectorXd& obs) override {
    return Eigen::Vector2d(policy_.mean(obs));
  }

 private:
  GaussianPolicy policy_;
};

class BlendAgent : public EvalAgent {
 public:
  explicit BlendAgent(BlendBundle bundle);

  void begin_episode(const ParamVector& truth, RngStream& rng) override;
  Eigen::Vector2d act(const Eigen::VectorXd& obs) override;
  void end_episode(const TraceWindow& w, const ParamVector& truth) override;
  bool has_estimate() const override { return true; }
  Eigen::Vector4d estimate() const override { return estimate_; }

  const Estimator& estimator() const { return *estimator_; }

 private:
  BlendBundle bundle_;
  std::unique_ptr<Estimator> estimator_;
  Eigen::Vector4d estimate_;
};

struct EpisodeRecord {
  double reward = 0.0;  // undiscounted episode return
  double force = 0.0;   // cumulative contact force
  ParamVector params;
  Eigen::Vector4d estimate = Eigen::Vector4d::Zero();
};

struct EvalResult {
  std::string method;
  std::string scenario;
  bool has_estimates = false;
  std::vector<EpisodeRecord> episodes;

  std::vector<double> forces() const;
  std::vector<double> rewards() const;
};

// n_episodes with per-episode streams derived from seed, shared across
// methods so comparisons use common random numbers.
EvalResult run_episodes(EvalAgent& agent, const EnvConfig& env_cfg,
                        const ImpairmentSampler& sampler, int n_episodes,
                        std::uint64_t seed);

// Nearest-rank quartiles (1-based ceil(p*n)); stdev is the sample estimate.
struct SummaryStats {
  double mean = 0, stdev = 0, min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
SummaryStats summarize(std::vector<double> values);

enum class Method {
  dr,
  sub_involuntary,
  sub_weak,
  sub_limited,
  ukf,
  spm,
  perfect
};
Method method_from_string(const std::string& name);
std::string to_string(Method m);
bool method_is_blend(Method m);

// out/<checkpoints|curves|eval|report> file layout.
std::string checkpoint_dir(const std::string& out);
std::string curves_dir(const std::string& out);
std::string eval_dir(const std::string& out);
std::string report_dir(const std::string& out);
std::string sub_checkpoint_name(Scenario sc, std::uint64_t seed);
std::string dr_checkpoint_name(std::uint64_t seed);
std::string blend_checkpoint_name(EstimatorKind kind, std::uint64_t seed);

// Training entry points shared by the CLI and the experiment pipeline.
TrainResult run_train_sub(const HarnessConfig& cfg, Scenario sc,
                          std::uint64_t seed, const ProgressFn& progress = {});
TrainResult run_train_dr(const HarnessConfig& cfg, std::uint64_t seed,
                         const ProgressFn& progress = {});

struct BlendTrainOutput {
  TrainResult result;
  BlendBundle bundle;
};
BlendTrainOutput run_train_blend(const HarnessConfig& cfg, EstimatorKind kind,
                                 SubPolicySet subs,
                                 std::vector<std::string> sub_names,
                                 std::uint64_t seed,
                                 const ProgressFn& progress = {});

// Command bodies behind the CLI; they create the out layout, write
// checkpoints/curves/CSVs and refresh out/manifest.json.
void cmd_train_sub(const HarnessConfig& cfg, Scenario sc, std::uint64_t seed,
                   const std::string& out);
void cmd_train_dr(const HarnessConfig& cfg, std::uint64_t seed,
                  const std::string& out);
void cmd_train_blend(const HarnessConfig& cfg, EstimatorKind kind,
                     std::uint64_t seed, const std::string& out);
EvalResult cmd_eval(const HarnessConfig& cfg, Method method, Scenario scenario,
                    std::uint64_t seed, const std::string& out);
void cmd_report(const std::string& out);

int selftest(std::ostream& os);

int cli(int argc, char** argv);

}  // namespace blendid
