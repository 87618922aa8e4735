#include "blendid/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"

#include "blendid/csv.hpp"

namespace blendid {

namespace fs = std::filesystem;
using nlohmann::json;

// --- config -----------------------------------------------------------------

namespace {

std::vector<double> to_vec(const Eigen::Vector2d& v) { return {v[0], v[1]}; }

std::vector<double> to_vec(const Eigen::Vector4d& v) {
  return {v[0], v[1], v[2], v[3]};
}

template <class T>
void ov(const json& j, const char* key, T* dst) {
  if (j.contains(key)) *dst = j.at(key).get<T>();
}

void ov(const json& j, const char* key, Eigen::Vector2d* dst) {
  if (!j.contains(key)) return;
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 2) {
    throw std::runtime_error(std::string("config: ") + key + " needs 2 values");
  }
  *dst = Eigen::Vector2d(v[0], v[1]);
}

void ov(const json& j, const char* key, Eigen::Vector4d* dst) {
  if (!j.contains(key)) return;
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 4) {
    throw std::runtime_error(std::string("config: ") + key + " needs 4 values");
  }
  *dst = Eigen::Vector4d(v[0], v[1], v[2], v[3]);
}

json ppo_to_json(const PpoConfig& c) {
  json j;
  j["gamma"] = c.gamma;
  j["gae_lambda"] = c.gae_lambda;
  j["clip_eps"] = c.clip_eps;
  j["learning_rate"] = c.learning_rate;
  j["rollout_steps"] = c.rollout_steps;
  j["update_epochs"] = c.update_epochs;
  j["minibatch_size"] = c.minibatch_size;
  j["value_coef"] = c.value_coef;
  j["entropy_coef"] = c.entropy_coef;
  j["max_grad_norm"] = c.max_grad_norm;
  j["total_steps"] = c.total_steps;
  return j;
}

void ppo_override(const json& j, PpoConfig* c) {
  ov(j, "gamma", &c->gamma);
  ov(j, "gae_lambda", &c->gae_lambda);
  ov(j, "clip_eps", &c->clip_eps);
  ov(j, "learning_rate", &c->learning_rate);
  ov(j, "rollout_steps", &c->rollout_steps);
  ov(j, "update_epochs", &c->update_epochs);
  ov(j, "minibatch_size", &c->minibatch_size);
  ov(j, "value_coef", &c->value_coef);
  ov(j, "entropy_coef", &c->entropy_coef);
  ov(j, "max_grad_norm", &c->max_grad_norm);
  ov(j, "total_steps", &c->total_steps);
}

}  // namespace

json config_to_json(const HarnessConfig& c) {
  json j;
  json env;
  env["dt"] = c.env.dt;
  env["horizon"] = c.env.horizon;
  env["human_lengths"] = to_vec(c.env.human_lengths);
  env["human_base"] = to_vec(c.env.human_base);
  env["robot_lengths"] = to_vec(c.env.robot_lengths);
  env["robot_base"] = to_vec(c.env.robot_base);
  env["human_kp"] = c.env.human_kp;
  env["human_joint_limit"] = c.env.human_joint_limit;
  env["target_amplitude"] = to_vec(c.env.target_amplitude);
  env["target_omega"] = c.env.target_omega;
  env["velocity_clamp"] = c.env.velocity_clamp;
  env["robot_init_angles"] = to_vec(c.env.robot_init_angles);
  env["contact_radius"] = c.env.contact_radius;
  env["contact_stiffness"] = c.env.contact_stiffness;
  env["w_distance"] = c.env.w_distance;
  env["w_action"] = c.env.w_action;
  env["w_force"] = c.env.w_force;
  j["env"] = std::move(env);

  j["bounds"] = {{"lo", to_vec(c.bounds.lo.flatten())},
                 {"hi", to_vec(c.bounds.hi.flatten())}};

  json dists;
  dists["involuntary_noise_std"] = c.dists.involuntary_noise_std;
  dists["weak_mean"] = c.dists.weak_mean;
  dists["weak_std"] = c.dists.weak_std;
  dists["limited_mean"] = c.dists.limited_mean;
  dists["limited_std"] = c.dists.limited_std;
  dists["dr_noise_hi"] = c.dists.dr_noise_hi;
  j["dists"] = std::move(dists);

  j["ppo_sub"] = ppo_to_json(c.ppo_sub);
  j["ppo_blend"] = ppo_to_json(c.ppo_blend);

  json ukf;
  ukf["alpha"] = c.ukf.alpha;
  ukf["beta"] = c.ukf.beta;
  ukf["kappa"] = c.ukf.kappa;
  ukf["process_noise"] = c.ukf.process_noise;
  ukf["meas_noise_std"] = to_vec(c.ukf.meas_noise_std);
  j["ukf"] = std::move(ukf);

  json spm;
  spm["window"] = c.spm.window;
  spm["eta"] = c.spm.eta;
  spm["fifo_capacity"] = c.spm.fifo_capacity;
  spm["learning_rate"] = c.spm.learning_rate;
  spm["train_steps"] = c.spm.train_steps;
  spm["hidden"] = c.spm.hidden;
  j["spm"] = std::move(spm);

  j["eval_episodes"] = c.eval_episodes;
  j["train_seed"] = c.train_seed;
  return j;
}

HarnessConfig config_from_json(const json& j) {
  HarnessConfig c;
  if (j.contains("env")) {
    const json& e = j.at("env");
    ov(e, "dt", &c.env.dt);
    ov(e, "horizon", &c.env.horizon);
    ov(e, "human_lengths", &c.env.human_lengths);
    ov(e, "human_base", &c.env.human_base);
    ov(e, "robot_lengths", &c.env.robot_lengths);
    ov(e, "robot_base", &c.env.robot_base);
    ov(e, "human_kp", &c.env.human_kp);
    ov(e, "human_joint_limit", &c.env.human_joint_limit);
    ov(e, "target_amplitude", &c.env.target_amplitude);
    ov(e, "target_omega", &c.env.target_omega);
    ov(e, "velocity_clamp", &c.env.velocity_clamp);
    ov(e, "robot_init_angles", &c.env.robot_init_angles);
    ov(e, "contact_radius", &c.env.contact_radius);
    ov(e, "contact_stiffness", &c.env.contact_stiffness);
    ov(e, "w_distance", &c.env.w_distance);
    ov(e, "w_action", &c.env.w_action);
    ov(e, "w_force", &c.env.w_force);
  }
  if (j.contains("bounds")) {
    const json& b = j.at("bounds");
    Eigen::Vector4d lo = c.bounds.lo.flatten(), hi = c.bounds.hi.flatten();
    ov(b, "lo", &lo);
    ov(b, "hi", &hi);
    c.bounds.lo = ParamVector::from_flat(lo);
    c.bounds.hi = ParamVector::from_flat(hi);
  }
  if (j.contains("dists")) {
    const json& d = j.at("dists");
    ov(d, "involuntary_noise_std", &c.dists.involuntary_noise_std);
    ov(d, "weak_mean", &c.dists.weak_mean);
    ov(d, "weak_std", &c.dists.weak_std);
    ov(d, "limited_mean", &c.dists.limited_mean);
    ov(d, "limited_std", &c.dists.limited_std);
    ov(d, "dr_noise_hi", &c.dists.dr_noise_hi);
  }
  if (j.contains("ppo_sub")) ppo_override(j.at("ppo_sub"), &c.ppo_sub);
  if (j.contains("ppo_blend")) ppo_override(j.at("ppo_blend"), &c.ppo_blend);
  if (j.contains("ukf")) {
    const json& u = j.at("ukf");
    ov(u, "alpha", &c.ukf.alpha);
    ov(u, "beta", &c.ukf.beta);
    ov(u, "kappa", &c.ukf.kappa);
    ov(u, "process_noise", &c.ukf.process_noise);
    ov(u, "meas_noise_std", &c.ukf.meas_noise_std);
  }
  if (j.contains("spm")) {
    const json& s = j.at("spm");
    ov(s, "window", &c.spm.window);
    ov(s, "eta", &c.spm.eta);
    ov(s, "fifo_capacity", &c.spm.fifo_capacity);
    ov(s, "learning_rate", &c.spm.learning_rate);
    ov(s, "train_steps", &c.spm.train_steps);
    ov(s, "hidden", &c.spm.hidden);
  }
  ov(j, "eval_episodes", &c.eval_episodes);
  ov(j, "train_seed", &c.train_seed);
  return c;
}

HarnessConfig load_config(const std::string& path) {
  if (path.empty()) return HarnessConfig{};
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  json j;
  in >> j;
  return config_from_json(j);
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;  // FNV-1a offset basis
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t config_hash(const HarnessConfig& c) {
  return fnv1a64(config_to_json(c).dump());
}

// --- agents and evaluation ----------------------------------------------------

BlendAgent::BlendAgent(BlendBundle bundle)
    : bundle_(std::move(bundle)),
      estimator_(estimator_from_json(bundle_.estimator_state)),
      estimate_(estimator_->estimate()) {}

void BlendAgent::begin_episode(const ParamVector& truth, RngStream& rng) {
  estimator_->begin_episode(truth, rng);
  estimate_ = estimator_->estimate();
}

Eigen::Vector2d BlendAgent::act(const Eigen::VectorXd& obs) {
  return blend_step(bundle_.gate, bundle_.subs, obs, estimate_, nullptr).action;
}

void BlendAgent::end_episode(const TraceWindow& w, const ParamVector& truth) {
  estimator_->end_episode(w, truth);
}

std::vector<double> EvalResult::forces() const {
  std::vector<double> v;
  v.reserve(episodes.size());
  for (const auto& e : episodes) v.push_back(e.force);
  return v;
}

std::vector<double> EvalResult::rewards() const {
  std::vector<double> v;
  v.reserve(episodes.size());
  for (const auto& e : episodes) v.push_back(e.reward);
  return v;
}

EvalResult run_episodes(EvalAgent& agent, const EnvConfig& env_cfg,
                        const ImpairmentSampler& sampler, int n_episodes,
                        std::uint64_t seed) {
  EvalResult res;
  res.has_estimates = agent.has_estimate();
  Env env(env_cfg);
  Eigen::MatrixXd tobs(kObsDim, env_cfg.horizon);
  Eigen::MatrixXd tact(kActDim, env_cfg.horizon);

  for (int e = 0; e < n_episodes; ++e) {
    const auto id = static_cast<std::uint64_t>(e);
    RngStream prng(RngStream::mix(seed, 1), id);
    ParamVector params = sampler(prng);
    Eigen::VectorXd obs = env.reset(params, RngStream(RngStream::mix(seed, 2), id));
    RngStream srng(RngStream::mix(seed, 3), id);
    agent.begin_episode(params, srng);

    EpisodeRecord rec;
    rec.params = params;
    rec.estimate = agent.estimate();
    int len = 0;
    while (!env.done()) {
      const Eigen::Vector2d a = agent.act(obs);
      tobs.col(len) = obs;
      tact.col(len) = a;
      ++len;
      StepResult r = env.step(a);
      rec.reward += r.reward;
      obs = r.obs;
    }
    rec.force = env.accumulated_force();
    agent.end_episode(TraceWindow{tobs.leftCols(len), tact.leftCols(len)},
                      params);
    res.episodes.push_back(rec);
  }
  return res;
}

SummaryStats summarize(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  std::sort(values.begin(), values.end());
  const int n = static_cast<int>(values.size());
  SummaryStats s;
  s.min = values.front();
  s.max = values.back();
  auto nearest_rank = [&](double p) {
    const int r = std::max(1, static_cast<int>(std::ceil(p * n)));
    return values[r - 1];
  };
  s.q1 = nearest_rank(0.25);
  s.median = nearest_rank(0.5);
  s.q3 = nearest_rank(0.75);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stdev = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  return s;
}

Method method_from_string(const std::string& name) {
  if (name == "dr") return Method::dr;
  if (name == "involuntary") return Method::sub_involuntary;
  if (name == "weak") return Method::sub_weak;
  if (name == "limited") return Method::sub_limited;
  if (name == "ukf") return Method::ukf;
  if (name == "spm") return Method::spm;
  if (name == "perfect") return Method::perfect;
  throw std::invalid_argument("unknown method: " + name);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::dr: return "dr";
    case Method::sub_involuntary: return "involuntary";
    case Method::sub_weak: return "weak";
    case Method::sub_limited: return "limited";
    case Method::ukf: return "ukf";
    case Method::spm: return "spm";
    case Method::perfect: return "perfect";
  }
  throw std::logic_error("bad method");
}

bool method_is_blend(Method m) {
  return m == Method::ukf || m == Method::spm || m == Method::perfect;
}

// --- output layout ------------------------------------------------------------

std::string checkpoint_dir(const std::string& out) { return out + "/checkpoints"; }
std::string curves_dir(const std::string& out) { return out + "/curves"; }
std::string eval_dir(const std::string& out) { return out + "/eval"; }
std::string report_dir(const std::string& out) { return out + "/report"; }

std::string sub_checkpoint_name(Scenario sc, std::uint64_t seed) {
  return "sub_" + to_string(sc) + "_s" + std::to_string(seed) + ".json";
}

std::string dr_checkpoint_name(std::uint64_t seed) {
  return "dr_s" + std::to_string(seed) + ".json";
}

std::string blend_checkpoint_name(EstimatorKind kind, std::uint64_t seed) {
  return "blend_" + to_string(kind) + "_s" + std::to_string(seed) + ".json";
}

namespace {

void ensure_layout(const std::string& out) {
  for (const auto& d :
       {checkpoint_dir(out), curves_dir(out), eval_dir(out), report_dir(out)}) {
    fs::create_directories(d);
  }
}

std::string git_describe() {
  FILE* p = ::popen("git describe --always --dirty 2>/dev/null", "r");
  if (!p) return "unknown";
  char buf[256];
  std::string s;
  while (std::fgets(buf, sizeof buf, p)) s += buf;
  ::pclose(p);
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s.empty() ? "unknown" : s;
}

void write_manifest(const std::string& out, const std::string& command,
                    const HarnessConfig* cfg, std::uint64_t seed) {
  json j;
  j["command"] = command;
  j["git"] = git_describe();
  if (cfg != nullptr) {
    char hex[20];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(config_hash(*cfg)));
    j["config_hash"] = hex;
    j["seed"] = seed;
  }
  j["wall_time_unix"] = static_cast<long long>(std::time(nullptr));
  std::ofstream f(out + "/manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest in " + out);
  f << j.dump(2) << "\n";
}

void write_eval_csv(const std::string& path, const EvalResult& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "episode,reward,force\n";
  for (size_t i = 0; i < r.episodes.size(); ++i) {
    out << i << "," << csv_double(r.episodes[i].reward) << ","
        << csv_double(r.episodes[i].force) << "\n";
  }
}

void write_estimates_csv(const std::string& path, const EvalResult& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "episode,param_index,estimate,true\n";
  for (size_t i = 0; i < r.episodes.size(); ++i) {
    const Eigen::Vector4d truth = r.episodes[i].params.flatten();
    for (int k = 0; k < kNumParams; ++k) {
      out << i << "," << k << "," << csv_double(r.episodes[i].estimate[k])
          << "," << csv_double(truth[k]) << "\n";
    }
  }
}

ProgressFn print_progress(const std::string& tag) {
  return [tag](long steps, double avg) {
    std::printf("[%s] steps=%ld avg_reward=%.3f\n", tag.c_str(), steps, avg);
    std::fflush(stdout);
  };
}

std::string curve_name(const std::string& checkpoint_name) {
  return checkpoint_name.substr(0, checkpoint_name.size() - 5) + ".csv";
}

SubPolicySet load_subs(const HarnessConfig& cfg, const std::string& out,
                       std::vector<std::string>* names) {
  SubPolicySet subs;
  for (Scenario sc :
       {Scenario::involuntary, Scenario::weak, Scenario::limited}) {
    const std::string name = sub_checkpoint_name(sc, cfg.train_seed);
    subs.policies.push_back(
        policy_from_json(load_checkpoint(checkpoint_dir(out) + "/" + name)));
    if (names) names->push_back(name);
  }
  return subs;
}

std::unique_ptr<EvalAgent> make_eval_agent(const HarnessConfig& cfg, Method m,
                                           const std::string& out) {
  const std::string dir = checkpoint_dir(out);
  auto policy_agent = [&](const std::string& name) {
    return std::make_unique<PolicyAgent>(
        policy_from_json(load_checkpoint(dir + "/" + name)));
  };
  switch (m) {
    case Method::dr:
      return policy_agent(dr_checkpoint_name(cfg.train_seed));
    case Method::sub_involuntary:
      return policy_agent(sub_checkpoint_name(Scenario::involuntary, cfg.train_seed));
    case Method::sub_weak:
      return policy_agent(sub_checkpoint_name(Scenario::weak, cfg.train_seed));
    case Method::sub_limited:
      return policy_agent(sub_checkpoint_name(Scenario::limited, cfg.train_seed));
    case Method::ukf:
    case Method::spm:
    case Method::perfect: {
      const EstimatorKind kind = m == Method::ukf      ? EstimatorKind::ukf
                                 : m == Method::spm    ? EstimatorKind::spm
                                                       : EstimatorKind::perfect;
      return std::make_unique<BlendAgent>(blend_bundle_from_json(
          load_checkpoint(dir + "/" + blend_checkpoint_name(kind, cfg.train_seed))));
    }
  }
  throw std::logic_error("bad method");
}

}  // namespace

// --- training entry points ------------------------------------------------------

TrainResult run_train_sub(const HarnessConfig& cfg, Scenario sc,
                          std::uint64_t seed, const ProgressFn& progress) {
  if (sc == Scenario::combined || sc == Scenario::dr) {
    throw std::invalid_argument(
        "specialists train on a single impairment: involuntary|weak|limited");
  }
  EnvTask task(cfg.env, scenario_sampler(sc, cfg.dists, cfg.bounds));
  return train_ppo(task, cfg.ppo_sub, seed, progress);
}

TrainResult run_train_dr(const HarnessConfig& cfg, std::uint64_t seed,
                         const ProgressFn& progress) {
  EnvTask task(cfg.env, scenario_sampler(Scenario::dr, cfg.dists, cfg.bounds));
  return train_ppo(task, cfg.ppo_sub, seed, progress);
}

BlendTrainOutput run_train_blend(const HarnessConfig& cfg, EstimatorKind kind,
                                 SubPolicySet subs,
                                 std::vector<std::string> sub_names,
                                 std::uint64_t seed,
                                 const ProgressFn& progress) {
  auto estimator = make_estimator(kind, RngStream::mix(seed, 0x5e), cfg.bounds,
                                  cfg.ukf, cfg.spm);
  BlendTask task(cfg.env,
                 scenario_sampler(Scenario::combined, cfg.dists, cfg.bounds),
                 subs, *estimator);
  BlendTrainOutput out;
  out.result = train_ppo(task, cfg.ppo_blend, seed, progress);
  out.bundle.gate = out.result.policy;
  out.bundle.subs = std::move(subs);
  out.bundle.sub_names = std::move(sub_names);
  out.bundle.estimator_state = estimator->to_json();
  return out;
}

// --- commands -------------------------------------------------------------------

void cmd_train_sub(const HarnessConfig& cfg, Scenario sc, std::uint64_t seed,
                   const std::string& out) {
  ensure_layout(out);
  const std::string name = sub_checkpoint_name(sc, seed);
  TrainResult r = run_train_sub(cfg, sc, seed, print_progress("train-sub/" + to_string(sc)));
  save_checkpoint(checkpoint_dir(out) + "/" + name, policy_to_json(r.policy));
  r.curve.write_csv(curves_dir(out) + "/" + curve_name(name), seed);
  write_manifest(out, "train-sub --impairment " + to_string(sc), &cfg, seed);
}

void cmd_train_dr(const HarnessConfig& cfg, std::uint64_t seed,
                  const std::string& out) {
  ensure_layout(out);
  const std::string name = dr_checkpoint_name(seed);
  TrainResult r = run_train_dr(cfg, seed, print_progress("train-dr"));
  save_checkpoint(checkpoint_dir(out) + "/" + name, policy_to_json(r.policy));
  r.curve.write_csv(curves_dir(out) + "/" + curve_name(name), seed);
  write_manifest(out, "train-dr", &cfg, seed);
}

void cmd_train_blend(const HarnessConfig& cfg, EstimatorKind kind,
                     std::uint64_t seed, const std::string& out) {
  ensure_layout(out);
  std::vector<std::string> names;
  SubPolicySet subs = load_subs(cfg, out, &names);
  const std::string name = blend_checkpoint_name(kind, seed);
  BlendTrainOutput r =
      run_train_blend(cfg, kind, std::move(subs), std::move(names), seed,
                      print_progress("train-blend/" + to_string(kind)));
  save_checkpoint(checkpoint_dir(out) + "/" + name,
                  blend_bundle_to_json(r.bundle));
  r.result.curve.write_csv(curves_dir(out) + "/" + curve_name(name), seed);
  write_manifest(out, "train-blend --sysid " + to_string(kind), &cfg, seed);
}

EvalResult cmd_eval(const HarnessConfig& cfg, Method method, Scenario scenario,
                    std::uint64_t seed, const std::string& out) {
  ensure_layout(out);
  std::unique_ptr<EvalAgent> agent = make_eval_agent(cfg, method, out);
  EvalResult r =
      run_episodes(*agent, cfg.env,
                   scenario_sampler(scenario, cfg.dists, cfg.bounds),
                   cfg.eval_episodes, seed);
  r.method = to_string(method);
  r.scenario = to_string(scenario);
  const std::string stem = eval_dir(out) + "/" + r.method + "_" + r.scenario;
  write_eval_csv(stem + ".csv", r);
  if (r.has_estimates) write_estimates_csv(stem + "_estimates.csv", r);
  write_manifest(out, "eval --method " + r.method + " --scenario " + r.scenario,
                 &cfg, seed);
  return r;
}

namespace {

struct EvalRows {
  std::string method, scenario;
  std::vector<double> rewards, forces;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

void cmd_report(const std::string& out) {
  ensure_layout(out);
  std::vector<EvalRows> rows;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(eval_dir(out))) {
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const std::string fn = path.filename().string();
    if (!ends_with(fn, ".csv") || ends_with(fn, "_estimates.csv")) continue;
    const std::string stem = fn.substr(0, fn.size() - 4);
    const auto us = stem.rfind('_');
    if (us == std::string::npos) continue;
    EvalRows row;
    row.method = stem.substr(0, us);
    row.scenario = stem.substr(us + 1);

    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    if (line != "episode,reward,force") {
      throw std::runtime_error("unexpected eval csv header in " + fn);
    }
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto fields = split_csv_line(line);
      if (fields.size() != 3) {
        throw std::runtime_error("bad eval csv row in " + fn);
      }
      row.rewards.push_back(std::stod(fields[1]));
      row.forces.push_back(std::stod(fields[2]));
    }
    if (!row.forces.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw std::runtime_error("report: no eval CSVs under " + eval_dir(out));
  }
  std::sort(rows.begin(), rows.end(), [](const EvalRows& a, const EvalRows& b) {
    return std::tie(a.scenario, a.method) < std::tie(b.scenario, b.method);
  });

  std::ofstream table(report_dir(out) + "/table.csv");
  std::ofstream box(report_dir(out) + "/box.csv");
  std::ofstream raw(report_dir(out) + "/raw.csv");
  if (!table || !box || !raw) {
    throw std::runtime_error("cannot write report files in " + report_dir(out));
  }
  table << "method,scenario,mean,stdev\n";
  box << "method,scenario,min,q1,median,q3,max\n";
  raw << "method,scenario,episode,force,reward\n";
  for (const auto& row : rows) {
    const SummaryStats s = summarize(row.forces);
    table << row.method << "," << row.scenario << "," << csv_double(s.mean)
          << "," << csv_double(s.stdev) << "\n";
    box << row.method << "," << row.scenario << "," << csv_double(s.min) << ","
        << csv_double(s.q1) << "," << csv_double(s.median) << ","
        << csv_double(s.q3) << "," << csv_double(s.max) << "\n";
    for (size_t i = 0; i < row.forces.size(); ++i) {
      raw << row.method << "," << row.scenario << "," << i << ","
          << csv_double(row.forces[i]) << "," << csv_double(row.rewards[i])
          << "\n";
    }
  }
  write_manifest(out, "report", nullptr, 0);
}

// --- CLI --------------------------------------------------------------------------

int cli(int argc, char** argv) {
  CLI::App app{"assistive-itching policy blending experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed,
                    "rng seed (train-* default to the config's train_seed; "
                    "eval episode seed defaults to 0)");
    sub->add_option("--config", config_path, "JSON config overriding defaults")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
  };

  std::string impairment, sysid_name, method_name, scenario_name = "combined";

  CLI::App* ts = app.add_subcommand("train-sub", "train one specialist policy");
  ts->add_option("--impairment", impairment, "impairment the specialist handles")
      ->required()
      ->check(CLI::IsMember({"involuntary", "weak", "limited"}));
  add_common(ts);

  CLI::App* td =
      app.add_subcommand("train-dr", "train the domain-randomization baseline");
  add_common(td);

  CLI::App* tb = app.add_subcommand("train-blend", "train the blending gate");
  tb->add_option("--sysid", sysid_name, "parameter estimator for the gate")
      ->required()
      ->check(CLI::IsMember({"ukf", "spm", "perfect"}));
  add_common(tb);

  CLI::App* ev = app.add_subcommand("eval", "run evaluation episodes");
  ev->add_option("--method", method_name, "agent under evaluation")
      ->required()
      ->check(CLI::IsMember(
          {"dr", "involuntary", "weak", "limited", "ukf", "spm", "perfect"}));
  ev->add_option("--scenario", scenario_name, "impairment scenario")
      ->check(CLI::IsMember(
          {"involuntary", "weak", "limited", "combined", "dr"}));
  add_common(ev);

  CLI::App* rp = app.add_subcommand("report", "aggregate eval CSVs");
  add_common(rp);

  app.add_subcommand("selftest", "run the built-in oracle battery");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "selftest") return selftest(std::cout);

    const HarnessConfig cfg = load_config(config_path);
    const std::uint64_t train_seed =
        sub->count("--seed") > 0 ? seed : cfg.train_seed;
    if (name == "train-sub") {
      cmd_train_sub(cfg, scenario_from_string(impairment), train_seed, out);
    } else if (name == "train-dr") {
      cmd_train_dr(cfg, train_seed, out);
    } else if (name == "train-blend") {
      cmd_train_blend(cfg, estimator_kind_from_string(sysid_name), train_seed,
                      out);
    } else if (name == "eval") {
      cmd_eval(cfg, method_from_string(method_name),
               scenario_from_string(scenario_name), seed, out);
    } else if (name == "report") {
      cmd_report(out);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace blendid
