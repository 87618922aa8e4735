#include "blendid/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "blendid/csv.hpp"

namespace blendid {

EnvTask::EnvTask(EnvConfig cfg, ImpairmentSampler sampler)
    : env_(std::move(cfg)), sampler_(std::move(sampler)) {}

Eigen::VectorXd EnvTask::reset(RngStream& rng) {
  ParamVector params = sampler_(rng);
  return env_.reset(params, rng.child(0));
}

AgentTask::Feedback EnvTask::step(const Eigen::VectorXd& action) {
  StepResult r = env_.step(Eigen::Vector2d(action[0], action[1]));
  return Feedback{r.obs, r.reward, r.force, r.done};
}

Eigen::VectorXd value_input(const Eigen::VectorXd& state, double time_frac) {
  Eigen::VectorXd v(state.size() + 1);
  v.head(state.size()) = state;
  v[state.size()] = time_frac;
  return v;
}

void compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                 const std::vector<std::uint8_t>& dones, double gamma,
                 double lambda, double last_value, Eigen::VectorXd* advantages,
                 Eigen::VectorXd* returns) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n) {
    throw std::invalid_argument("compute_gae: length mismatch");
  }
  advantages->resize(n);
  returns->resize(n);
  double gae = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double non_terminal = dones[t] ? 0.0 : 1.0;
    const double v_next = (t == n - 1) ? last_value : values[t + 1];
    const double delta = rewards[t] + gamma * non_terminal * v_next - values[t];
    gae = delta + gamma * lambda * non_terminal * gae;
    (*advantages)[t] = gae;
    (*returns)[t] = gae + values[t];
  }
}

RolloutBuffer collect_rollout(AgentTask& task, const GaussianPolicy& policy,
                              const Mlp& value_net, int n_steps,
                              RngStream& rng, const PpoConfig& cfg) {
  const int sd = task.state_dim(), ad = task.action_dim();
  RolloutBuffer buf;
  buf.states.resize(sd, n_steps);
  buf.actions.resize(ad, n_steps);
  buf.log_probs.resize(n_steps);
  buf.rewards.resize(n_steps);
  buf.time_frac.resize(n_steps);
  buf.dones.assign(n_steps, 0);

  Eigen::VectorXd state = task.reset(rng);
  int ep_step = 0;
  double ep_reward = 0.0;
  bool final_done = false;
  Eigen::VectorXd final_state;
  double final_time_frac = 0.0;

  for (int t = 0; t < n_steps; ++t) {
    buf.states.col(t) = state;
    buf.time_frac[t] = static_cast<double>(ep_step) / task.horizon();

    GaussianSample s = policy.act(state, rng);
    auto fb = task.step(s.action);

    buf.actions.col(t) = s.action;
    buf.log_probs[t] = s.log_prob;
    buf.rewards[t] = fb.reward;
    buf.dones[t] = fb.done ? 1 : 0;
    ep_reward += fb.reward;
    ++ep_step;

    if (fb.done) {
      buf.episode_rewards.push_back(ep_reward);
      ep_reward = 0.0;
      ep_step = 0;
      if (t + 1 < n_steps) {
        state = task.reset(rng);
      } else {
        final_done = true;
      }
    } else {
      state = fb.state;
      if (t + 1 == n_steps) {
        final_state = fb.state;
        final_time_frac = static_cast<double>(ep_step) / task.horizon();
      }
    }
  }

  Eigen::MatrixXd vin(sd + 1, n_steps);
  vin.topRows(sd) = buf.states;
  vin.bottomRows(1) = buf.time_frac.transpose();
  buf.values = value_net.forward(vin).row(0).transpose();

  double last_value = 0.0;
  if (!final_done) {
    last_value = value_net.forward(value_input(final_state, final_time_frac))[0];
  }
  compute_gae(buf.rewards, buf.values, buf.dones, cfg.gamma, cfg.gae_lambda,
              last_value, &buf.advantages, &buf.returns);
  return buf;
}

namespace {

struct MinibatchViews {
  Eigen::MatrixXd states;   // sd x b
  Eigen::MatrixXd vin;      // (sd+1) x b
  Eigen::MatrixXd actions;  // ad x b
  Eigen::VectorXd logp_old, adv, ret;
};

MinibatchViews gather(const RolloutBuffer& buf, const std::vector<int>& idx) {
  const int b = static_cast<int>(idx.size());
  MinibatchViews m;
  m.states.resize(buf.states.rows(), b);
  m.vin.resize(buf.states.rows() + 1, b);
  m.actions.resize(buf.actions.rows(), b);
  m.logp_old.resize(b);
  m.adv.resize(b);
  m.ret.resize(b);
  for (int k = 0; k < b; ++k) {
    const int i = idx[k];
    m.states.col(k) = buf.states.col(i);
    m.vin.col(k).head(buf.states.rows()) = buf.states.col(i);
    m.vin(buf.states.rows(), k) = buf.time_frac[i];
    m.actions.col(k) = buf.actions.col(i);
    m.logp_old[k] = buf.log_probs[i];
    m.adv[k] = buf.advantages[i];
    m.ret[k] = buf.returns[i];
  }
  return m;
}

constexpr double kHalfLog2PiE = 1.4189385332046727;  // 0.5*ln(2*pi*e)

}  // namespace

double ppo_minibatch_loss(const GaussianPolicy& policy, const Mlp& value_net,
                          const RolloutBuffer& buf,
                          const std::vector<int>& idx, const PpoConfig& cfg) {
  MinibatchViews m = gather(buf, idx);
  const int b = static_cast<int>(idx.size());
  const Eigen::MatrixXd mean = policy.net.forward(m.states);
  double policy_loss = 0.0;
  for (int k = 0; k < b; ++k) {
    const double logp =
        gaussian_log_prob(mean.col(k), policy.log_std, m.actions.col(k));
    const double ratio = std::exp(logp - m.logp_old[k]);
    const double clipped =
        std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    policy_loss -= std::min(ratio * m.adv[k], clipped * m.adv[k]) / b;
  }
  const Eigen::VectorXd v = value_net.forward(m.vin).row(0).transpose();
  const double value_loss = (v - m.ret).squaredNorm() / b;
  const double entropy =
      policy.log_std.sum() + policy.log_std.size() * kHalfLog2PiE;
  return policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
}

PpoLossStats ppo_minibatch_grads(const GaussianPolicy& policy,
                                 const Mlp& value_net,
                                 const RolloutBuffer& buf,
                                 const std::vector<int>& idx,
                                 const PpoConfig& cfg, GradBuffer* policy_grad,
                                 GradBuffer* value_grad) {
  MinibatchViews m = gather(buf, idx);
  const int b = static_cast<int>(idx.size());
  const int ad = static_cast<int>(buf.actions.rows());
  PpoLossStats stats;

  MlpCache pcache;
  const Eigen::MatrixXd mean = policy.net.forward(m.states, pcache);
  const Eigen::ArrayXd sigma = policy.log_std.array().exp();

  Eigen::MatrixXd dmean = Eigen::MatrixXd::Zero(ad, b);
  for (int k = 0; k < b; ++k) {
    const Eigen::ArrayXd z =
        (m.actions.col(k) - mean.col(k)).array() / sigma;
    const double logp =
        gaussian_log_prob(mean.col(k), policy.log_std, m.actions.col(k));
    const double ratio = std::exp(logp - m.logp_old[k]);
    const double clipped =
        std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    const double surr1 = ratio * m.adv[k];
    const double surr2 = clipped * m.adv[k];
    stats.policy_loss -= std::min(surr1, surr2) / b;
    stats.approx_kl += (m.logp_old[k] - logp) / b;
    if (std::abs(ratio - 1.0) > cfg.clip_eps) stats.clip_fraction += 1.0 / b;

    // d(-min)/dlogp is -ratio*A on the unclipped branch, 0 on the clipped.
    const double dl_dlogp = (surr1 <= surr2) ? -ratio * m.adv[k] / b : 0.0;
    dmean.col(k) = (dl_dlogp * z / sigma).matrix();
    policy_grad->log_std.array() += dl_dlogp * (z.square() - 1.0);
  }
  policy.net.backward(pcache, dmean, *policy_grad);
  stats.entropy = policy.log_std.sum() + ad * kHalfLog2PiE;
  policy_grad->log_std.array() -= cfg.entropy_coef;

  MlpCache vcache;
  const Eigen::VectorXd v = value_net.forward(m.vin, vcache).row(0).transpose();
  stats.value_loss = (v - m.ret).squaredNorm() / b;
  const Eigen::MatrixXd dv =
      (cfg.value_coef * 2.0 / b) * (v - m.ret).transpose();
  value_net.backward(vcache, dv, *value_grad);
  return stats;
}

PpoLossStats ppo_update(GaussianPolicy& policy, Mlp& value_net,
                        AdamState& policy_opt, AdamState& value_opt,
                        RolloutBuffer& buf, const PpoConfig& cfg,
                        RngStream& rng) {
  const int n = buf.size();
  const double mean = buf.advantages.mean();
  const double var = (buf.advantages.array() - mean).square().sum() / n;
  buf.advantages = (buf.advantages.array() - mean) / (std::sqrt(var) + 1e-8);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  PpoLossStats total;
  int n_batches = 0;
  for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (int start = 0; start < n; start += cfg.minibatch_size) {
      const int len = std::min(cfg.minibatch_size, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + len);

      GradBuffer pg = policy.net.make_grad(true);
      GradBuffer vg = value_net.make_grad(false);
      PpoLossStats s =
          ppo_minibatch_grads(policy, value_net, buf, idx, cfg, &pg, &vg);
      if (!std::isfinite(s.policy_loss) || !std::isfinite(s.value_loss) ||
          !pg.allFinite() || !vg.allFinite()) {
        throw std::runtime_error("ppo_update: non-finite loss or gradient");
      }

      const double gnorm = std::sqrt(pg.squaredNorm() + vg.squaredNorm());
      if (gnorm > cfg.max_grad_norm) {
        const double scale = cfg.max_grad_norm / gnorm;
        pg.scale(scale);
        vg.scale(scale);
      }
      adam_step(policy.net, &policy.log_std, pg, policy_opt,
                cfg.learning_rate);
      policy.clamp_log_std();
      adam_step(value_net, nullptr, vg, value_opt, cfg.learning_rate);

      total.policy_loss += s.policy_loss;
      total.value_loss += s.value_loss;
      total.entropy += s.entropy;
      total.clip_fraction += s.clip_fraction;
      total.approx_kl += s.approx_kl;
      ++n_batches;
    }
  }
  total.policy_loss /= n_batches;
  total.value_loss /= n_batches;
  total.entropy /= n_batches;
  total.clip_fraction /= n_batches;
  total.approx_kl /= n_batches;
  return total;
}

void TrainCurve::write_csv(const std::string& path, std::uint64_t seed) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write curve: " + path);
  out << "seed,timestep,avg_reward\n";
  for (const auto& p : points) {
    out << seed << "," << p.timestep << "," << csv_double(p.avg_reward)
        << "\n";
  }
}

TrainResult train_ppo(AgentTask& task, const PpoConfig& cfg,
                      std::uint64_t seed, const ProgressFn& progress) {
  RngStream init_rng(seed, 0x11);
  RngStream rollout_rng(seed, 0x22);
  RngStream shuffle_rng(seed, 0x33);

  TrainResult res;
  res.policy = GaussianPolicy::make(task.state_dim(), task.action_dim(),
                                    init_rng);
  res.value_net = Mlp::orthogonal_init(
      {task.state_dim() + 1, 64, 64, 1}, 1.0, init_rng);
  GaussianPolicy policy = res.policy;
  AdamState policy_opt, value_opt;

  std::deque<double> recent;
  res.best_avg_reward = -std::numeric_limits<double>::infinity();
  long steps = 0;
  while (steps < cfg.total_steps) {
    const int n = static_cast<int>(
        std::min<long>(cfg.rollout_steps, cfg.total_steps - steps));
    RolloutBuffer buf =
        collect_rollout(task, policy, res.value_net, n, rollout_rng, cfg);
    ppo_update(policy, res.value_net, policy_opt, value_opt, buf, cfg,
               shuffle_rng);
    steps += n;

    for (double r : buf.episode_rewards) {
      recent.push_back(r);
      if (recent.size() > 50) recent.pop_front();
    }
    if (!recent.empty()) {
      const double avg =
          std::accumulate(recent.begin(), recent.end(), 0.0) / recent.size();
      res.curve.points.push_back({steps, avg});
      if (avg > res.best_avg_reward) {
        res.best_avg_reward = avg;
        res.policy = policy;
      }
      if (progress) progress(steps, avg);
    }
  }
  res.steps_trained = steps;
  return res;
}

}  // namespace blendid
