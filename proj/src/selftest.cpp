#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "blendid/harness.hpp"

namespace blendid {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Check {
  std::string name;
  bool ok;
};

}  // namespace

// Quick oracle battery behind `blendid selftest`: hand-derivable identities
// across the stack, each checked against its closed form.
int selftest(std::ostream& os) {
  std::vector<Check> checks;
  auto add = [&](const std::string& name, bool ok) {
    checks.push_back({name, ok});
  };

  {
    const Eigen::Vector2d straight =
        forward_kinematics({0.0, 0.0}, {0.5, 0.4}, {0.0, 0.0});
    const Eigen::Vector2d up =
        forward_kinematics({kPi / 2, 0.0}, {0.5, 0.4}, {1.0, 2.0});
    add("forward kinematics goldens",
        (straight - Eigen::Vector2d(0.9, 0.0)).norm() < 1e-12 &&
            (up - Eigen::Vector2d(1.0, 2.9)).norm() < 1e-12);
  }

  {
    Eigen::VectorXd r(3), v(3);
    r << 1, 2, 3;
    v << 0.5, 0.25, 0.125;
    const std::vector<std::uint8_t> dones{0, 0, 1};
    Eigen::VectorXd adv, ret;
    compute_gae(r, v, dones, 0.5, 0.5, 0.0, &adv, &ret);
    add("gae hand recursion",
        std::abs(adv[2] - 2.875) < 1e-12 &&
            std::abs(adv[1] - 2.53125) < 1e-12 &&
            std::abs(adv[0] - 1.2578125) < 1e-12 &&
            std::abs(ret[0] - (adv[0] + v[0])) < 1e-12);
  }

  {
    const SigmaPoints sp = sigma_points(
        Eigen::Vector4d::Zero(), Eigen::Matrix4d::Identity(), 0.1, 2.0, 0.0);
    const double lambda = 0.01 * 4 - 4;
    add("sigma point closed forms",
        sp.points.cols() == 9 &&
            std::abs(sp.wm[0] - lambda / (4 + lambda)) < 1e-12 &&
            std::abs(sp.wc[0] - (lambda / (4 + lambda) + 1 - 0.01 + 2.0)) <
                1e-12 &&
            std::abs(sp.wm[1] - 1.0 / (2 * (4 + lambda))) < 1e-12 &&
            std::abs(sp.wm.sum() - 1.0) < 1e-9);
  }

  {
    Eigen::VectorXd m = Eigen::VectorXd::Constant(4, 0.2);
    Eigen::MatrixXd p = 0.04 * Eigen::MatrixXd::Identity(4, 4);
    Eigen::VectorXd z(4);
    z << 0.1, 0.3, 0.5, 0.7;
    const Eigen::MatrixXd q = 1e-6 * Eigen::MatrixXd::Identity(4, 4);
    Eigen::Vector4d rstd(0.02, 0.02, 0.05, 0.05);
    const Eigen::MatrixXd r = rstd.array().square().matrix().asDiagonal();

    const Eigen::MatrixXd p_pred = p + q;
    const Eigen::MatrixXd k = p_pred * (p_pred + r).inverse();
    const Eigen::VectorXd kf_mean = m + k * (z - m);
    const Eigen::MatrixXd kf_cov =
        (Eigen::MatrixXd::Identity(4, 4) - k) * p_pred;

    ukf_update(m, p, z, q, r, 0.1, 2.0, 0.0);
    add("ukf matches kalman filter",
        (m - kf_mean).lpNorm<Eigen::Infinity>() < 1e-8 &&
            (p - kf_cov).lpNorm<Eigen::Infinity>() < 1e-8);
  }

  {
    RngStream rng(7, 1);
    Mlp net = Mlp::orthogonal_init({3, 8, 2}, 1.0, rng);
    Eigen::MatrixXd x(3, 5), g(2, 5);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (int i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();

    MlpCache cache;
    net.forward(x, cache);
    GradBuffer grad = net.make_grad();
    net.backward(cache, g, grad);

    auto loss = [&] { return (g.array() * net.forward(x).array()).sum(); };
    const double h = 1e-6;
    double max_rel = 0.0;
    const int probes[][3] = {{0, 0, 0}, {0, 5, 2}, {1, 1, 3}};
    for (const auto& pr : probes) {
      double& w = net.w[pr[0]](pr[1], pr[2]);
      const double saved = w;
      w = saved + h;
      const double up = loss();
      w = saved - h;
      const double down = loss();
      w = saved;
      const double fd = (up - down) / (2 * h);
      const double an = grad.w[pr[0]](pr[1], pr[2]);
      max_rel = std::max(max_rel,
                         std::abs(fd - an) / std::max(1e-12, std::abs(an)));
    }
    add("mlp gradient vs finite differences", max_rel < 1e-5);
  }

  {
    const std::vector<Eigen::Vector2d> subs{{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
    Eigen::VectorXd solo(3), uniform(3);
    solo << 3, 0, 0;
    uniform << 1, 1, 1;
    const Eigen::Vector2d a = blend_combine(subs, solo);
    const Eigen::Vector2d b = blend_combine(subs, uniform);
    add("blend identities",
        (a - subs[0]).norm() < 1e-15 &&
            (b - Eigen::Vector2d(2.0 / 3, 2.0 / 3)).norm() < 1e-15);
  }

  {
    Mlp clf(std::vector<int>{5, 4});  // zero weights: all logits are 0
    AdamState opt;
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(5, 3);
    Eigen::MatrixXd y(4, 3);
    y.setConstant(0.25);
    const double loss = spm_train_step(clf, opt, x, y, 1e-3);
    add("bce at zero logits is ln 2", std::abs(loss - std::log(2.0)) < 1e-12);
  }

  {
    const ParamBounds bounds = ParamBounds::defaults();
    const Eigen::Vector4d truth(0.05, 0.30, 0.40, 0.95);
    Eigen::Vector4d guess = bounds.midpoint();
    for (int it = 0; it < 50; ++it) {
      Eigen::Vector4d probs;
      for (int i = 0; i < 4; ++i) {
        probs[i] = guess[i] > truth[i] ? 1.0
                   : guess[i] < truth[i] ? 0.0
                                         : 0.5;
      }
      guess = spm_search_update(guess, probs, bounds, 0.3);
    }
    const Eigen::Vector4d tol = 0.3 * bounds.range() / 2.0;
    add("spm search against a perfect oracle",
        ((guess - truth).cwiseAbs().array() <= tol.array() + 1e-12).all());
  }

  {
    Mlp net(std::vector<int>{1, 1});
    net.w[0](0, 0) = 1.0;
    GradBuffer g = net.make_grad();
    g.w[0](0, 0) = 0.5;
    AdamState opt;
    adam_step(net, g, opt, 3e-4);
    const double expect = 1.0 - 3e-4 * (0.5 / (0.5 + 1e-8));
    add("adam first step closed form",
        std::abs(net.w[0](0, 0) - expect) < 1e-12);
  }

  bool all_ok = true;
  for (const auto& c : checks) {
    os << (c.ok ? "[ok]   " : "[FAIL] ") << c.name << "\n";
    all_ok = all_ok && c.ok;
  }
  os << (all_ok ? "selftest passed" : "selftest FAILED") << " (" << checks.size()
     << " checks)\n";
  return all_ok ? 0 : 1;
}

}  // namespace blendid
