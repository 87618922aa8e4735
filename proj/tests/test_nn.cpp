#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"

#include "blendid/nn.hpp"
#include "blendid/rng.hpp"

using namespace blendid;

namespace {

// Straight-loop reference forward pass, no Eigen expressions involved.
std::vector<double> naive_forward(const Mlp& net, const std::vector<double>& x) {
  std::vector<double> a = x;
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto rows = net.w[l].rows(), cols = net.w[l].cols();
    std::vector<double> z(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      double acc = net.b[l][r];
      for (Eigen::Index c = 0; c < cols; ++c) acc += net.w[l](r, c) * a[c];
      z[r] = (l + 1 < net.num_layers()) ? std::tanh(acc) : acc;
    }
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, RngStream& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("tiny net forward matches the closed form") {
  Mlp net(std::vector<int>{1, 1, 1});
  net.w[0](0, 0) = 2.0;
  net.b[0][0] = 0.5;
  net.w[1](0, 0) = 3.0;
  net.b[1][0] = -1.0;

  const double x = 0.3;
  const double expect = 3.0 * std::tanh(2.0 * x + 0.5) - 1.0;
  Eigen::VectorXd in(1);
  in << x;
  CHECK(net.forward(in)[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("Eigen forward matches a naive loop implementation") {
  RngStream rng(31);
  Mlp net = Mlp::orthogonal_init({5, 7, 3, 2}, 0.7, rng);
  for (auto& b : net.b) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.normal();
  }
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(5);
    Eigen::VectorXd xe(5);
    for (int i = 0; i < 5; ++i) xe[i] = x[i] = rng.normal();
    const auto ref = naive_forward(net, x);
    const Eigen::VectorXd got = net.forward(xe);
    REQUIRE(got.size() == 2);
    CHECK(std::abs(got[0] - ref[0]) < 1e-14);
    CHECK(std::abs(got[1] - ref[1]) < 1e-14);
  }
}

TEST_CASE("batched forward equals per-column forward") {
  RngStream rng(32);
  Mlp net = Mlp::orthogonal_init({4, 16, 16, 3}, 1.0, rng);
  const Eigen::MatrixXd x = random_matrix(4, 9, rng);
  const Eigen::MatrixXd batch = net.forward(x);
  for (int c = 0; c < x.cols(); ++c) {
    // GEMM and GEMV kernels reassociate differently; agreement is to eps.
    CHECK((batch.col(c) - net.forward(Eigen::VectorXd(x.col(c)))).norm() <
          1e-14);
  }
}

TEST_CASE("backward gradients match central finite differences") {
  RngStream rng(33);
  const std::vector<std::vector<int>> shapes = {
      {2, 4, 1}, {3, 8, 8, 2}, {5, 6, 4}, {1, 3, 3, 3, 1}, {4, 16, 2}};
  double worst = 0.0;
  for (int problem = 0; problem < 20; ++problem) {
    const auto& sizes = shapes[problem % shapes.size()];
    Mlp net = Mlp::orthogonal_init(sizes, 0.9, rng);
    for (auto& b : net.b) {
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = 0.1 * rng.normal();
    }
    const int batch = 1 + problem % 4;
    const Eigen::MatrixXd x = random_matrix(sizes.front(), batch, rng);
    const Eigen::MatrixXd g = random_matrix(sizes.back(), batch, rng);

    MlpCache cache;
    net.forward(x, cache);
    GradBuffer grad = net.make_grad();
    net.backward(cache, g, grad);

    auto loss = [&] { return (g.array() * net.forward(x).array()).sum(); };
    const double h = 1e-6;
    auto probe = [&](double& w, double analytic) {
      const double saved = w;
      w = saved + h;
      const double up = loss();
      w = saved - h;
      const double down = loss();
      w = saved;
      const double fd = (up - down) / (2 * h);
      const double rel =
          std::abs(fd - analytic) / std::max(1.0, std::abs(analytic));
      worst = std::max(worst, rel);
    };
    for (int l = 0; l < net.num_layers(); ++l) {
      for (Eigen::Index i = 0; i < net.w[l].size(); ++i) {
        probe(net.w[l].data()[i], grad.w[l].data()[i]);
      }
      for (Eigen::Index i = 0; i < net.b[l].size(); ++i) {
        probe(net.b[l][i], grad.b[l][i]);
      }
    }
  }
  CHECK(worst < 1e-4);  // typically ~1e-9 with central differences
}

TEST_CASE("backward accumulates into an existing buffer") {
  RngStream rng(34);
  Mlp net = Mlp::orthogonal_init({3, 5, 2}, 1.0, rng);
  const Eigen::MatrixXd x = random_matrix(3, 4, rng);
  const Eigen::MatrixXd g = random_matrix(2, 4, rng);

  MlpCache cache;
  net.forward(x, cache);
  GradBuffer once = net.make_grad();
  net.backward(cache, g, once);
  GradBuffer twice = net.make_grad();
  net.backward(cache, g, twice);
  net.backward(cache, g, twice);
  for (int l = 0; l < net.num_layers(); ++l) {
    CHECK((twice.w[l] - 2.0 * once.w[l]).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((twice.b[l] - 2.0 * once.b[l]).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("orthogonal init has orthonormal factors and gain scaling") {
  RngStream rng(35);
  Mlp net = Mlp::orthogonal_init({14, 64, 64, 2}, 0.01, rng);

  // Wide hidden layer (64x14): orthonormal columns.
  const Eigen::MatrixXd wtw = net.w[0].transpose() * net.w[0];
  CHECK((wtw - Eigen::MatrixXd::Identity(14, 14)).lpNorm<Eigen::Infinity>() <
        1e-10);
  // Square hidden layer.
  const Eigen::MatrixXd sq = net.w[1] * net.w[1].transpose();
  CHECK((sq - Eigen::MatrixXd::Identity(64, 64)).lpNorm<Eigen::Infinity>() <
        1e-10);
  // Output layer carries the small gain: rows of norm 0.01.
  const Eigen::MatrixXd out = net.w[2] * net.w[2].transpose();
  CHECK((out - 1e-4 * Eigen::MatrixXd::Identity(2, 2)).lpNorm<Eigen::Infinity>() <
        1e-10);
  for (const auto& b : net.b) CHECK(b.norm() == 0.0);

  // Different streams give different weights.
  RngStream rng2(36);
  Mlp other = Mlp::orthogonal_init({14, 64, 64, 2}, 0.01, rng2);
  CHECK((net.w[0] - other.w[0]).norm() > 1e-3);
}

TEST_CASE("gaussian log density matches the closed form") {
  Eigen::VectorXd mean(2), log_std(2), action(2);
  mean << 0.1, -0.2;
  log_std << std::log(0.5), std::log(2.0);
  action << 0.6, 0.8;
  // z = (1, 0.5): -0.5*(1+0.25) - (ln .5 + ln 2) - ln(2*pi)
  const double expect = -0.625 - 1.8378770664093453;
  CHECK(std::abs(gaussian_log_prob(mean, log_std, action) - expect) < 1e-12);
}

TEST_CASE("sampling is consistent with the density and the moments") {
  RngStream rng(37);
  Eigen::VectorXd mean(2), log_std(2);
  mean << 0.5, -1.0;
  log_std << std::log(0.3), std::log(1.5);

  double m0 = 0, m1 = 0, s0 = 0, s1 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const GaussianSample s = gaussian_sample(mean, log_std, rng);
    CHECK(s.log_prob ==
          doctest::Approx(gaussian_log_prob(mean, log_std, s.action))
              .epsilon(1e-12));
    m0 += s.action[0];
    m1 += s.action[1];
    s0 += s.action[0] * s.action[0];
    s1 += s.action[1] * s.action[1];
  }
  m0 /= n;
  m1 /= n;
  CHECK(std::abs(m0 - 0.5) < 0.01);
  CHECK(std::abs(m1 + 1.0) < 0.03);
  CHECK(std::abs(std::sqrt(s0 / n - m0 * m0) - 0.3) < 0.01);
  CHECK(std::abs(std::sqrt(s1 / n - m1 * m1) - 1.5) < 0.03);
}

TEST_CASE("policy head starts at ln(0.5) and clamps") {
  RngStream rng(38);
  GaussianPolicy p = GaussianPolicy::make(14, 2, rng);
  CHECK(p.net.input_dim() == 14);
  CHECK(p.net.output_dim() == 2);
  CHECK(p.log_std[0] == doctest::Approx(std::log(0.5)).epsilon(1e-15));

  p.log_std << -9.0, 4.0;
  p.clamp_log_std();
  CHECK(p.log_std[0] == kLogStdMin);
  CHECK(p.log_std[1] == kLogStdMax);
}

TEST_CASE("adam follows the reference recursion") {
  Mlp net(std::vector<int>{1, 1});
  net.w[0](0, 0) = 2.0;
  AdamState state;

  double m = 0.0, v = 0.0, ref = 2.0;
  const double lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[] = {0.5, -1.25, 0.75};
  for (int t = 1; t <= 3; ++t) {
    GradBuffer g = net.make_grad();
    g.w[0](0, 0) = grads[t - 1];
    adam_step(net, g, state, lr);

    m = b1 * m + (1 - b1) * grads[t - 1];
    v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    ref -= lr * mh / (std::sqrt(vh) + eps);
    CHECK(net.w[0](0, 0) == doctest::Approx(ref).epsilon(1e-14));
  }
  CHECK(state.step == 3);
}

TEST_CASE("checkpoints round-trip bitwise and reject bad versions") {
  RngStream rng(39);
  GaussianPolicy p = GaussianPolicy::make(6, 3, rng);
  AdamState opt;
  GradBuffer g = p.net.make_grad(true);
  for (auto& w : g.w) w.setConstant(0.01);
  for (auto& b : g.b) b.setConstant(-0.02);
  g.log_std.setConstant(0.005);
  adam_step(p.net, &p.log_std, g, opt, 3e-4);

  const nlohmann::json j = policy_to_json(p, &opt);
  AdamState opt2;
  GaussianPolicy q = policy_from_json(j, &opt2);
  for (int l = 0; l < p.net.num_layers(); ++l) {
    CHECK(p.net.w[l] == q.net.w[l]);
    CHECK(p.net.b[l] == q.net.b[l]);
  }
  CHECK(p.log_std == q.log_std);
  CHECK(opt2.step == opt.step);
  REQUIRE(opt2.initialized);
  for (int l = 0; l < p.net.num_layers(); ++l) {
    CHECK(opt.m.w[l] == opt2.m.w[l]);
    CHECK(opt.v.w[l] == opt2.v.w[l]);
  }
  CHECK(opt.m.log_std == opt2.m.log_std);

  const auto path =
      (std::filesystem::temp_directory_path() / "blendid_ckpt_test.json")
          .string();
  save_checkpoint(path, j);
  const nlohmann::json loaded = load_checkpoint(path);
  GaussianPolicy r = policy_from_json(loaded);
  CHECK(r.net.w[0] == p.net.w[0]);
  std::filesystem::remove(path);

  nlohmann::json bad = j;
  bad["format_version"] = 999;
  CHECK_THROWS_AS(policy_from_json(bad), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/nope.json"),
                  std::runtime_error);
}
