#include "blendid/nn.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace blendid {

using nlohmann::json;

void GradBuffer::setZero() {
  for (auto& m : w) m.setZero();
  for (auto& v : b) v.setZero();
  log_std.setZero();
}

double GradBuffer::squaredNorm() const {
  double s = 0.0;
  for (const auto& m : w) s += m.squaredNorm();
  for (const auto& v : b) s += v.squaredNorm();
  s += log_std.squaredNorm();
  return s;
}

void GradBuffer::scale(double s) {
  for (auto& m : w) m *= s;
  for (auto& v : b) v *= s;
  log_std *= s;
}

bool GradBuffer::allFinite() const {
  for (const auto& m : w)
    if (!m.allFinite()) return false;
  for (const auto& v : b)
    if (!v.allFinite()) return false;
  return log_std.allFinite();
}

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) {
    throw std::invalid_argument("Mlp needs at least input and output dims");
  }
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    w.emplace_back(Eigen::MatrixXd::Zero(sizes_[l + 1], sizes_[l]));
    b.emplace_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
  }
}

namespace {

Eigen::MatrixXd orthogonal_matrix(int rows, int cols, RngStream& rng) {
  const bool transpose = rows < cols;
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign-fix so the decomposition is unique.
  Eigen::VectorXd d = qr.matrixQR().diagonal().head(small);
  for (int j = 0; j < small; ++j) {
    if (d[j] < 0) q.col(j) = -q.col(j);
  }
  return transpose ? Eigen::MatrixXd(q.transpose()) : q;
}

}  // namespace

Mlp Mlp::orthogonal_init(std::vector<int> sizes, double output_gain,
                         RngStream& rng) {
  Mlp net(std::move(sizes));
  for (int l = 0; l < net.num_layers(); ++l) {
    double gain = (l == net.num_layers() - 1) ? output_gain : 1.0;
    net.w[l] = gain * orthogonal_matrix(static_cast<int>(net.w[l].rows()),
                                        static_cast<int>(net.w[l].cols()), rng);
  }
  return net;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  return forward(Eigen::MatrixXd(x));
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& X) const {
  MlpCache cache;
  return forward(X, cache);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& X, MlpCache& cache) const {
  if (X.rows() != input_dim()) {
    throw std::invalid_argument("Mlp::forward: input dim mismatch");
  }
  cache.act.clear();
  cache.act.reserve(w.size() + 1);
  cache.act.push_back(X);
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::MatrixXd z = (w[l] * cache.act.back()).colwise() + b[l];
    if (l + 1 < num_layers()) {
      cache.act.push_back(z.array().tanh().matrix());
    } else {
      cache.act.push_back(std::move(z));
    }
  }
  return cache.act.back();
}

void Mlp::backward(const MlpCache& cache, const Eigen::MatrixXd& out_grad,
                   GradBuffer& grad) const {
  if (cache.act.size() != w.size() + 1) {
    throw std::invalid_argument("Mlp::backward: stale or mismatched cache");
  }
  if (out_grad.rows() != output_dim() ||
      out_grad.cols() != cache.act.back().cols()) {
    throw std::invalid_argument("Mlp::backward: output gradient shape");
  }
  Eigen::MatrixXd g = out_grad;
  for (int l = num_layers() - 1; l >= 0; --l) {
    // Last layer is linear; hidden activations are tanh.
    Eigen::MatrixXd dz =
        (l == num_layers() - 1)
            ? g
            : (g.array() * (1.0 - cache.act[l + 1].array().square())).matrix();
    grad.w[l] += dz * cache.act[l].transpose();
    grad.b[l] += dz.rowwise().sum();
    if (l > 0) g = w[l].transpose() * dz;
  }
}

GradBuffer Mlp::make_grad(bool with_log_std) const {
  GradBuffer g;
  for (int l = 0; l < num_layers(); ++l) {
    g.w.emplace_back(Eigen::MatrixXd::Zero(w[l].rows(), w[l].cols()));
    g.b.emplace_back(Eigen::VectorXd::Zero(b[l].size()));
  }
  if (with_log_std) g.log_std = Eigen::VectorXd::Zero(output_dim());
  return g;
}

bool Mlp::same_shape(const GradBuffer& g) const {
  if (g.w.size() != w.size() || g.b.size() != b.size()) return false;
  for (size_t l = 0; l < w.size(); ++l) {
    if (g.w[l].rows() != w[l].rows() || g.w[l].cols() != w[l].cols())
      return false;
    if (g.b[l].size() != b[l].size()) return false;
  }
  return true;
}

GaussianSample gaussian_sample(const Eigen::VectorXd& mean,
                               const Eigen::VectorXd& log_std,
                               RngStream& rng) {
  GaussianSample s;
  s.action.resize(mean.size());
  s.log_prob = 0.0;
  constexpr double half_log_2pi = 0.9189385332046727;  // 0.5 * ln(2*pi)
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    double z = rng.normal();
    s.action[i] = mean[i] + std::exp(log_std[i]) * z;
    s.log_prob += -0.5 * z * z - log_std[i] - half_log_2pi;
  }
  return s;
}

double gaussian_log_prob(const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& log_std,
                         const Eigen::VectorXd& action) {
  constexpr double half_log_2pi = 0.9189385332046727;
  double lp = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    double z = (action[i] - mean[i]) / std::exp(log_std[i]);
    lp += -0.5 * z * z - log_std[i] - half_log_2pi;
  }
  return lp;
}

GaussianPolicy GaussianPolicy::make(int obs_dim, int act_dim, RngStream& rng,
                                    const std::vector<int>& hidden) {
  std::vector<int> sizes;
  sizes.push_back(obs_dim);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(act_dim);
  GaussianPolicy p;
  p.net = Mlp::orthogonal_init(sizes, 0.01, rng);
  p.log_std = Eigen::VectorXd::Constant(act_dim, kLogStdInit);
  return p;
}

namespace {

template <class Mat>
void adam_update(Mat& p, const Mat& g, Mat& m, Mat& v, double lr, double bc1,
                 double bc2, const AdamConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = (cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square()).matrix();
  p -= (lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps)).matrix();
}

}  // namespace

void adam_step(Mlp& net, Eigen::VectorXd* log_std, const GradBuffer& grad,
               AdamState& state, double lr, const AdamConfig& cfg) {
  if (!net.same_shape(grad)) {
    throw std::invalid_argument("adam_step: gradient shape mismatch");
  }
  if (!state.initialized) {
    state.m = net.make_grad(grad.log_std.size() > 0);
    state.v = net.make_grad(grad.log_std.size() > 0);
    state.initialized = true;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.step);
  for (int l = 0; l < net.num_layers(); ++l) {
    adam_update(net.w[l], grad.w[l], state.m.w[l], state.v.w[l], lr, bc1, bc2,
                cfg);
    adam_update(net.b[l], grad.b[l], state.m.b[l], state.v.b[l], lr, bc1, bc2,
                cfg);
  }
  if (grad.log_std.size() > 0) {
    if (log_std == nullptr) {
      throw std::invalid_argument("adam_step: log_std gradient without params");
    }
    adam_update(*log_std, grad.log_std, state.m.log_std, state.v.log_std, lr,
                bc1, bc2, cfg);
  }
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  // Flat row-major values.
  std::vector<double> flat;
  flat.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  return flat;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows,
                                 Eigen::Index cols) {
  auto flat = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw std::runtime_error("checkpoint: weight array size mismatch");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = flat[i * cols + j2];
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const json& j) {
  auto vals = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(vals.data(),
                                     static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

json mlp_to_json(const Mlp& net) {
  json j;
  j["format_version"] = kCheckpointVersion;
  j["dims"] = net.sizes();
  json layers = json::array();
  for (int l = 0; l < net.num_layers(); ++l) {
    layers.push_back({{"w", matrix_to_json(net.w[l])},
                      {"b", vector_to_json(net.b[l])}});
  }
  j["layers"] = layers;
  return j;
}

Mlp mlp_from_json(const json& j) {
  if (j.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format_version");
  }
  Mlp net(j.at("dims").get<std::vector<int>>());
  const json& layers = j.at("layers");
  if (static_cast<int>(layers.size()) != net.num_layers()) {
    throw std::runtime_error("checkpoint: layer count mismatch");
  }
  for (int l = 0; l < net.num_layers(); ++l) {
    net.w[l] = matrix_from_json(layers[l].at("w"), net.w[l].rows(),
                                net.w[l].cols());
    net.b[l] = vector_from_json(layers[l].at("b"));
    if (net.b[l].size() != net.w[l].rows()) {
      throw std::runtime_error("checkpoint: bias size mismatch");
    }
  }
  return net;
}

json adam_to_json(const AdamState& s) {
  json j;
  j["step"] = s.step;
  j["initialized"] = s.initialized;
  if (!s.initialized) return j;
  json mw = json::array(), mb = json::array(), vw = json::array(),
       vb = json::array();
  for (const auto& m : s.m.w) mw.push_back(matrix_to_json(m));
  for (const auto& v : s.m.b) mb.push_back(vector_to_json(v));
  for (const auto& m : s.v.w) vw.push_back(matrix_to_json(m));
  for (const auto& v : s.v.b) vb.push_back(vector_to_json(v));
  j["m_w"] = mw;
  j["m_b"] = mb;
  j["v_w"] = vw;
  j["v_b"] = vb;
  j["m_log_std"] = vector_to_json(s.m.log_std);
  j["v_log_std"] = vector_to_json(s.v.log_std);
  return j;
}

AdamState adam_from_json(const json& j, const Mlp& shapes_like) {
  AdamState s;
  s.step = j.at("step").get<long>();
  s.initialized = j.at("initialized").get<bool>();
  if (!s.initialized) return s;
  const json &mw = j.at("m_w"), &vw = j.at("v_w");
  if (static_cast<int>(mw.size()) != shapes_like.num_layers() ||
      static_cast<int>(vw.size()) != shapes_like.num_layers()) {
    throw std::runtime_error("checkpoint: optimizer layer count mismatch");
  }
  for (int l = 0; l < shapes_like.num_layers(); ++l) {
    Eigen::Index r = shapes_like.w[l].rows(), c = shapes_like.w[l].cols();
    s.m.w.push_back(matrix_from_json(mw[l], r, c));
    s.v.w.push_back(matrix_from_json(vw[l], r, c));
  }
  for (const auto& jv : j.at("m_b")) s.m.b.push_back(vector_from_json(jv));
  for (const auto& jv : j.at("v_b")) s.v.b.push_back(vector_from_json(jv));
  s.m.log_std = vector_from_json(j.at("m_log_std"));
  s.v.log_std = vector_from_json(j.at("v_log_std"));
  return s;
}

json policy_to_json(const GaussianPolicy& p, const AdamState* opt) {
  json j = mlp_to_json(p.net);
  j["kind"] = "gaussian_policy";
  j["log_std"] = vector_to_json(p.log_std);
  if (opt != nullptr) j["optimizer"] = adam_to_json(*opt);
  return j;
}

GaussianPolicy policy_from_json(const json& j, AdamState* opt) {
  GaussianPolicy p;
  p.net = mlp_from_json(j);
  p.log_std = vector_from_json(j.at("log_std"));
  if (p.log_std.size() != p.net.output_dim()) {
    throw std::runtime_error("checkpoint: log_std size mismatch");
  }
  if (opt != nullptr) {
    if (j.contains("optimizer")) {
      *opt = adam_from_json(j.at("optimizer"), p.net);
    } else {
      *opt = AdamState{};
    }
  }
  return p;
}

void save_checkpoint(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump();
  out << "\n";
}

json load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing checkpoint: " + path);
  json j;
  in >> j;
  if (!j.contains("format_version") ||
      j.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format_version in " +
                             path);
  }
  return j;
}

}  // namespace blendid
