#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "iwsm/error.hpp"
#include "iwsm/numerics.hpp"

namespace iwsm {

struct NetSpec {
  std::size_t input_dim = 2;
  std::size_t hidden_layers = 3;
  std::size_t hidden_width = 128;
  std::size_t time_embed_dim = 128;
  std::size_t fourier_features = 8;  // per coordinate; 0 disables

  void validate() const {
    if (input_dim < 1 || hidden_layers < 1 || hidden_width < 1)
      throw ConfigError("NetSpec: input_dim, hidden_layers and hidden_width must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
      throw ConfigError("NetSpec: time_embed_dim must be even and >= 2");
  }

  /// Width of the concatenated input: raw x, sin/cos Fourier features of x,
  /// sin/cos time embedding.
  std::size_t feature_dim() const { return input_dim * (1 + 2 * fourier_features) + time_embed_dim; }

  std::size_t layer_in(std::size_t l) const { return l == 0 ? feature_dim() : hidden_width; }
  std::size_t layer_out(std::size_t l) const { return l == hidden_layers ? input_dim : hidden_width; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l <= hidden_layers; ++l) n += layer_out(l) * (layer_in(l) + 1);
    return n;
  }

  bool operator==(const NetSpec&) const = default;
};

namespace detail {

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

/// Frequencies 1000 * 10000^(-k / (half - 1)), k = 0..half-1.
inline Eigen::ArrayXd time_frequencies(std::size_t dim) {
  const auto half = static_cast<Eigen::Index>(dim / 2);
  Eigen::ArrayXd w(half);
  for (Eigen::Index k = 0; k < half; ++k) {
    const double frac = half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1) : 0.0;
    w[k] = 1000.0 * std::pow(10000.0, -frac);
  }
  return w;
}

}  // namespace detail

/// Activations kept from a forward pass for the matching backward pass.
struct ForwardCache {
  std::uint64_t version = 0;
  std::vector<Eigen::MatrixXd> inputs;  // per layer input, column-major batch x in
  std::vector<Eigen::MatrixXd> pre;     // per hidden layer pre-activation
  Eigen::Index rows = 0;
};

/// MLP s_theta(x, t) with SiLU hidden layers. Parameters live in one flat
/// vector, layer by layer, each as a row-major (out x in) weight block
/// followed by its bias.
class ScoreNet {
 public:
  ScoreNet() : ScoreNet(NetSpec{}) {}

  explicit ScoreNet(const NetSpec& spec, std::uint64_t init_seed = 0) : spec_(spec) {
    spec_.validate();
    theta_ = Vector::Zero(static_cast<Eigen::Index>(spec_.parameter_count()));
    time_freq_ = detail::time_frequencies(spec_.time_embed_dim);
    initialize(init_seed);
  }

  ScoreNet(const NetSpec& spec, Vector theta) : spec_(spec) {
    spec_.validate();
    if (static_cast<std::size_t>(theta.size()) != spec_.parameter_count())
      throw ConfigError("ScoreNet: parameter vector length " + std::to_string(theta.size()) +
                        " does not match spec (" + std::to_string(spec_.parameter_count()) + ")");
    theta_ = std::move(theta);
    time_freq_ = detail::time_frequencies(spec_.time_embed_dim);
  }

  const NetSpec& spec() const noexcept { return spec_; }
  const Vector& parameters() const noexcept { return theta_; }
  std::size_t parameter_count() const noexcept { return static_cast<std::size_t>(theta_.size()); }
  std::uint64_t version() const noexcept { return version_; }

  /// Write access; invalidates every cache taken before the call.
  Vector& mutable_parameters() noexcept {
    ++version_;
    return theta_;
  }

  /// Fan-in scaled Gaussian hidden weights, zero biases, zero output layer.
  void initialize(std::uint64_t seed) {
    Rng rng = Rng(seed).substream("scorenet-init", 0);
    std::size_t off = 0;
    for (std::size_t l = 0; l <= spec_.hidden_layers; ++l) {
      const std::size_t in = spec_.layer_in(l), out = spec_.layer_out(l);
      const double sd = l == spec_.hidden_layers ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
      for (std::size_t i = 0; i < in * out; ++i) theta_[static_cast<Eigen::Index>(off + i)] = sd * rng.normal();
      off += in * out;
      for (std::size_t i = 0; i < out; ++i) theta_[static_cast<Eigen::Index>(off + i)] = 0.0;
      off += out;
    }
    ++version_;
  }

  /// Input features for a batch (rows of x) at per-row times t.
  Eigen::MatrixXd features(const Points& x, std::span<const double> t) const {
    if (static_cast<std::size_t>(x.cols()) != spec_.input_dim)
      throw ConfigError("ScoreNet: input dimension " + std::to_string(x.cols()) + ", expected " +
                        std::to_string(spec_.input_dim));
    if (t.size() != static_cast<std::size_t>(x.rows()) && t.size() != 1)
      throw ConfigError("ScoreNet: need one time per row or a single shared time");
    const Eigen::Index n = x.rows(), d = x.cols();
    const auto nf = static_cast<Eigen::Index>(spec_.fourier_features);
    const Eigen::Index half = time_freq_.size();
    Eigen::MatrixXd f(n, static_cast<Eigen::Index>(spec_.feature_dim()));
    f.leftCols(d) = x;
    Eigen::Index col = d;
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index k = 0; k < nf; ++k) {
        const double w = std::ldexp(1.0, static_cast<int>(k));
        const Eigen::ArrayXd arg = w * x.col(j).array();
        f.col(col++) = arg.sin().matrix();
        f.col(col++) = arg.cos().matrix();
      }
    }
    if (t.size() == 1) {
      const Eigen::ArrayXd arg = t[0] * time_freq_;
      const Eigen::RowVectorXd s = arg.sin().matrix().transpose(), c = arg.cos().matrix().transpose();
      f.middleCols(col, half).rowwise() = s;
      f.middleCols(col + half, half).rowwise() = c;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::ArrayXd arg = t[static_cast<std::size_t>(i)] * time_freq_;
        f.block(i, col, 1, half) = arg.sin().matrix().transpose();
        f.block(i, col + half, 1, half) = arg.cos().matrix().transpose();
      }
    }
    return f;
  }

  Points forward(const Points& x, std::span<const double> t) const { return run(x, t, nullptr); }

  Points forward(const Points& x, double t) const { return run(x, std::span<const double>(&t, 1), nullptr); }

  Points forward(const Points& x, std::span<const double> t, ForwardCache& cache) const {
    return run(x, t, &cache);
  }

  /// Gradient of sum_i <upstream_i, s_theta(x_i, t_i)> with respect to theta.
  Vector backward(const ForwardCache& cache, const Points& upstream) const {
    if (cache.version != version_ || cache.inputs.size() != spec_.hidden_layers + 1)
      throw ConfigError("ScoreNet::backward: stale or foreign forward cache");
    if (upstream.rows() != cache.rows || static_cast<std::size_t>(upstream.cols()) != spec_.input_dim)
      throw ConfigError("ScoreNet::backward: upstream shape does not match cached batch");
    Vector grad = Vector::Zero(theta_.size());
    Eigen::MatrixXd delta = upstream;
    for (std::size_t l = spec_.hidden_layers + 1; l-- > 0;) {
      const std::size_t off = offset(l);
      const auto in = static_cast<Eigen::Index>(spec_.layer_in(l));
      const auto out = static_cast<Eigen::Index>(spec_.layer_out(l));
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
          grad.data() + off, out, in);
      gw.noalias() = delta.transpose() * cache.inputs[l];
      grad.segment(static_cast<Eigen::Index>(off) + out * in, out) = delta.colwise().sum().transpose();
      if (l == 0) break;
      const auto w = weights(l);
      Eigen::MatrixXd da = delta * w;
      const Eigen::ArrayXXd z = cache.pre[l - 1].array();
      const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-z).exp());
      delta = (da.array() * (sig * (1.0 + z * (1.0 - sig)))).matrix();
    }
    return grad;
  }

 private:
  std::size_t offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += spec_.layer_out(l) * (spec_.layer_in(l) + 1);
    return off;
  }

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> weights(
      std::size_t l) const {
    return {theta_.data() + offset(l), static_cast<Eigen::Index>(spec_.layer_out(l)),
            static_cast<Eigen::Index>(spec_.layer_in(l))};
  }

  Eigen::Map<const Eigen::RowVectorXd> bias(std::size_t l) const {
    return {theta_.data() + offset(l) + spec_.layer_out(l) * spec_.layer_in(l),
            static_cast<Eigen::Index>(spec_.layer_out(l))};
  }

  Points run(const Points& x, std::span<const double> t, ForwardCache* cache) const {
    Eigen::MatrixXd a = features(x, t);
    if (cache) {
      cache->version = version_;
      cache->rows = x.rows();
      cache->inputs.clear();
      cache->pre.clear();
    }
    for (std::size_t l = 0; l <= spec_.hidden_layers; ++l) {
      Eigen::MatrixXd z = a * weights(l).transpose();
      z.rowwise() += bias(l);
      if (cache) cache->inputs.push_back(std::move(a));
      if (l == spec_.hidden_layers) return z;
      const Eigen::ArrayXXd za = z.array();
      a = (za / (1.0 + (-za).exp())).matrix();
      if (cache) cache->pre.push_back(std::move(z));
    }
    return {};
  }

  NetSpec spec_;
  Vector theta_;
  Eigen::ArrayXd time_freq_;
  std::uint64_t version_ = 1;
};

struct AdamState {
  std::uint64_t step = 0;
  Vector m;
  Vector v;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double learning_rate)
      : m(Vector::Zero(static_cast<Eigen::Index>(n))), v(Vector::Zero(static_cast<Eigen::Index>(n))),
        lr(learning_rate) {}
};

/// One bias-corrected Adam update. Returns the gradient norm before clipping.
inline double adam_step(AdamState& state, Vector& theta, const Vector& grad,
                        std::optional<double> clip_norm = {}) {
  if (grad.size() != theta.size() || state.m.size() != theta.size() || state.v.size() != theta.size())
    throw ConfigError("adam_step: shape mismatch");
  if (!grad.allFinite()) throw NumericError("adam_step: non-finite gradient");
  const double norm = grad.norm();
  const double factor = clip_norm && norm > *clip_norm ? *clip_norm / norm : 1.0;
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * factor * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * (factor * factor) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  theta.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
  return norm;
}

inline double adam_step(AdamState& state, ScoreNet& net, const Vector& grad,
                        std::optional<double> clip_norm = {}) {
  return adam_step(state, net.mutable_parameters(), grad, clip_norm);
}

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointVersion;
  NetSpec spec;
  double sigma_min = 1e-5;
  double sigma_max = 1.0;
  std::string benchmark;
  double scale = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  Vector theta;
  std::optional<AdamState> adam;

  ScoreNet network() const { return ScoreNet(spec, theta); }
};

namespace detail {

inline nlohmann::json to_json_array(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector from_json_array(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw IoError(std::string("checkpoint: ") + what + " is not an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw IoError(std::string("checkpoint: non-numeric entry in ") + what);
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const NetSpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden_layers", s.hidden_layers},
          {"hidden_width", s.hidden_width},
          {"time_embed_dim", s.time_embed_dim},
          {"fourier_features", s.fourier_features},
          {"activation", "silu"}};
}

inline nlohmann::json checkpoint_json(const Checkpoint& c) {
  nlohmann::json j;
  j["format_version"] = c.format_version;
  j["net"] = to_json(c.spec);
  j["schedule"] = {{"sigma_min", c.sigma_min}, {"sigma_max", c.sigma_max}};
  j["benchmark"] = c.benchmark;
  j["scale"] = c.scale;
  j["seed"] = c.seed;
  j["step"] = c.step;
  j["theta"] = detail::to_json_array(c.theta);
  if (c.adam) {
    j["adam"] = {{"step", c.adam->step},   {"lr", c.adam->lr},     {"beta1", c.adam->beta1},
                 {"beta2", c.adam->beta2}, {"eps", c.adam->eps},   {"m", detail::to_json_array(c.adam->m)},
                 {"v", detail::to_json_array(c.adam->v)}};
  }
  return j;
}

/// Writes to a temporary sibling and renames, so readers never see a partial file.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (!c.theta.allFinite()) throw NumericError("save_checkpoint: non-finite parameters");
  write_text_atomic(path, checkpoint_json(c).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  Checkpoint c;
  try {
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != kCheckpointVersion)
      throw ConfigError("checkpoint format_version " + std::to_string(c.format_version) +
                        " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    const auto& n = j.at("net");
    c.spec.input_dim = n.at("input_dim").get<std::size_t>();
    c.spec.hidden_layers = n.at("hidden_layers").get<std::size_t>();
    c.spec.hidden_width = n.at("hidden_width").get<std::size_t>();
    c.spec.time_embed_dim = n.at("time_embed_dim").get<std::size_t>();
    c.spec.fourier_features = n.at("fourier_features").get<std::size_t>();
    c.sigma_min = j.at("schedule").at("sigma_min").get<double>();
    c.sigma_max = j.at("schedule").at("sigma_max").get<double>();
    c.benchmark = j.at("benchmark").get<std::string>();
    c.scale = j.at("scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.step = j.at("step").get<std::uint64_t>();
    c.theta = detail::from_json_array(j.at("theta"), "theta");
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      AdamState s;
      s.step = a.at("step").get<std::uint64_t>();
      s.lr = a.at("lr").get<double>();
      s.beta1 = a.at("beta1").get<double>();
      s.beta2 = a.at("beta2").get<double>();
      s.eps = a.at("eps").get<double>();
      s.m = detail::from_json_array(a.at("m"), "adam.m");
      s.v = detail::from_json_array(a.at("v"), "adam.v");
      if (s.m.size() != c.theta.size() || s.v.size() != c.theta.size())
        throw ConfigError("checkpoint: Adam moments do not match parameter count");
      c.adam = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  c.spec.validate();
  if (static_cast<std::size_t>(c.theta.size()) != c.spec.parameter_count())
    throw ConfigError("checkpoint: theta has " + std::to_string(c.theta.size()) +
                      " entries, net spec requires " + std::to_string(c.spec.parameter_count()));
  return c;
}

/// Throws on dimension mismatch; returns human-readable warnings otherwise.
inline std::vector<std::string> check_compatible(const Checkpoint& c, const std::string& benchmark,
                                                 std::size_t dim) {
  if (c.spec.input_dim != dim)
    throw ConfigError("checkpoint dimension " + std::to_string(c.spec.input_dim) +
                      " does not match benchmark dimension " + std::to_string(dim));
  std::vector<std::string> warnings;
  if (c.benchmark != benchmark)
    warnings.push_back("checkpoint was trained on '" + c.benchmark + "' but is used for '" + benchmark + "'");
  return warnings;
}

}  // namespace iwsm
