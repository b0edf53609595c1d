#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "iwsm/energy.hpp"
#include "iwsm/error.hpp"
#include "iwsm/sampler.hpp"
#include "iwsm/scorenet.hpp"
#include "iwsm/trainer.hpp"

namespace iwsm {

struct BenchmarkConfig {
  std::string id = "gmm40";
  std::uint64_t means_seed = 0;
  std::optional<double> scale;   // default per benchmark
  double dw_d0 = 4.0;
};

namespace detail {

inline bool parse_suffix(const std::string& id, const std::string& prefix, std::size_t& value) {
  if (id.rfind(prefix, 0) != 0 || id.size() == prefix.size()) return false;
  const std::string rest = id.substr(prefix.size());
  if (rest.find_first_not_of("0123456789") != std::string::npos) return false;
  value = std::stoul(rest);
  return value > 0;
}

}  // namespace detail

/// gmm40 / gmm80 / gmm120 (scales 50 / 100 / 150), gmm<m> (scale 1.25 m),
/// gauss<d>, dw4, lj13, lj55, lj<n>, bimodal1d.
inline EnergyFn make_benchmark(const BenchmarkConfig& b) {
  std::size_t v = 0;
  if (detail::parse_suffix(b.id, "gmm", v)) {
    const double def = v == 40 ? 50.0 : v == 80 ? 100.0 : v == 120 ? 150.0 : 1.25 * static_cast<double>(v);
    return EnergyFn(GmmSpec::make(v, b.means_seed), b.scale.value_or(def), b.id);
  }
  if (detail::parse_suffix(b.id, "gauss", v)) return EnergyFn(GaussSpec{v}, b.scale.value_or(1.0), b.id);
  if (b.id == "dw4") {
    DoubleWellSpec s;
    s.d0 = b.dw_d0;
    return EnergyFn(s, b.scale.value_or(1.0), b.id);
  }
  if (detail::parse_suffix(b.id, "lj", v)) {
    LennardJonesSpec s;
    s.n_particles = v;
    return EnergyFn(s, b.scale.value_or(1.0), b.id);
  }
  if (b.id == "bimodal1d") return EnergyFn(Bimodal1dSpec{}, b.scale.value_or(1.0), b.id);
  throw ConfigError("unknown benchmark '" + b.id + "'");
}

inline EnergyFn make_benchmark(const std::string& id) {
  BenchmarkConfig b;
  b.id = id;
  return make_benchmark(b);
}

/// Replay buffer capacity per benchmark: gmm80 20k, everything else 10k.
inline std::size_t default_buffer_capacity(const std::string& id) { return id == "gmm80" ? 20000 : 10000; }

struct RunConfig {
  BenchmarkConfig benchmark;
  double sigma_min = 1e-5;
  double sigma_max = 1.0;
  NetSpec net;
  TrainConfig train;
  IntegratorConfig sampler;
  std::uint64_t seed = 0;
  std::optional<unsigned> threads;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("config: unknown key '" + where + "." + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    const json& v = j.at(key);
    if (!v.is_number_integer() || (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError("config: '" + where + "." + key + "' must be a " +
                        (std::is_unsigned_v<T> ? "non-negative " : "") + "integer");
  }
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
  }
}

template <class T>
void read_optional(const json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read(j, key, v, where);
  out = v;
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace detail

/// Parses a RunConfig document; every level rejects unknown keys. Missing
/// keys keep their defaults (buffer capacity follows the benchmark).
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::read;
  using detail::read_optional;
  RunConfig c;
  detail::reject_unknown(j, {"benchmark", "schedule", "net", "train", "sampler", "seed", "threads"}, "config");
  if (j.contains("benchmark")) {
    const auto& b = j["benchmark"];
    detail::reject_unknown(b, {"id", "means_seed", "scale", "dw_d0"}, "benchmark");
    read(b, "id", c.benchmark.id, "benchmark");
    read(b, "means_seed", c.benchmark.means_seed, "benchmark");
    read_optional(b, "scale", c.benchmark.scale, "benchmark");
    read(b, "dw_d0", c.benchmark.dw_d0, "benchmark");
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    detail::reject_unknown(s, {"sigma_min", "sigma_max"}, "schedule");
    read(s, "sigma_min", c.sigma_min, "schedule");
    read(s, "sigma_max", c.sigma_max, "schedule");
  }
  if (j.contains("net")) {
    const auto& n = j["net"];
    detail::reject_unknown(n, {"hidden_layers", "hidden_width", "time_embed_dim", "fourier_features", "activation"},
                           "net");
    read(n, "hidden_layers", c.net.hidden_layers, "net");
    read(n, "hidden_width", c.net.hidden_width, "net");
    read(n, "time_embed_dim", c.net.time_embed_dim, "net");
    read(n, "fourier_features", c.net.fourier_features, "net");
    std::string act = "silu";
    read(n, "activation", act, "net");
    if (act != "silu") throw ConfigError("config: net.activation must be 'silu'");
  }
  c.train.buffer_capacity = default_buffer_capacity(c.benchmark.id);
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t,
                           {"batch_size", "snis_samples", "inner_samples", "n_inner", "n_outer", "gen_per_outer",
                            "buffer_capacity", "gen_steps", "t_floor", "lr", "target_clip", "grad_clip",
                            "buffer_clamp", "checkpoint_every", "weighted"},
                           "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "snis_samples", c.train.snis_samples, "train");
    read(t, "inner_samples", c.train.inner_samples, "train");
    read(t, "n_inner", c.train.n_inner, "train");
    read(t, "n_outer", c.train.n_outer, "train");
    read(t, "gen_per_outer", c.train.gen_per_outer, "train");
    if (t.contains("buffer_capacity") && !t["buffer_capacity"].is_null())
      read(t, "buffer_capacity", c.train.buffer_capacity, "train");
    read(t, "gen_steps", c.train.gen_steps, "train");
    read(t, "t_floor", c.train.t_floor, "train");
    read(t, "lr", c.train.lr, "train");
    read_optional(t, "target_clip", c.train.target_clip, "train");
    read_optional(t, "grad_clip", c.train.grad_clip, "train");
    read_optional(t, "buffer_clamp", c.train.buffer_clamp, "train");
    read(t, "checkpoint_every", c.train.checkpoint_every, "train");
    read(t, "weighted", c.train.weighted, "train");
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    detail::reject_unknown(s, {"n_steps", "t_floor"}, "sampler");
    read(s, "n_steps", c.sampler.n_steps, "sampler");
    read(s, "t_floor", c.sampler.t_floor, "sampler");
  }
  read(j, "seed", c.seed, "config");
  read_optional(j, "threads", c.threads, "config");

  // Validate eagerly so a bad config fails before any work starts.
  (void)make_benchmark(c.benchmark);
  (void)VeSchedule(c.sigma_min, c.sigma_max);
  c.net.input_dim = make_benchmark(c.benchmark).dim();
  c.net.validate();
  c.train.seed = c.seed;
  c.train.validate();
  c.sampler.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

/// Fully resolved document; parse_run_config(to_json(c)) reproduces c.
inline nlohmann::json to_json(const RunConfig& c) {
  using detail::optional_json;
  nlohmann::json j;
  j["benchmark"] = {{"id", c.benchmark.id},
                    {"means_seed", c.benchmark.means_seed},
                    {"scale", make_benchmark(c.benchmark).scale()},
                    {"dw_d0", c.benchmark.dw_d0}};
  j["schedule"] = {{"sigma_min", c.sigma_min}, {"sigma_max", c.sigma_max}};
  j["net"] = {{"hidden_layers", c.net.hidden_layers},
              {"hidden_width", c.net.hidden_width},
              {"time_embed_dim", c.net.time_embed_dim},
              {"fourier_features", c.net.fourier_features},
              {"activation", "silu"}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"snis_samples", c.train.snis_samples},
                {"inner_samples", c.train.inner_samples},
                {"n_inner", c.train.n_inner},
                {"n_outer", c.train.n_outer},
                {"gen_per_outer", c.train.gen_per_outer},
                {"buffer_capacity", c.train.buffer_capacity},
                {"gen_steps", c.train.gen_steps},
                {"t_floor", c.train.t_floor},
                {"lr", c.train.lr},
                {"target_clip", optional_json(c.train.target_clip)},
                {"grad_clip", optional_json(c.train.grad_clip)},
                {"buffer_clamp", optional_json(c.train.buffer_clamp)},
                {"checkpoint_every", c.train.checkpoint_every},
                {"weighted", c.train.weighted}};
  j["sampler"] = {{"n_steps", c.sampler.n_steps}, {"t_floor", c.sampler.t_floor}};
  j["seed"] = c.seed;
  j["threads"] = optional_json(c.threads);
  return j;
}

}  // namespace iwsm
