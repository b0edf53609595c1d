#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "iwsm/energy.hpp"
#include "iwsm/error.hpp"
#include "iwsm/estimators.hpp"
#include "iwsm/numerics.hpp"
#include "iwsm/sampler.hpp"
#include "iwsm/scorenet.hpp"
#include "iwsm/sde.hpp"

namespace iwsm {

/// Fixed-capacity FIFO ring of points in physical coordinates.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t dim)
      : data_(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(dim)) {
    if (capacity < 1 || dim < 1) throw ConfigError("ReplayBuffer: capacity and dim must be >= 1");
  }

  std::size_t capacity() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  std::size_t size() const noexcept { return size_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.cols()); }
  bool empty() const noexcept { return size_ == 0; }

  /// Appends rows, evicting the oldest entries once full.
  void push(const Points& rows) {
    if (rows.cols() != data_.cols()) throw ConfigError("ReplayBuffer::push: dimension mismatch");
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      data_.row(static_cast<Eigen::Index>(head_)) = rows.row(i);
      head_ = (head_ + 1) % capacity();
      size_ = std::min(size_ + 1, capacity());
    }
  }

  /// Uniform draws with replacement over the current contents.
  Points sample(std::size_t count, Rng& rng) const {
    if (empty()) throw ConfigError("ReplayBuffer::sample: buffer is empty");
    Points out(static_cast<Eigen::Index>(count), data_.cols());
    for (std::size_t i = 0; i < count; ++i)
      out.row(static_cast<Eigen::Index>(i)) = at(static_cast<std::size_t>(rng.below(size_)));
    return out;
  }

  /// Entry i in insertion order, 0 = oldest retained.
  Eigen::RowVectorXd at(std::size_t i) const {
    if (i >= size_) throw ConfigError("ReplayBuffer::at: index out of range");
    const std::size_t start = size_ < capacity() ? 0 : head_;
    return data_.row(static_cast<Eigen::Index>((start + i) % capacity()));
  }

  Points contents() const {
    Points out(static_cast<Eigen::Index>(size_), data_.cols());
    for (std::size_t i = 0; i < size_; ++i) out.row(static_cast<Eigen::Index>(i)) = at(i);
    return out;
  }

 private:
  Points data_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 128;      // B
  std::size_t snis_samples = 5;      // S
  std::size_t inner_samples = 500;   // L = K
  std::size_t n_inner = 100;
  std::size_t n_outer = 100;
  std::size_t gen_per_outer = 1000;
  std::size_t buffer_capacity = 10000;
  std::size_t gen_steps = 1000;
  double t_floor = 1e-3;
  double lr = 5e-4;
  std::optional<double> target_clip = 70.0;
  std::optional<double> grad_clip;
  std::optional<double> buffer_clamp = 1.0;  // generated samples clamped to [-c, c] (normalized)
  std::size_t checkpoint_every = 0;          // outer loops; 0 keeps only the final checkpoint
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool weighted = true;

  void validate() const {
    if (batch_size < 1 || snis_samples < 1 || inner_samples < 1 || n_inner < 1 || gen_per_outer < 1 ||
        buffer_capacity < 1 || gen_steps < 1)
      throw ConfigError("TrainConfig: all counts must be >= 1 (n_outer may be 0)");
    if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be positive");
    if (target_clip && !(*target_clip > 0.0)) throw ConfigError("TrainConfig: target_clip must be positive");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("TrainConfig: grad_clip must be positive");
    if (buffer_clamp && !(*buffer_clamp > 0.0)) throw ConfigError("TrainConfig: buffer_clamp must be positive");
  }
};

struct TrainLogRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
  std::size_t buffer_fill = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
  std::size_t generation_failures = 0;
};

/// One inner step's estimator outputs for all B x S points, normalized coordinates.
struct SnisBatch {
  Points points;                 // (B*S) x d, row b*S + s
  std::vector<double> times;     // per row
  Points targets;                // S_L per row
  std::vector<double> weights;   // per row; sums to 1 within each b
};

/// Draws the forward-perturbed points, S_L targets and SNIS weights of one
/// inner step from the buffer mini-batch y0 (normalized, B rows). log D_M
/// uses the same B rows as its sample set.
inline SnisBatch build_snis_batch(const EnergyFn& f, const VeSchedule& sched, const Points& y0,
                                  std::span<const double> t, const TrainConfig& cfg, const Rng& step_rng) {
  const auto B = static_cast<std::size_t>(y0.rows());
  const std::size_t S = cfg.snis_samples;
  const auto d = y0.cols();
  SnisBatch out;
  out.points.resize(static_cast<Eigen::Index>(B * S), d);
  out.targets.resize(static_cast<Eigen::Index>(B * S), d);
  out.times.resize(B * S);
  out.weights.resize(B * S);
  const unsigned workers = cfg.threads ? cfg.threads : default_threads();
  parallel_for(B, workers, [&](std::size_t b) {
    Rng rng = step_rng.substream("b", b);
    const double tb = t[b];
    std::vector<double> logw(S);
    for (std::size_t s = 0; s < S; ++s) {
      const auto r = static_cast<Eigen::Index>(b * S + s);
      const Vector yt = sched.perturb(std::span<const double>(y0.row(static_cast<Eigen::Index>(b)).data(),
                                                              static_cast<std::size_t>(d)),
                                      tb, rng);
      const std::span<const double> yts(yt.data(), static_cast<std::size_t>(d));
      const InnerSamples inner = draw_inner_samples(f, sched, yts, tb, cfg.inner_samples, rng);
      out.targets.row(r) = score_target(inner, cfg.target_clip).value.transpose();
      logw[s] = log_numerator(inner) - log_denominator(sched, yts, tb, y0);
      out.points.row(r) = yt.transpose();
      out.times[static_cast<std::size_t>(r)] = tb;
    }
    const std::vector<double> w =
        cfg.weighted ? snis_weights(logw) : std::vector<double>(S, 1.0 / static_cast<double>(S));
    for (std::size_t s = 0; s < S; ++s) out.weights[b * S + s] = w[s];
  });
  return out;
}

namespace detail {

inline Checkpoint make_checkpoint(const EnergyFn& f, const VeSchedule& sched, const ScoreNet& net,
                                  const AdamState& adam, std::uint64_t seed, std::uint64_t step) {
  Checkpoint c;
  c.spec = net.spec();
  c.sigma_min = sched.sigma_min();
  c.sigma_max = sched.sigma_max();
  c.benchmark = f.id();
  c.scale = f.scale();
  c.seed = seed;
  c.step = step;
  c.theta = net.parameters();
  c.adam = adam;
  return c;
}

inline Points clamp_rows(Points p, std::optional<double> c) {
  if (c) p = p.cwiseMax(-*c).cwiseMin(*c);
  return p;
}

}  // namespace detail

/// Replay-buffer training loop with SNIS-weighted score matching. With
/// cfg.weighted == false every SNIS weight is 1/S (the unweighted ablation);
/// draws are identical either way.
inline TrainResult train(const EnergyFn& f, const VeSchedule& sched, const NetSpec& netspec,
                         const TrainConfig& cfg, const std::optional<std::filesystem::path>& out_dir = {}) {
  cfg.validate();
  if (netspec.input_dim != f.dim())
    throw ConfigError("train: net input_dim " + std::to_string(netspec.input_dim) +
                      " does not match benchmark dimension " + std::to_string(f.dim()));
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir->string() + ": " + ec.message());
  }
  const Rng root(cfg.seed);
  ScoreNet net(netspec, root.substream("init", 0).next_u64());
  AdamState adam(net.parameter_count(), cfg.lr);
  ReplayBuffer buffer(cfg.buffer_capacity, f.dim());
  TrainResult result;

  std::ofstream log_file;
  if (out_dir) {
    log_file.open(*out_dir / "train_log.csv", std::ios::binary | std::ios::trunc);
    if (!log_file) throw IoError("cannot open train_log.csv in " + out_dir->string());
    log_file << "step,loss,wall_ms,buffer_fill\n";
  }
  const auto save = [&](const std::string& name, const Checkpoint& c) {
    if (out_dir) save_checkpoint(*out_dir / name, c);
  };

  {
    Rng cold = root.substream("cold-start", 0);
    Points prior(static_cast<Eigen::Index>(cfg.gen_per_outer), static_cast<Eigen::Index>(f.dim()));
    for (Eigen::Index i = 0; i < prior.rows(); ++i)
      for (Eigen::Index j = 0; j < prior.cols(); ++j) prior(i, j) = sched.sigma_max() * cold.normal();
    buffer.push(detail::clamp_rows(std::move(prior), cfg.buffer_clamp) * f.scale());
  }

  const auto t_start = std::chrono::steady_clock::now();
  std::uint64_t step = 0;
  const auto B = static_cast<Eigen::Index>(cfg.batch_size);
  for (std::size_t outer = 0; outer < cfg.n_outer; ++outer) {
    IntegratorConfig icfg;
    icfg.n_steps = cfg.gen_steps;
    icfg.t_floor = cfg.t_floor;
    icfg.seed = root.substream("generate", outer).next_u64();
    icfg.threads = cfg.threads;
    SampleResult gen = sample_network(f, sched, net, icfg, cfg.gen_per_outer);
    result.generation_failures += gen.n_failed;
    if (gen.samples.size() > 0)
      buffer.push(detail::clamp_rows(gen.samples.points / f.scale(), cfg.buffer_clamp) * f.scale());

    for (std::size_t inner = 0; inner < cfg.n_inner; ++inner) {
      const Rng step_rng = root.substream("step", step);
      Rng batch_rng = step_rng.substream("batch", 0);
      const Points y0 = buffer.sample(cfg.batch_size, batch_rng) / f.scale();
      std::vector<double> t(cfg.batch_size);
      for (double& tb : t) tb = 1.0 - batch_rng.uniform();  // (0, 1]
      const SnisBatch batch = build_snis_batch(f, sched, y0, t, cfg, step_rng);

      ForwardCache cache;
      const Points out = net.forward(batch.points, batch.times, cache);
      Points upstream = out - batch.targets;
      double loss = 0.0;
      for (Eigen::Index r = 0; r < upstream.rows(); ++r) {
        const double w = batch.weights[static_cast<std::size_t>(r)];
        loss += w * upstream.row(r).squaredNorm();
        upstream.row(r) *= 2.0 * w / static_cast<double>(B);
      }
      loss /= static_cast<double>(B);
      const auto abort = [&](const std::string& what) {
        save("ckpt_" + std::to_string(step) + ".json", detail::make_checkpoint(f, sched, net, adam, cfg.seed, step));
        throw NumericError("train: non-finite " + what + " at step " + std::to_string(step) +
                           "; last good parameters saved as ckpt_" + std::to_string(step) + ".json");
      };
      if (!std::isfinite(loss)) abort("loss");
      const Vector grad = net.backward(cache, upstream);
      if (!grad.allFinite()) abort("gradient");
      const Vector keep = net.parameters();
      const AdamState keep_adam = adam;
      adam_step(adam, net, grad, cfg.grad_clip);
      if (!net.parameters().allFinite()) {
        net.mutable_parameters() = keep;
        adam = keep_adam;
        abort("parameters");
      }
      ++step;

      TrainLogRow row;
      row.step = step;
      row.loss = loss;
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
      row.buffer_fill = buffer.size();
      result.log.push_back(row);
      if (log_file) log_file << row.step << ',' << format_real(row.loss) << ',' << format_real(row.wall_ms) << ','
                             << row.buffer_fill << '\n';
    }
    if (log_file) log_file.flush();
    if (cfg.checkpoint_every && (outer + 1) % cfg.checkpoint_every == 0)
      save("ckpt_" + std::to_string(step) + ".json", detail::make_checkpoint(f, sched, net, adam, cfg.seed, step));
  }
  result.checkpoint = detail::make_checkpoint(f, sched, net, adam, cfg.seed, step);
  save("ckpt_final.json", result.checkpoint);
  return result;
}

inline TrainResult train_unweighted_ablation(const EnergyFn& f, const VeSchedule& sched, const NetSpec& netspec,
                                             TrainConfig cfg,
                                             const std::optional<std::filesystem::path>& out_dir = {}) {
  cfg.weighted = false;
  return train(f, sched, netspec, cfg, out_dir);
}

}  // namespace iwsm
