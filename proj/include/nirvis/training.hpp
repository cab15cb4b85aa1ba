#pragma once

// Adam, the plateau learning-rate schedule, geometric augmentation and the
// joint day/night training loop with checkpointing and resume.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nirvis/dataset.hpp"
#include "nirvis/io.hpp"
#include "nirvis/losses.hpp"
#include "nirvis/networks.hpp"
#include "nirvis/rng.hpp"

namespace nirvis {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 4;
  int patch_size = 64;
  int epochs = 200;
  int plateau_patience = 10;
  double lr_decay = 0.5;
  double plateau_threshold = 1e-4;  // relative improvement that resets patience
  std::uint64_t seed = 0;

  int checkpoint_every = 10;        // epochs; the final epoch is always saved
  bool augment = true;
  double proportion_weight = 10.0;  // auxiliary supervision of Proportion-Net
  bool two_phase = false;           // separation-only warm-up before joint training
  int separation_epochs = 0;

  LossWeights weights;
  LossTerms terms;

  /// CPU-scale defaults.
  static TrainConfig desk() { return {}; }

  /// Full-scale settings: 256 px patches, batch 10, 3000 epochs.
  static TrainConfig full_scale() {
    TrainConfig c;
    c.batch_size = 10;
    c.patch_size = 256;
    c.epochs = 3000;
    return c;
  }

  void validate() const {
    detail::require(lr > 0.0 && std::isfinite(lr), "train: learning rate must be positive");
    detail::require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train: Adam betas must be in [0, 1)");
    detail::require(eps > 0.0, "train: Adam epsilon must be positive");
    detail::require(batch_size >= 1, "train: batch size must be at least 1");
    detail::require(patch_size >= 0, "train: patch size must be non-negative (0 = full image)");
    detail::require(epochs >= 0, "train: epochs must be non-negative");
    detail::require(plateau_patience >= 1, "train: plateau patience must be at least 1");
    detail::require(lr_decay > 0.0 && lr_decay <= 1.0, "train: lr decay must be in (0, 1]");
    detail::require(plateau_threshold >= 0.0, "train: plateau threshold must be non-negative");
    detail::require(checkpoint_every >= 1, "train: checkpoint interval must be at least 1");
    detail::require(proportion_weight >= 0.0, "train: proportion weight must be non-negative");
    detail::require(separation_epochs >= 0, "train: separation epochs must be non-negative");
    weights.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"batch_size", c.batch_size},
       {"patch_size", c.patch_size},
       {"epochs", c.epochs},
       {"plateau_patience", c.plateau_patience},
       {"lr_decay", c.lr_decay},
       {"plateau_threshold", c.plateau_threshold},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"augment", c.augment},
       {"proportion_weight", c.proportion_weight},
       {"two_phase", c.two_phase},
       {"separation_epochs", c.separation_epochs},
       {"weights", c.weights},
       {"terms", {{"ssim", c.terms.ssim}, {"smoothness", c.terms.smoothness}, {"perceptual", c.terms.perceptual}}}};
}

/// Missing keys keep the values already in `c`, so a preset can be
/// overridden field by field.
inline void merge_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.plateau_threshold = j.value("plateau_threshold", c.plateau_threshold);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.augment = j.value("augment", c.augment);
  c.proportion_weight = j.value("proportion_weight", c.proportion_weight);
  c.two_phase = j.value("two_phase", c.two_phase);
  c.separation_epochs = j.value("separation_epochs", c.separation_epochs);
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  if (j.contains("terms")) {
    const auto& t = j.at("terms");
    c.terms.ssim = t.value("ssim", c.terms.ssim);
    c.terms.smoothness = t.value("smoothness", c.terms.smoothness);
    c.terms.perceptual = t.value("perceptual", c.terms.perceptual);
  }
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  merge_json(j, c);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments of one tensor plus its step counter.
template <class T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
  long long t = 0;

  explicit AdamMoments(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// One bias-corrected Adam update of `params` in place.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& state, const AdamHyper& h) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ValidationError("adam_step: size mismatch between parameters (" + std::to_string(params.size()) +
                          "), gradients (" + std::to_string(grads.size()) + ") and state (" +
                          std::to_string(state.m.size()) + ")");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericalError("adam_step: non-finite gradient at index " + std::to_string(i));
  ++state.t;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    const double v = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    params[i] = static_cast<T>(params[i] - h.lr * (m / c1) / (std::sqrt(v / c2) + h.eps));
  }
}

/// Adam over a whole parameter set. Parameters without a gradient in the
/// current graph are treated as having a zero gradient.
template <class T>
class Adam {
 public:
  explicit Adam(AdamHyper h = {}) : hyper_(h) {}

  AdamHyper& hyper() { return hyper_; }
  const AdamHyper& hyper() const { return hyper_; }
  std::vector<AdamMoments<T>>& moments() { return moments_; }
  const std::vector<AdamMoments<T>>& moments() const { return moments_; }
  long long steps() const { return moments_.empty() ? 0 : moments_.front().t; }

  void step(nn::ParameterSet<T>& ps) {
    auto& items = ps.items();
    if (moments_.empty())
      for (const auto& p : items) moments_.emplace_back(p.tensor.size());
    if (moments_.size() != items.size()) throw ValidationError("adam: optimizer state does not match parameter set");
    // Validate everything first so a bad step leaves the parameters untouched.
    for (const auto& p : items)
      for (T g : p.tensor.grad())
        if (!std::isfinite(g)) throw NumericalError("adam: non-finite gradient in parameter '" + p.name + "'");
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto& t = items[i].tensor;
      if (t.has_grad()) {
        adam_step<T>(t.storage(), t.grad(), moments_[i], hyper_);
      } else {
        const std::vector<T> zero(t.size(), T(0));
        adam_step<T>(t.storage(), zero, moments_[i], hyper_);
      }
    }
  }

 private:
  AdamHyper hyper_;
  std::vector<AdamMoments<T>> moments_;
};

// ---------------------------------------------------------------------------
// Learning-rate schedule

/// Multiplies the rate by `decay` once the loss has failed to improve by a
/// relative `threshold` for `patience` consecutive epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double decay, int patience, double threshold)
      : lr_(lr), decay_(decay), patience_(patience), threshold_(threshold) {}

  /// Records one epoch loss and returns the rate for the next epoch.
  double step(double loss) {
    if (loss < best_ - threshold_ * std::abs(best_) || std::isinf(best_)) {
      best_ = loss;
      bad_ = 0;
    } else if (++bad_ >= patience_) {
      lr_ *= decay_;
      bad_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }
  int bad_epochs() const { return bad_; }

  nlohmann::json state() const {
    return {{"lr", lr_}, {"best", std::isinf(best_) ? nlohmann::json("inf") : nlohmann::json(best_)}, {"bad", bad_}};
  }
  void set_state(const nlohmann::json& j) {
    lr_ = j.at("lr").get<double>();
    best_ = j.at("best").is_string() ? std::numeric_limits<double>::infinity() : j.at("best").get<double>();
    bad_ = j.at("bad").get<int>();
  }

 private:
  double lr_;
  double decay_;
  int patience_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

/// Rate after replaying a per-epoch loss history.
inline double lr_from_history(const std::vector<double>& history, const TrainConfig& cfg) {
  PlateauScheduler s(cfg.lr, cfg.lr_decay, cfg.plateau_patience, cfg.plateau_threshold);
  for (double l : history) s.step(l);
  return s.lr();
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentDraw {
  int y0 = 0;
  int x0 = 0;
  bool flip = false;  // horizontal mirror
  int rot = 0;        // quarter turns, counter-clockwise
};

inline AugmentDraw draw_augmentation(int height, int width, int patch, Rng& rng) {
  if (patch > height || patch > width)
    throw ValidationError("augment: crop " + std::to_string(patch) + " larger than image " + std::to_string(height) +
                          "x" + std::to_string(width));
  AugmentDraw d;
  d.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - patch + 1)));
  d.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - patch + 1)));
  d.flip = rng.below(2) == 1;
  d.rot = static_cast<int>(rng.below(4));
  return d;
}

/// Crop `patch` x `patch` at (y0, x0), mirror, then rotate.
inline Raster apply_augmentation(const Raster& in, const AugmentDraw& d, int patch) {
  if (patch > in.height() || patch > in.width() || d.y0 < 0 || d.x0 < 0 || d.y0 + patch > in.height() ||
      d.x0 + patch > in.width())
    throw ValidationError("augment: crop window outside the image");
  Raster out(patch, patch, in.channels(), in.space());
  for (int y = 0; y < patch; ++y)
    for (int x = 0; x < patch; ++x) {
      int sy = y, sx = x;
      // Inverse of: rotate by rot quarter turns (counter-clockwise).
      for (int r = 0; r < d.rot; ++r) {
        const int ty = sx, tx = patch - 1 - sy;
        sy = ty;
        sx = tx;
      }
      if (d.flip) sx = patch - 1 - sx;
      for (int c = 0; c < in.channels(); ++c) out.at(y, x, c) = in.at(d.y0 + sy, d.x0 + sx, c);
    }
  return out;
}

inline TrainingSample apply_augmentation(const TrainingSample& s, const AugmentDraw& d, int patch) {
  TrainingSample out;
  out.id = s.id;
  out.phase = s.phase;
  out.mixed = apply_augmentation(s.mixed, d, patch);
  out.vis = apply_augmentation(s.vis, d, patch);
  out.nir = apply_augmentation(s.nir, d, patch);
  out.deviation = apply_augmentation(s.deviation, d, patch);
  if (s.vis_long) out.vis_long = apply_augmentation(*s.vis_long, d, patch);
  return out;
}

/// Same random crop, flip and rotation for every raster of the sample.
inline TrainingSample augment(const TrainingSample& s, int patch, Rng& rng) {
  return apply_augmentation(s, draw_augmentation(s.mixed.height(), s.mixed.width(), patch, rng), patch);
}

// ---------------------------------------------------------------------------
// Objective

/// Network-ready tensors for one batch, all in [0,1].
template <class T>
struct BatchTensors {
  Tensor<T> mixed;
  Tensor<T> vis;
  Tensor<T> nir;
  Tensor<T> proportion;  // D / max(S_n, eps)
  Tensor<T> reference;   // restoration target
  Tensor<T> reference_luma;
};

template <class T>
BatchTensors<T> make_batch(const std::vector<TrainingSample>& samples) {
  detail::require(!samples.empty(), "empty batch");
  std::vector<const Raster*> mixed, vis, nir, ref;
  std::vector<Raster> prop;
  prop.reserve(samples.size());
  for (const auto& s : samples) {
    mixed.push_back(&s.mixed);
    vis.push_back(&s.vis);
    nir.push_back(&s.nir);
    ref.push_back(&s.reference());
    prop.push_back(proportion_target(s.deviation, s.nir));
  }
  std::vector<const Raster*> prop_ptrs;
  for (const auto& p : prop) prop_ptrs.push_back(&p);
  BatchTensors<T> b;
  b.mixed = tensor_from_rasters<T>(mixed);
  b.vis = tensor_from_rasters<T>(vis);
  b.nir = tensor_from_rasters<T>(nir);
  b.proportion = tensor_from_rasters<T>(prop_ptrs);
  b.reference = tensor_from_rasters<T>(ref);
  b.reference_luma = Pipeline<T>::luma(b.reference);
  return b;
}

template <class T>
struct LossBreakdown {
  Tensor<T> separation;  // undefined without Separation-Net
  Tensor<T> restoration;
  Tensor<T> total;       // alpha * separation + beta * restoration
  Tensor<T> proportion;  // auxiliary, undefined without Proportion-Net
  Tensor<T> objective;   // what is minimized
};

/// Evaluates every loss term of one forward pass. Without a NIR estimate the
/// smoothness guide falls back to the mixed input.
template <class T>
LossBreakdown<T> compute_losses(const PipelineOutput<T>& out, const BatchTensors<T>& b, const TrainConfig& cfg,
                                bool separation_only = false) {
  LossBreakdown<T> l;
  if (out.nir_est.defined())
    l.separation = losses::separation(out.nir_est, out.vis_est, b.nir, b.vis, b.mixed, cfg.weights, cfg.terms);
  const Tensor<T>& guide = out.nir_est.defined() ? out.nir_est : b.mixed;
  l.restoration = losses::restoration(out.final_rgb, out.luma_restored, b.reference, b.reference_luma, guide,
                                      cfg.weights, cfg.terms);
  l.total = losses::total(l.separation, l.restoration, cfg.weights);
  if (out.proportion.defined()) l.proportion = losses::mae(out.proportion, b.proportion);

  if (separation_only && l.separation.defined()) {
    l.objective = ops::mul_scalar(l.separation, T(cfg.weights.alpha));
  } else {
    l.objective = l.total;
  }
  if (l.proportion.defined() && cfg.proportion_weight > 0.0)
    l.objective = ops::add(l.objective, ops::mul_scalar(l.proportion, T(cfg.proportion_weight)));
  return l;
}

// ---------------------------------------------------------------------------
// Trainer

struct EpochStats {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double total = 0.0;
  double separation = 0.0;
  double restoration = 0.0;
  double proportion = 0.0;
  double seconds = 0.0;  // wall time, not part of the CSV
};

inline std::string csv_header() { return "epoch,lr,total,separation,restoration,proportion\n"; }

inline std::string csv_row(const EpochStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.epoch, s.lr, s.total, s.separation, s.restoration,
                s.proportion);
  return buf;
}

inline bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

class Trainer {
 public:
  using Callback = std::function<void(const EpochStats&)>;

  Trainer(Pipeline<float>& net, TrainConfig cfg)
      : net_(net),
        cfg_(std::move(cfg)),
        adam_(AdamHyper{cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps}),
        scheduler_(cfg_.lr, cfg_.lr_decay, cfg_.plateau_patience, cfg_.plateau_threshold),
        rng_(derive_seed(cfg_.seed, 0x7EA1ull)) {
    cfg_.validate();
  }

  const TrainConfig& config() const { return cfg_; }
  const std::vector<EpochStats>& history() const { return history_; }
  int epochs_done() const { return static_cast<int>(history_.size()); }
  double lr() const { return scheduler_.lr(); }
  Adam<float>& optimizer() { return adam_; }

  /// One pass over `data` in a seeded random order.
  EpochStats run_epoch(const std::vector<TrainingSample>& data) {
    check_data(data);
    const auto start = std::chrono::steady_clock::now();
    const int epoch = epochs_done() + 1;
    const bool sep_only = cfg_.two_phase && epoch <= cfg_.separation_epochs;
    adam_.hyper().lr = scheduler_.lr();

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);

    EpochStats st;
    st.epoch = epoch;
    st.lr = scheduler_.lr();
    std::size_t seen = 0;
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
      std::vector<TrainingSample> batch;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + bs); ++i) batch.push_back(prepare(data[order[i]]));
      const auto tensors = make_batch<float>(batch);
      net_.params().zero_grad();
      const auto out = net_.forward(tensors.mixed);
      const auto loss = compute_losses(out, tensors, cfg_, sep_only);
      const double objective = loss.objective.item();
      if (!std::isfinite(objective))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b0 / bs + 1));
      backward(loss.objective);
      adam_.step(net_.params());

      const double w = static_cast<double>(batch.size());
      st.total += w * loss.total.item();
      if (loss.separation.defined()) st.separation += w * loss.separation.item();
      st.restoration += w * loss.restoration.item();
      if (loss.proportion.defined()) st.proportion += w * loss.proportion.item();
      seen += batch.size();
    }
    const double n = static_cast<double>(seen);
    st.total /= n;
    st.separation /= n;
    st.restoration /= n;
    st.proportion /= n;
    if (!net_.params().all_finite()) throw NumericalError("non-finite parameters after epoch " + std::to_string(epoch));
    scheduler_.step(st.total);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history_.push_back(st);
    return st;
  }

  /// Trains up to cfg.epochs, writing the loss CSV and checkpoints to
  /// `out_dir`. On a numerical failure the most recent finite parameters are
  /// saved before the error propagates.
  void train(const std::vector<TrainingSample>& data, const fs::path& out_dir, const Callback& on_epoch = {}) {
    check_data(data);
    fs::create_directories(out_dir);
    write_csv(out_dir);
    while (epochs_done() < cfg_.epochs) {
      EpochStats st;
      try {
        st = run_epoch(data);
      } catch (const NumericalError& e) {
        if (net_.params().all_finite()) save(out_dir);
        throw NumericalError(std::string(e.what()) + "; last good checkpoint in '" + out_dir.string() + "'");
      }
      append_csv(out_dir, st);
      if (on_epoch) on_epoch(st);
      if (st.epoch % cfg_.checkpoint_every == 0 || st.epoch == cfg_.epochs) save(out_dir);
    }
    if (cfg_.epochs == 0 || history_.empty()) save(out_dir);
  }

  /// Parameters, optimizer moments, schedule, sampler state and history.
  void save(const fs::path& dir) const {
    io::save_checkpoint(dir, net_, {{"epochs_done", epochs_done()}});
    std::ofstream out(dir / "adam.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write optimizer state in '" + dir.string() + "'");
    for (const auto& m : adam_.moments()) {
      io::write_floats_le(out, m.m);
      io::write_floats_le(out, m.v);
    }
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : history_)
      hist.push_back({{"epoch", h.epoch}, {"lr", h.lr}, {"total", h.total}, {"separation", h.separation},
                      {"restoration", h.restoration}, {"proportion", h.proportion}});
    nlohmann::json state = {{"config", cfg_},
                            {"adam_steps", adam_.steps()},
                            {"scheduler", scheduler_.state()},
                            {"rng", rng_.state()},
                            {"history", hist}};
    io::write_json(dir / "trainer_state.json", state);
  }

  /// Restores the state written by save(); the pipeline must have the same
  /// topology as the checkpoint.
  void resume(const fs::path& dir) {
    if (!(io::read_topology(dir) == net_.topology()))
      throw DataError("checkpoint topology in '" + dir.string() + "' differs from the pipeline");
    io::load_parameters(dir, net_.params());
    const auto state = io::read_json(dir / "trainer_state.json");
    const auto steps = state.at("adam_steps").get<long long>();
    const auto blob = io::read_bytes(dir / "adam.bin");
    auto& items = net_.params().items();
    std::vector<AdamMoments<float>> moments;
    std::size_t offset = 0;
    if (steps > 0) {
      for (const auto& p : items) {
        const std::size_t n = p.tensor.size();
        if (offset + 8 * n > blob.size()) throw DataError("optimizer state truncated in '" + dir.string() + "'");
        AdamMoments<float> m;
        m.m = io::floats_from_le(blob.data() + offset, n);
        m.v = io::floats_from_le(blob.data() + offset + 4 * n, n);
        m.t = steps;
        offset += 8 * n;
        moments.push_back(std::move(m));
      }
    }
    adam_.moments() = std::move(moments);
    scheduler_.set_state(state.at("scheduler"));
    rng_.set_state(state.at("rng").get<std::string>());
    history_.clear();
    for (const auto& h : state.at("history"))
      history_.push_back({h.at("epoch").get<int>(), h.at("lr").get<double>(), h.at("total").get<double>(),
                          h.at("separation").get<double>(), h.at("restoration").get<double>(),
                          h.at("proportion").get<double>(), 0.0});
  }

 private:
  void check_data(const std::vector<TrainingSample>& data) const {
    if (data.empty()) throw DataError("training set is empty");
    bool day = false, night = false;
    for (const auto& s : data) (s.phase == Phase::Day ? day : night) = true;
    if (!day || !night) throw DataError("training set needs both daytime and nighttime samples");
    for (const auto& s : data)
      if (cfg_.patch_size > std::min(s.mixed.height(), s.mixed.width()))
        throw ValidationError("train: patch_size " + std::to_string(cfg_.patch_size) + " exceeds the " +
                              std::to_string(s.mixed.height()) + "x" + std::to_string(s.mixed.width()) +
                              " training images; lower patch_size or use 0 for full images");
  }

  TrainingSample prepare(const TrainingSample& s) {
    const int patch = cfg_.patch_size > 0 ? cfg_.patch_size : std::min(s.mixed.height(), s.mixed.width());
    if (!cfg_.augment) {
      if (patch == s.mixed.height() && patch == s.mixed.width()) return s;
      return apply_augmentation(s, AugmentDraw{}, patch);
    }
    return augment(s, patch, rng_);
  }

  void write_csv(const fs::path& dir) const {
    std::string text = csv_header();
    for (const auto& h : history_) text += csv_row(h);
    io::write_text(dir / "loss.csv", text);
  }

  void append_csv(const fs::path& dir, const EpochStats& st) const {
    std::ofstream out(dir / "loss.csv", std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot append to loss curve in '" + dir.string() + "'");
    out << csv_row(st);
  }

  Pipeline<float>& net_;
  TrainConfig cfg_;
  Adam<float> adam_;
  PlateauScheduler scheduler_;
  Rng rng_;
  std::vector<EpochStats> history_;
};

}  // namespace nirvis
