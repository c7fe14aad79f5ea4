#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/io.hpp"
#include "ruas/metrics.hpp"
#include "ruas/model.hpp"
#include "ruas/optim.hpp"

namespace ruas {

enum class TrainStrategy { end_to_end, hierarchical };

inline std::string_view to_string(TrainStrategy s) {
  return s == TrainStrategy::end_to_end ? "end_to_end" : "hierarchical";
}

inline std::optional<TrainStrategy> parse_train_strategy(std::string_view s) {
  if (s == "end_to_end") return TrainStrategy::end_to_end;
  if (s == "hierarchical") return TrainStrategy::hierarchical;
  return std::nullopt;
}

struct TrainConfig {
  double lambda = 1.0;
  TrainStrategy strategy = TrainStrategy::hierarchical;
  Variant variant = Variant::ruas;
  std::size_t epochs = 70;
  std::size_t pretrain_epochs = 30;    // hierarchical phase 1
  std::size_t estimator_epochs = 20;  // ruas_a only
  double lr = 3e-4;
  std::optional<double> momentum;  // sampled from (0.5, 0.999) when unset
  double weight_decay = 1e-3;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be nonnegative");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (momentum && !(*momentum >= 0.0 && *momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be nonnegative");
  }
};

/// The momentum the run uses: the configured one, or one draw from
/// U(0.5, 0.999).
inline double resolve_momentum(const std::optional<double>& configured, Rng& rng) {
  if (configured) return *configured;
  std::uniform_real_distribution<double> d(0.5, 0.999);
  return d(rng);
}

template <std::floating_point T>
struct TrainResult {
  std::vector<double> pretrain_curve;  // hierarchical phase 1: scene loss only
  std::vector<double> curve;           // main phase
  double momentum = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// Called after every epoch with the phase ("pretrain" or "train"), the
/// 1-based epoch and the mean loss.
using EpochHook = std::function<void(std::string_view phase, std::size_t epoch, double loss)>;

namespace detail {

template <std::floating_point T>
Tensor<T> zero_noise(const Tensor<T>& u) {
  return Tensor<T>::zeros(u.shape());
}

// Training losses are averaged over pixels so the step size does not grow
// with resolution.
template <std::floating_point T>
Tensor<T> per_pixel(const Tensor<T>& loss, const Tensor<T>& image) {
  return scale(loss, T(1) / static_cast<T>(image.numel()));
}

// Task loss of the removal path; ruas_s has no task module and falls back
// to the scene loss. Labeled samples use their reference as the fidelity
// target, unlabeled ones fall back to u_K.
template <std::floating_point T>
Tensor<T> task_objective(const RuasModel<T>& m, const Sample<T>& s, Variant v, double lambda) {
  auto sc = m.scene.forward(s.input);
  if (v == Variant::ruas_s) return per_pixel(scene_loss(sc.t, s.input, m.scene.cfg), s.input);
  const auto u = task_input(sc.u);
  Tensor<T> theta = v == Variant::ruas_a ? m.estimator.forward(u.detach()).detach() : zero_noise(u);
  auto x = m.denoiser.forward(u, theta);
  auto loss = task_loss(x, s.reference ? *s.reference : u, theta, m.task_cfg.mu);
  if (lambda > 0.0) loss = add(loss, scale(scene_loss(sc.t, s.input, m.scene.cfg), static_cast<T>(lambda)));
  return per_pixel(loss, s.input);
}

// One pass over the data; returns the mean loss or nullopt on a non-finite
// value, in which case `params` are restored to their epoch-start values.
template <std::floating_point T, class LossFn>
std::optional<double> run_epoch(ParamSet<T>& params, MomentumSgd<T>& opt, const std::vector<Sample<T>>& data,
                                LossFn&& loss_fn) {
  const auto snapshot = flatten_values(params);
  double total = 0;
  for (const auto& s : data) {
    auto loss = loss_fn(s);
    const double v = static_cast<double>(loss.item());
    if (!std::isfinite(v)) {
      zero_grads(params);
      assign_values<T>(params, snapshot);
      return std::nullopt;
    }
    try {
      backward(loss);
    } catch (const NumericError&) {
      zero_grads(params);
      assign_values<T>(params, snapshot);
      return std::nullopt;
    }
    for (auto& p : params) {
      if (!p.tensor.has_grad()) (void)p.tensor.mutable_grad();  // unreachable this step: zero gradient
    }
    opt.step(params);
    total += v;
  }
  return total / static_cast<double>(data.size());
}

}  // namespace detail

/// Fits the noise estimator on (noisy, noise-free) synthetic pairs: the
/// target is |u_K(noisy) - u_K(noise-free)| for noisy inputs and zero for
/// noise-free ones.
template <std::floating_point T>
std::vector<double> train_estimator(RuasModel<T>& m, const std::vector<Sample<T>>& data, std::size_t epochs, double lr,
                                    double momentum) {
  struct Pair {
    Tensor<T> u;
    Tensor<T> target;
  };
  std::vector<Pair> pairs;
  for (const auto& s : data) {
    if (!s.input_noise_free) continue;
    auto u_noisy = task_input(m.scene.forward(s.input).u.detach());
    auto u_quiet = task_input(m.scene.forward(*s.input_noise_free).u.detach());
    pairs.push_back({u_noisy, abs(sub(u_noisy, u_quiet))});
    pairs.push_back({u_quiet, Tensor<T>::zeros(u_quiet.shape())});
  }
  std::vector<double> curve;
  if (pairs.empty()) return curve;
  auto params = m.estimator_parameters();
  MomentumSgd<T> opt(static_cast<T>(lr), static_cast<T>(momentum), T(0));
  for (std::size_t e = 0; e < epochs; ++e) {
    double total = 0;
    for (const auto& p : pairs) {
      auto loss = detail::per_pixel(l2sq(sub(m.estimator.forward(p.u), p.target)), p.u);
      total += static_cast<double>(loss.item());
      backward(loss);
      opt.step(params);
    }
    curve.push_back(total / static_cast<double>(pairs.size()));
  }
  return curve;
}

/// Joint momentum-SGD over scene and task weights on l_t + lambda * l_s.
template <std::floating_point T>
TrainResult<T> train_end_to_end(RuasModel<T>& m, const std::vector<Sample<T>>& data, const TrainConfig& cfg,
                                Rng& rng, const EpochHook& hook = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");
  TrainResult<T> res;
  res.momentum = resolve_momentum(cfg.momentum, rng);
  if (cfg.variant == Variant::ruas_a) {
    train_estimator(m, data, cfg.estimator_epochs, cfg.lr, res.momentum);
  }
  auto params = m.scene_parameters();
  if (cfg.variant != Variant::ruas_s) append(params, m.task_parameters());
  MomentumSgd<T> opt(static_cast<T>(cfg.lr), static_cast<T>(res.momentum), static_cast<T>(cfg.weight_decay));
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto v = detail::run_epoch(params, opt, data, [&](const Sample<T>& s) {
      return detail::task_objective(m, s, cfg.variant, cfg.lambda);
    });
    if (!v) {
      res.aborted = true;
      res.abort_reason = "non-finite loss in epoch " + std::to_string(e + 1);
      break;
    }
    res.curve.push_back(*v);
    if (hook) hook("train", e + 1, *v);
  }
  return res;
}

/// Phase 1 fits the scene weights alone on l_s; phase 2 fine-tunes scene
/// and task weights on l_t.
template <std::floating_point T>
TrainResult<T> train_hierarchical(RuasModel<T>& m, const std::vector<Sample<T>>& data, const TrainConfig& cfg,
                                  Rng& rng, const EpochHook& hook = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");
  TrainResult<T> res;
  res.momentum = resolve_momentum(cfg.momentum, rng);
  const auto mom = static_cast<T>(res.momentum);
  const auto wd = static_cast<T>(cfg.weight_decay);
  const auto lr = static_cast<T>(cfg.lr);

  auto scene_params = m.scene_parameters();
  MomentumSgd<T> pre_opt(lr, mom, wd);
  for (std::size_t e = 0; e < cfg.pretrain_epochs; ++e) {
    auto v = detail::run_epoch(scene_params, pre_opt, data, [&](const Sample<T>& s) {
      return detail::per_pixel(scene_loss(m.scene.forward(s.input).t, s.input, m.scene.cfg), s.input);
    });
    if (!v) {
      res.aborted = true;
      res.abort_reason = "non-finite scene loss in pretraining epoch " + std::to_string(e + 1);
      return res;
    }
    res.pretrain_curve.push_back(*v);
    if (hook) hook("pretrain", e + 1, *v);
  }
  if (cfg.variant == Variant::ruas_s) return res;

  if (cfg.variant == Variant::ruas_a) train_estimator(m, data, cfg.estimator_epochs, cfg.lr, res.momentum);

  auto params = m.scene_parameters();
  append(params, m.task_parameters());
  MomentumSgd<T> opt(lr, mom, wd);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto v = detail::run_epoch(params, opt, data, [&](const Sample<T>& s) {
      return detail::task_objective(m, s, cfg.variant, 0.0);
    });
    if (!v) {
      res.aborted = true;
      res.abort_reason = "non-finite task loss in epoch " + std::to_string(e + 1);
      break;
    }
    res.curve.push_back(*v);
    if (hook) hook("train", e + 1, *v);
  }
  return res;
}

template <std::floating_point T>
TrainResult<T> train(RuasModel<T>& m, const std::vector<Sample<T>>& data, const TrainConfig& cfg, Rng& rng,
                     const EpochHook& hook = {}) {
  return cfg.strategy == TrainStrategy::end_to_end ? train_end_to_end(m, data, cfg, rng, hook)
                                                   : train_hierarchical(m, data, cfg, rng, hook);
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricRow {
  std::string id;
  std::optional<double> psnr_db;
  std::optional<double> ssim;
  bool removal_ran = false;
};

struct MetricTable {
  std::vector<MetricRow> rows;
  std::optional<double> mean_psnr;
  std::optional<double> mean_ssim;
};

/// Enhanced output in display range.
template <std::floating_point T>
Tensor<T> render(const Tensor<T>& x) {
  return clamp(x.detach(), T(0), T(1));
}

/// Means cover only rows that have a reference.
inline void finalize_means(MetricTable& t) {
  double sp = 0, ss = 0;
  std::size_t np = 0, ns = 0;
  for (const auto& r : t.rows) {
    if (r.psnr_db) sp += *r.psnr_db, ++np;
    if (r.ssim) ss += *r.ssim, ++ns;
  }
  t.mean_psnr = np ? std::optional<double>(sp / double(np)) : std::nullopt;
  t.mean_ssim = ns ? std::optional<double>(ss / double(ns)) : std::nullopt;
}

template <std::floating_point T>
MetricTable evaluate(const RuasModel<T>& m, const std::vector<Sample<T>>& data, Variant v) {
  MetricTable t;
  for (const auto& s : data) {
    MetricRow row{s.id, std::nullopt, std::nullopt, false};
    auto out = m.forward(s.input, v);
    row.removal_ran = out.removal_ran;
    if (s.reference) {
      auto x = render(out.x);
      row.psnr_db = psnr(x, *s.reference);
      if (x.shape().h >= 11 && x.shape().w >= 11) row.ssim = ssim(x, *s.reference);
    }
    t.rows.push_back(row);
  }
  finalize_means(t);
  return t;
}

/// Metrics of the unprocessed inputs against their references.
template <std::floating_point T>
MetricTable evaluate_inputs(const std::vector<Sample<T>>& data) {
  MetricTable t;
  for (const auto& s : data) {
    MetricRow row{s.id, std::nullopt, std::nullopt, false};
    if (s.reference) {
      row.psnr_db = psnr(s.input, *s.reference);
      if (s.input.shape().h >= 11 && s.input.shape().w >= 11) row.ssim = ssim(s.input, *s.reference);
    }
    t.rows.push_back(row);
  }
  finalize_means(t);
  return t;
}

}  // namespace ruas
