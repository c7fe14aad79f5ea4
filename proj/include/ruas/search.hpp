#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/io.hpp"
#include "ruas/model.hpp"
#include "ruas/optim.hpp"
#include "ruas/train.hpp"

namespace ruas {

enum class SearchStrategy { cooperative, independent, global };

inline std::string_view to_string(SearchStrategy s) {
  switch (s) {
    case SearchStrategy::cooperative: return "cooperative";
    case SearchStrategy::independent: return "independent";
    case SearchStrategy::global: return "global";
  }
  return "?";
}

inline std::optional<SearchStrategy> parse_search_strategy(std::string_view s) {
  if (s == "cooperative") return SearchStrategy::cooperative;
  if (s == "independent") return SearchStrategy::independent;
  if (s == "global") return SearchStrategy::global;
  return std::nullopt;
}

struct SearchConfig {
  double beta = 1.0;
  double lr_omega = 3e-4;
  double lr_alpha = 3e-4;
  double fd_step = 1e-2;  // divided by the norm of the validation gradient
  std::size_t epochs = 20;
  std::size_t batch = 1;
  SearchStrategy strategy = SearchStrategy::cooperative;
  std::size_t inner_steps = 1;
  std::size_t warmup_epochs = 3;  // weight-only epochs before alpha moves
  double weight_decay = 1e-3;     // weights only; logits are not decayed
  std::optional<double> momentum;

  void validate() const {
    if (!(beta >= 0.0)) throw ConfigError("search: beta must be nonnegative");
    if (!(lr_omega > 0.0)) throw ConfigError("search: lr_omega must be positive");
    if (!(lr_alpha > 0.0)) throw ConfigError("search: lr_alpha must be positive");
    if (!(fd_step > 0.0)) throw ConfigError("search: fd_step must be positive");
    if (batch == 0) throw ConfigError("search: batch must be positive");
    if (inner_steps == 0) throw ConfigError("search: inner_steps must be positive");
    if (momentum && !(*momentum >= 0.0 && *momentum < 1.0)) throw ConfigError("search: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("search: weight_decay must be nonnegative");
  }
};

template <std::floating_point T>
struct SplitDataset {
  std::vector<Sample<T>> train;
  std::vector<Sample<T>> val;

  void validate() const {
    if (train.empty() || val.empty()) throw ConfigError("search: train and validation splits must be nonempty");
    for (const auto& a : train)
      for (const auto& b : val)
        if (a.id == b.id) throw ConfigError("search: sample '" + a.id + "' is in both splits");
  }
};

/// Alternating split: even positions train, odd positions validate.
template <std::floating_point T>
SplitDataset<T> split_alternate(const std::vector<Sample<T>>& data) {
  SplitDataset<T> s;
  for (std::size_t i = 0; i < data.size(); ++i) (i % 2 == 0 ? s.train : s.val).push_back(data[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Losses over a batch

template <std::floating_point T>
using Batch = std::vector<const Sample<T>*>;

/// Mean per-pixel scene loss of the batch.
template <std::floating_point T>
Tensor<T> scene_batch_loss(const RuasModel<T>& m, const Batch<T>& batch) {
  std::optional<Tensor<T>> total;
  for (const auto* s : batch) {
    auto l = detail::per_pixel(scene_loss(m.scene.forward(s->input).t, s->input, m.scene.cfg), s->input);
    total = total ? add(*total, l) : l;
  }
  return scale(*total, T(1) / static_cast<T>(batch.size()));
}

/// Mean per-pixel task loss with a zero noise map. With `detach_scene` the
/// scene output is a constant, so only the task module receives gradient.
template <std::floating_point T>
Tensor<T> task_batch_loss(const RuasModel<T>& m, const Batch<T>& batch, bool detach_scene) {
  std::optional<Tensor<T>> total;
  for (const auto* s : batch) {
    auto u = task_input(m.scene.forward(s->input).u);
    if (detach_scene) u = u.detach();
    const auto theta = Tensor<T>::zeros(u.shape());
    auto l = detail::per_pixel(task_loss(m.denoiser.forward(u, theta), u, theta, m.task_cfg.mu), s->input);
    total = total ? add(*total, l) : l;
  }
  return scale(*total, T(1) / static_cast<T>(batch.size()));
}

/// Combined validation loss l_s + beta * l_t, the task term fed by the
/// current scene output.
template <std::floating_point T>
Tensor<T> val_loss(const RuasModel<T>& m, const Batch<T>& batch, double beta) {
  auto ls = scene_batch_loss(m, batch);
  if (beta == 0.0) return ls;
  return add(ls, scale(task_batch_loss(m, batch, false), static_cast<T>(beta)));
}

// ---------------------------------------------------------------------------
// One-step hypergradient

namespace detail {

template <std::floating_point T>
std::vector<T> grads_of(const Tensor<T>& loss, ParamSet<T>& wrt, ParamSet<T>& clear, std::string_view what) {
  zero_grads(clear);
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericError("hypergradient: non-finite " + std::string(what));
  }
  try {
    backward(loss);
  } catch (const NumericError& e) {
    zero_grads(clear);
    throw NumericError("hypergradient: " + std::string(what) + ": " + e.what());
  }
  auto g = flatten_grads(wrt);
  zero_grads(clear);
  return g;
}

template <std::floating_point T>
T norm2(const std::vector<T>& v) {
  T s = 0;
  for (T x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

/// Gradient over `alpha` of L_val(alpha, w - lr * grad_w L_tr(w, alpha)).
/// The second-order term is the central difference of grad_alpha L_tr at
/// w +/- eps * g, g = grad_w' L_val, eps = fd_step / |g|. `omega` is
/// restored before returning. Every gradient held by `clear` is zeroed
/// before and after each backward pass.
template <std::floating_point T>
std::vector<T> hypergrad_onestep(ParamSet<T>& alpha, ParamSet<T>& omega, const std::function<Tensor<T>()>& loss_val,
                                 const std::function<Tensor<T>()>& loss_tr, double lr_omega, double fd_step,
                                 ParamSet<T> clear = {}) {
  append(clear, alpha);
  append(clear, omega);
  const auto w0 = flatten_values(omega);
  if (lr_omega == 0.0) return detail::grads_of(loss_val(), alpha, clear, "validation loss");

  const auto g_tr = detail::grads_of(loss_tr(), omega, clear, "training loss");
  std::vector<T> w(w0.size());
  const T lr = static_cast<T>(lr_omega);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w0[i] - lr * g_tr[i];
  assign_values<T>(omega, w);

  zero_grads(clear);
  auto lv = loss_val();
  if (!std::isfinite(static_cast<double>(lv.item()))) {
    assign_values<T>(omega, w0);
    throw NumericError("hypergradient: non-finite validation loss after the virtual step");
  }
  backward(lv);
  auto d_alpha = flatten_grads(alpha);
  const auto d_omega = flatten_grads(omega);
  zero_grads(clear);

  const T gn = detail::norm2(d_omega);
  if (gn == T(0)) {
    assign_values<T>(omega, w0);
    return d_alpha;
  }
  const T eps = static_cast<T>(fd_step) / gn;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w0[i] + eps * d_omega[i];
  assign_values<T>(omega, w);
  const auto g_plus = detail::grads_of(loss_tr(), alpha, clear, "training loss at w+");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w0[i] - eps * d_omega[i];
  assign_values<T>(omega, w);
  const auto g_minus = detail::grads_of(loss_tr(), alpha, clear, "training loss at w-");
  assign_values<T>(omega, w0);

  for (std::size_t i = 0; i < d_alpha.size(); ++i) {
    d_alpha[i] -= lr * (g_plus[i] - g_minus[i]) / (T(2) * eps);
    if (!std::isfinite(d_alpha[i])) throw NumericError("hypergradient: non-finite component");
  }
  return d_alpha;
}

// ---------------------------------------------------------------------------
// Search loop

struct SearchHistoryRow {
  std::size_t epoch = 0;  // 0 is the state before any update
  double scene_val = 0;
  double task_val = 0;
  double combined = 0;
};

/// One momentum step along a given gradient. If the momentum direction is
/// not a descent direction for `grad`, the velocity restarts from `grad`.
/// Returns <grad, v>, which is then positive unless `grad` is zero.
template <std::floating_point T>
double descent_step(ParamSet<T>& params, const std::vector<T>& grad, MomentumSgd<T>& opt) {
  std::size_t off = 0;
  double dot = 0;
  const T mom = opt.momentum(), wd = opt.weight_decay();
  for (auto& p : params) {
    const auto& v = opt.velocity(p.name);
    const auto x = p.tensor.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T vi = v.empty() ? T(0) : v[i];
      dot += static_cast<double>(grad[off + i]) * static_cast<double>(mom * vi + grad[off + i] + wd * x[i]);
    }
    off += x.size();
  }
  if (dot <= 0.0) {
    for (auto& p : params) opt.reset_velocity(p.name);
    dot = 0;
    off = 0;
    for (auto& p : params) {
      const auto x = p.tensor.data();
      for (std::size_t i = 0; i < x.size(); ++i)
        dot += static_cast<double>(grad[off + i]) * static_cast<double>(grad[off + i] + wd * x[i]);
      off += x.size();
    }
  }
  off = 0;
  for (auto& p : params) {
    auto g = p.tensor.mutable_grad();
    std::copy(grad.begin() + static_cast<std::ptrdiff_t>(off), grad.begin() + static_cast<std::ptrdiff_t>(off + g.size()),
              g.begin());
    off += g.size();
  }
  opt.step(params);
  return dot;
}

template <std::floating_point T>
struct SearchResult {
  ArchParams<T> alpha_s;
  ArchParams<T> alpha_t;
  std::vector<SearchHistoryRow> history;
  std::vector<double> directional;  // <grad, velocity> of every logit step
  double momentum = 0;
  SearchStrategy strategy = SearchStrategy::cooperative;
};

/// Mean validation losses over the whole split.
template <std::floating_point T>
SearchHistoryRow evaluate_val(const RuasModel<T>& m, const std::vector<Sample<T>>& val, double beta,
                              std::size_t epoch) {
  SearchHistoryRow row;
  row.epoch = epoch;
  for (const auto& s : val) {
    const Batch<T> b{&s};
    row.scene_val += static_cast<double>(scene_batch_loss(m, b).item());
    row.task_val += static_cast<double>(task_batch_loss(m, b, true).item());
  }
  row.scene_val /= static_cast<double>(val.size());
  row.task_val /= static_cast<double>(val.size());
  row.combined = row.scene_val + beta * row.task_val;
  return row;
}

namespace detail {

template <std::floating_point T>
std::vector<Batch<T>> batches(const std::vector<Sample<T>>& data, std::size_t size) {
  std::vector<Batch<T>> out;
  for (std::size_t i = 0; i < data.size(); i += size) {
    Batch<T> b;
    for (std::size_t j = i; j < std::min(data.size(), i + size); ++j) b.push_back(&data[j]);
    out.push_back(std::move(b));
  }
  return out;
}

// Weight step on a loss; the returned value is the loss before the step.
template <std::floating_point T>
double weight_step(const Tensor<T>& loss, ParamSet<T>& params, ParamSet<T>& clear, MomentumSgd<T>& opt) {
  zero_grads(clear);
  const double v = static_cast<double>(loss.item());
  if (!std::isfinite(v)) throw NumericError("search: non-finite training loss");
  backward(loss);
  for (auto& p : params) (void)p.tensor.mutable_grad();
  opt.step(params);
  zero_grads(clear);
  return v;
}

template <std::floating_point T>
void add_scaled(std::vector<T>& a, const std::vector<T>& b, T s) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

template <std::floating_point T>
void check_alpha(const RuasModel<T>& m) {
  if (!m.scene.alpha->finite() || !m.denoiser.alpha->finite()) throw NumericError("search: non-finite logits");
}

}  // namespace detail

/// Called with each history row as it is recorded.
using SearchHook = std::function<void(const SearchHistoryRow&)>;

/// Searches the supernet `m` in place with the strategy in `cfg`.
template <std::floating_point T>
SearchResult<T> search(RuasModel<T>& m, const SplitDataset<T>& data, const SearchConfig& cfg, Rng& rng,
                       const SearchHook& hook = {}) {
  cfg.validate();
  data.validate();
  if (!m.scene.alpha || !m.denoiser.alpha) throw ConfigError("search: model is not a supernet");

  SearchResult<T> res;
  res.strategy = cfg.strategy;
  res.momentum = resolve_momentum(cfg.momentum, rng);
  const T mom = static_cast<T>(res.momentum);
  MomentumSgd<T> opt_ws(static_cast<T>(cfg.lr_omega), mom, static_cast<T>(cfg.weight_decay));
  MomentumSgd<T> opt_wt(static_cast<T>(cfg.lr_omega), mom, static_cast<T>(cfg.weight_decay));
  MomentumSgd<T> opt_as(static_cast<T>(cfg.lr_alpha), mom);
  MomentumSgd<T> opt_at(static_cast<T>(cfg.lr_alpha), mom);

  auto ws = m.scene_parameters();
  auto wt = m.task_parameters();
  auto as = m.scene.alpha->parameters();
  auto at = m.denoiser.alpha->parameters();
  ParamSet<T> everything = ws;
  append(everything, wt);
  append(everything, as);
  append(everything, at);

  const auto tr = detail::batches(data.train, cfg.batch);
  const auto va = detail::batches(data.val, cfg.batch);
  const double beta = cfg.beta;
  const double lr_w = cfg.lr_omega;

  auto record = [&](std::size_t epoch) {
    res.history.push_back(evaluate_val(m, data.val, beta, epoch));
    if (hook) hook(res.history.back());
  };

  // Scene half of an alternation (steps 4-7): logits, then weights.
  auto scene_step = [&](const Batch<T>& bt, const Batch<T>& bv, bool move_alpha, double coupling) {
    for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
      if (move_alpha) {
        auto h = hypergrad_onestep<T>(
            as, ws, [&] { return scene_batch_loss(m, bv); }, [&] { return scene_batch_loss(m, bt); }, lr_w,
            cfg.fd_step, everything);
        if (coupling > 0.0) {
          auto c = detail::grads_of(task_batch_loss(m, bv, false), as, everything, "coupling term");
          detail::add_scaled(h, c, static_cast<T>(coupling));
        }
        res.directional.push_back(descent_step(as, h, opt_as));
      }
      detail::weight_step(scene_batch_loss(m, bt), ws, everything, opt_ws);
    }
  };
  // Task half (steps 9-12) with the scene held fixed.
  auto task_step = [&](const Batch<T>& bt, const Batch<T>& bv, bool move_alpha) {
    for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
      if (move_alpha) {
        auto h = hypergrad_onestep<T>(
            at, wt, [&] { return task_batch_loss(m, bv, true); }, [&] { return task_batch_loss(m, bt, true); },
            lr_w, cfg.fd_step, everything);
        res.directional.push_back(descent_step(at, h, opt_at));
      }
      detail::weight_step(task_batch_loss(m, bt, true), wt, everything, opt_wt);
    }
  };

  record(0);
  switch (cfg.strategy) {
    case SearchStrategy::cooperative: {
      for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const bool move = e >= cfg.warmup_epochs;
        for (std::size_t i = 0; i < tr.size(); ++i) {
          const auto& bv = va[i % va.size()];
          scene_step(tr[i], bv, move, beta);
          task_step(tr[i], bv, move);
        }
        detail::check_alpha(m);
        record(e + 1);
      }
      break;
    }
    case SearchStrategy::independent: {
      // Scene first with beta = 0, then the task module on the frozen scene.
      for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const bool move = e >= cfg.warmup_epochs;
        for (std::size_t i = 0; i < tr.size(); ++i) scene_step(tr[i], va[i % va.size()], move, 0.0);
        detail::check_alpha(m);
        record(e + 1);
      }
      for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const bool move = e >= cfg.warmup_epochs;
        for (std::size_t i = 0; i < tr.size(); ++i) task_step(tr[i], va[i % va.size()], move);
        detail::check_alpha(m);
        record(cfg.epochs + e + 1);
      }
      break;
    }
    case SearchStrategy::global: {
      // One architecture over the concatenated supernet.
      ParamSet<T> a = as, w = ws;
      append(a, at);
      append(w, wt);
      MomentumSgd<T> opt_a(static_cast<T>(cfg.lr_alpha), mom);
      MomentumSgd<T> opt_w(static_cast<T>(cfg.lr_omega), mom, static_cast<T>(cfg.weight_decay));
      auto joint = [&](const Batch<T>& b) { return val_loss(m, b, beta); };
      for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const bool move = e >= cfg.warmup_epochs;
        for (std::size_t i = 0; i < tr.size(); ++i) {
          const auto& bt = tr[i];
          const auto& bv = va[i % va.size()];
          for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
            if (move) {
              auto h = hypergrad_onestep<T>(
                  a, w, [&] { return joint(bv); }, [&] { return joint(bt); }, lr_w, cfg.fd_step, everything);
              res.directional.push_back(descent_step(a, h, opt_a));
            }
            detail::weight_step(joint(bt), w, everything, opt_w);
          }
        }
        detail::check_alpha(m);
        record(e + 1);
      }
      break;
    }
  }
  res.alpha_s = *m.scene.alpha;
  res.alpha_t = *m.denoiser.alpha;
  return res;
}

}  // namespace ruas
