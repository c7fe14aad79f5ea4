#pragma once

#include <concepts>
#include <optional>
#include <vector>

#include "ruas/scene.hpp"
#include "ruas/search_space.hpp"
#include "ruas/task.hpp"
#include "ruas/tensor.hpp"

namespace ruas {

template <std::floating_point T>
struct ModelOutput {
  SceneResult<T> scene;
  std::optional<Tensor<T>> theta;  // set whenever the estimator ran
  Tensor<T> x;                     // enhanced image (u_K for ruas_s)
  bool removal_ran = false;
};

/// Scene module followed by the low-level task module.
template <std::floating_point T>
struct RuasModel {
  SceneModule<T> scene;
  NoiseEstimator<T> estimator;
  Denoiser<T> denoiser;
  TaskConfig task_cfg;

  /// Runs one variant. ruas feeds a zero noise map to the removal network;
  /// ruas_a estimates theta and skips removal when the gate fires.
  ModelOutput<T> forward(const Tensor<T>& y, Variant variant) const {
    ModelOutput<T> out{scene.forward(y), std::nullopt, Tensor<T>(), false};
    const auto u = task_input(out.scene.u);
    switch (variant) {
      case Variant::ruas_s:
        out.x = u;
        break;
      case Variant::ruas:
        out.x = denoiser.forward(u, Tensor<T>::zeros(u.shape()));
        out.removal_ran = true;
        break;
      case Variant::ruas_a: {
        auto theta = estimator.forward(u.detach()).detach();
        out.theta = theta;
        if (noise_gate(theta, task_cfg.epsilon)) {
          out.x = u;
        } else {
          out.x = denoiser.forward(u, theta);
          out.removal_ran = true;
        }
        break;
      }
    }
    return out;
  }

  [[nodiscard]] ParamSet<T> scene_parameters() const { return scene.parameters(); }
  [[nodiscard]] ParamSet<T> task_parameters() const { return denoiser.parameters(); }
  [[nodiscard]] ParamSet<T> estimator_parameters() const { return estimator.parameters(); }
  [[nodiscard]] ParamSet<T> all_parameters() const {
    auto ps = scene_parameters();
    append(ps, task_parameters());
    append(ps, estimator_parameters());
    return ps;
  }

  /// Parameters and per-forward mult-adds of the layers a variant executes.
  [[nodiscard]] Cost cost(Variant v, std::size_t h, std::size_t w) const {
    Cost c = scene.cost(h, w);
    auto add_cost = [&](const std::vector<ConvFootprint>& convs) {
      Cost k = count_cost(convs, h, w);
      c.params += k.params;
      c.mult_adds += k.mult_adds;
    };
    if (v != Variant::ruas_s) add_cost(denoiser.convs());
    if (v == Variant::ruas_a) add_cost(estimator.convs());
    return c;
  }
};

template <std::floating_point T>
RuasModel<T> make_model(const SceneConfig& scene_cfg, const TaskConfig& task_cfg, const std::vector<OpKind>& scene_ops,
                        const std::vector<OpKind>& task_ops, Rng& rng) {
  task_cfg.validate();
  RuasModel<T> m;
  m.task_cfg = task_cfg;
  m.scene = make_scene_module<T>(scene_cfg, scene_ops, rng);
  m.estimator = NoiseEstimator<T>::make(rng);
  auto cell = Cell<T>::discrete(CellSpec::distillation(task_cfg.width), task_ops, "tm.remove.cell", rng);
  m.denoiser = make_denoiser<T>(task_cfg, std::move(cell), rng);
  return m;
}

/// Mixed cells on every edge with fresh logits alpha_s / alpha_t.
template <std::floating_point T>
RuasModel<T> make_supernet(const SceneConfig& scene_cfg, const TaskConfig& task_cfg,
                           const std::vector<OpKind>& scene_candidates, const std::vector<OpKind>& task_candidates,
                           Rng& rng) {
  task_cfg.validate();
  RuasModel<T> m;
  m.task_cfg = task_cfg;
  m.scene = make_scene_supernet<T>(scene_cfg, scene_candidates, rng);
  m.estimator = NoiseEstimator<T>::make(rng);
  auto spec = CellSpec::distillation(task_cfg.width);
  auto cell = Cell<T>::supernet(spec, task_candidates, "tm.remove.cell", rng);
  m.denoiser = make_denoiser<T>(task_cfg, std::move(cell), rng);
  m.denoiser.alpha = ArchParams<T>::init(TaskKind::low_task, task_candidates, spec.edges.size(), "alpha_t", rng);
  return m;
}

}  // namespace ruas
