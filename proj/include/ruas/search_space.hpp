#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/ops.hpp"
#include "ruas/tensor.hpp"

namespace ruas {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Candidate operators

enum class OpKind : std::uint8_t {
  c1, c3, c5, c7,
  rc1, rc3,
  dc3_2, dc3_6, dc3_12, dc3_18, dc5_2, dc7_2,
  rdc3_2,
  sc,
};

struct OpTraits {
  std::string_view name;
  std::size_t kernel;    // 0 for the skip connection
  std::size_t dilation;  // 1 when the operator is not dilated
  bool residual;
  bool skip;
};

constexpr OpTraits traits(OpKind k) {
  switch (k) {
    case OpKind::c1: return {"1-C", 1, 1, false, false};
    case OpKind::c3: return {"3-C", 3, 1, false, false};
    case OpKind::c5: return {"5-C", 5, 1, false, false};
    case OpKind::c7: return {"7-C", 7, 1, false, false};
    case OpKind::rc1: return {"1-RC", 1, 1, true, false};
    case OpKind::rc3: return {"3-RC", 3, 1, true, false};
    case OpKind::dc3_2: return {"3-2-DC", 3, 2, false, false};
    case OpKind::dc3_6: return {"3-6-DC", 3, 6, false, false};
    case OpKind::dc3_12: return {"3-12-DC", 3, 12, false, false};
    case OpKind::dc3_18: return {"3-18-DC", 3, 18, false, false};
    case OpKind::dc5_2: return {"5-2-DC", 5, 2, false, false};
    case OpKind::dc7_2: return {"7-2-DC", 7, 2, false, false};
    case OpKind::rdc3_2: return {"3-2-RDC", 3, 2, true, false};
    case OpKind::sc: return {"SC", 0, 1, false, true};
  }
  return {"?", 0, 1, false, false};
}

inline constexpr OpKind kAllOps[] = {
    OpKind::c1,    OpKind::c3,    OpKind::c5,     OpKind::c7,     OpKind::rc1,   OpKind::rc3,    OpKind::dc3_2,
    OpKind::dc3_6, OpKind::dc3_12, OpKind::dc3_18, OpKind::dc5_2, OpKind::dc7_2, OpKind::rdc3_2, OpKind::sc,
};

inline std::string_view to_string(OpKind k) { return traits(k).name; }

inline std::optional<OpKind> parse_op(std::string_view s) {
  for (OpKind k : kAllOps) {
    if (traits(k).name == s) return k;
  }
  return std::nullopt;
}

enum class TaskKind { scene, low_task, high_task };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::scene: return "scene";
    case TaskKind::low_task: return "low_task";
    case TaskKind::high_task: return "high_task";
  }
  return "?";
}

/// Candidate operators in table order. Scene and low-level task cells
/// share the seven shaded operators; high-level task cells use every
/// plain and dilated convolution.
inline std::vector<OpKind> op_registry(TaskKind kind) {
  switch (kind) {
    case TaskKind::scene:
    case TaskKind::low_task:
      return {OpKind::c1, OpKind::c3, OpKind::rc1, OpKind::rc3, OpKind::dc3_2, OpKind::rdc3_2, OpKind::sc};
    case TaskKind::high_task:
      return {OpKind::c1,    OpKind::c3,     OpKind::c5,     OpKind::c7,    OpKind::dc3_2,
              OpKind::dc3_6, OpKind::dc3_12, OpKind::dc3_18, OpKind::dc5_2, OpKind::dc7_2};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Convolution weights

template <std::floating_point T>
struct ConvWeights {
  Tensor<T> weight;  // (c_out, c_in, k, k)
  std::optional<Tensor<T>> bias;

  [[nodiscard]] std::size_t c_out() const { return weight.shape().n; }
  [[nodiscard]] std::size_t c_in() const { return weight.shape().c; }
  [[nodiscard]] std::size_t kernel() const { return weight.shape().h; }
};

/// Uniform init in +-1/sqrt(fan_in), zero bias.
template <std::floating_point T>
ConvWeights<T> make_conv(std::size_t c_out, std::size_t c_in, std::size_t k, bool bias, Rng& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(c_in * k * k));
  std::uniform_real_distribution<T> dist(-bound, bound);
  Shape s{c_out, c_in, k, k};
  std::vector<T> w(s.numel());
  for (T& v : w) v = dist(rng);
  ConvWeights<T> cw{Tensor<T>(s, std::move(w), true), std::nullopt};
  if (bias) cw.bias = Tensor<T>::zeros(Shape{1, c_out, 1, 1}, true);
  return cw;
}

template <std::floating_point T>
Tensor<T> apply_conv(const Tensor<T>& x, const ConvWeights<T>& cw, std::size_t dilation = 1) {
  return conv2d(x, cw.weight, cw.bias, dilation);
}

template <std::floating_point T>
void collect(ParamSet<T>& out, const std::string& prefix, const ConvWeights<T>& cw) {
  out.push_back({prefix + ".weight", cw.weight});
  if (cw.bias) out.push_back({prefix + ".bias", *cw.bias});
}

/// One convolution layer as seen by the cost model.
struct ConvFootprint {
  std::size_t c_out;
  std::size_t c_in;
  std::size_t kernel;
  bool bias;

  [[nodiscard]] std::size_t params() const { return c_out * c_in * kernel * kernel + (bias ? c_out : 0); }
  [[nodiscard]] double mult_adds(std::size_t h, std::size_t w) const {
    return static_cast<double>(c_out * c_in * kernel * kernel) * static_cast<double>(h * w);
  }
};

template <std::floating_point T>
ConvFootprint footprint(const ConvWeights<T>& cw) {
  return {cw.c_out(), cw.c_in(), cw.kernel(), cw.bias.has_value()};
}

/// Weights of one candidate on one edge; empty for the skip connection.
template <std::floating_point T>
using OpWeights = std::optional<ConvWeights<T>>;

template <std::floating_point T>
OpWeights<T> make_op_weights(OpKind kind, std::size_t width, Rng& rng) {
  const auto t = traits(kind);
  if (t.skip) return std::nullopt;
  return make_conv<T>(width, width, t.kernel, true, rng);
}

/// SC: x. m-C / m-d-DC: ReLU(conv). Residual kinds add x afterwards.
template <std::floating_point T>
Tensor<T> apply_op(OpKind kind, const Tensor<T>& x, const OpWeights<T>& weights) {
  const auto t = traits(kind);
  if (t.skip) {
    if (weights) throw ConfigError("apply_op: skip connection carries no weights");
    return x;
  }
  if (!weights) throw ConfigError("apply_op: " + std::string(t.name) + " needs convolution weights");
  if (weights->kernel() != t.kernel) {
    throw ConfigError("apply_op: " + std::string(t.name) + " expects a " + std::to_string(t.kernel) +
                      "x" + std::to_string(t.kernel) + " kernel, got " + std::to_string(weights->kernel()));
  }
  if (t.residual && weights->c_in() != weights->c_out()) {
    throw ConfigError("apply_op: residual operator needs c_in == c_out");
  }
  auto y = relu(apply_conv(x, *weights, t.dilation));
  return t.residual ? add(y, x) : y;
}

/// Softmax-weighted sum of every candidate's output.
template <std::floating_point T>
Tensor<T> mixed_forward(const Tensor<T>& x, const Tensor<T>& edge_logits, const std::vector<OpKind>& candidates,
                        const std::vector<OpWeights<T>>& weights) {
  if (edge_logits.numel() != candidates.size() || weights.size() != candidates.size()) {
    throw ShapeError("mixed_forward: logits/candidates/weights length mismatch");
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) outs.push_back(apply_op(candidates[i], x, weights[i]));
  return weighted_sum(outs, softmax(edge_logits));
}

// ---------------------------------------------------------------------------
// Cell topology

enum class EdgeRole { chain, distill };

struct EdgeSpec {
  std::size_t src;
  std::size_t dst;
  EdgeRole role;
};

/// Five-node distillation DAG: node i feeds node i+1 and the output node.
struct CellSpec {
  std::size_t node_count = 5;
  std::vector<EdgeSpec> edges;
  std::size_t width = 3;

  static CellSpec distillation(std::size_t width) {
    CellSpec s;
    s.width = width;
    for (std::size_t i = 0; i < 4; ++i) s.edges.push_back({i, i + 1, EdgeRole::chain});
    for (std::size_t i = 0; i < 3; ++i) s.edges.push_back({i, 4, EdgeRole::distill});
    return s;
  }

  void validate() const {
    if (node_count != 5) throw ConfigError("cell: node_count must be 5");
    if (width == 0) throw ConfigError("cell: width must be positive");
    for (const auto& e : edges) {
      if (e.src >= e.dst || e.dst >= node_count) throw ConfigError("cell: edges must point forward");
    }
  }

  // Edges whose results are concatenated into the output node, in fusion order.
  [[nodiscard]] std::vector<std::size_t> output_edges() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < edges.size(); ++i)
      if (edges[i].role == EdgeRole::distill) ids.push_back(i);
    for (std::size_t i = 0; i < edges.size(); ++i)
      if (edges[i].dst == node_count - 1 && edges[i].role == EdgeRole::chain) ids.push_back(i);
    return ids;
  }
};

// ---------------------------------------------------------------------------
// Architecture parameters

/// Per-edge logit vectors over a shared candidate list.
template <std::floating_point T>
struct ArchParams {
  TaskKind task_kind = TaskKind::scene;
  std::vector<OpKind> candidates;
  std::vector<Tensor<T>> logits;  // one vector per searchable edge
  std::string prefix = "alpha";

  static ArchParams init(TaskKind kind, std::vector<OpKind> candidates, std::size_t edges, std::string prefix,
                         Rng& rng, T noise = T(1e-3)) {
    ArchParams a;
    a.task_kind = kind;
    a.candidates = std::move(candidates);
    a.prefix = std::move(prefix);
    std::normal_distribution<T> dist(T(0), T(1));
    for (std::size_t e = 0; e < edges; ++e) {
      std::vector<T> v(a.candidates.size());
      for (T& x : v) x = noise * dist(rng);
      a.logits.push_back(Tensor<T>::vector(std::move(v), true));
    }
    return a;
  }

  [[nodiscard]] ParamSet<T> parameters() const {
    ParamSet<T> ps;
    for (std::size_t e = 0; e < logits.size(); ++e) ps.push_back({prefix + ".edge" + std::to_string(e), logits[e]});
    return ps;
  }

  [[nodiscard]] std::vector<T> weights(std::size_t edge) const {
    auto s = softmax(logits.at(edge).detach());
    return {s.data().begin(), s.data().end()};
  }

  [[nodiscard]] bool finite() const {
    for (const auto& l : logits)
      for (T v : l.data())
        if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Per-edge argmax; ties go to the lowest registry index.
template <std::floating_point T>
std::vector<OpKind> discretize(const ArchParams<T>& alpha) {
  std::vector<OpKind> out;
  for (const auto& l : alpha.logits) {
    auto d = l.data();
    if (d.size() != alpha.candidates.size()) throw ShapeError("discretize: logit length mismatch");
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i) {
      if (!std::isfinite(d[i])) throw NumericError("discretize: non-finite logit");
      if (d[i] > d[best]) best = i;
    }
    out.push_back(alpha.candidates[best]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cell

/// Distillation cell. Each edge holds one or more candidate operators with
/// their own weights; edges with several candidates are mixed through the
/// architecture logits, single-candidate edges run their operator directly.
/// The output node fuses the distill results and the last chain result with
/// a trained (never searched) 1x1 convolution.
template <std::floating_point T>
class Cell {
 public:
  struct Edge {
    std::vector<OpKind> candidates;
    std::vector<OpWeights<T>> weights;
  };

  Cell() = default;

  static Cell supernet(const CellSpec& spec, const std::vector<OpKind>& candidates, std::string name, Rng& rng) {
    std::vector<std::vector<OpKind>> per_edge(spec.edges.size(), candidates);
    return Cell(spec, per_edge, std::move(name), rng);
  }

  static Cell discrete(const CellSpec& spec, const std::vector<OpKind>& choice, std::string name, Rng& rng) {
    if (choice.size() != spec.edges.size()) throw ConfigError("cell: one operator per edge required");
    std::vector<std::vector<OpKind>> per_edge;
    for (OpKind k : choice) per_edge.push_back({k});
    return Cell(spec, per_edge, std::move(name), rng);
  }

  [[nodiscard]] const CellSpec& spec() const { return spec_; }
  [[nodiscard]] const std::vector<Edge>& edges() const { return edges_; }
  [[nodiscard]] std::vector<Edge>& edges() { return edges_; }
  [[nodiscard]] const ConvWeights<T>& fusion() const { return fusion_; }
  [[nodiscard]] ConvWeights<T>& fusion() { return fusion_; }
  [[nodiscard]] const std::string& name() const { return name_; }

  [[nodiscard]] bool is_discrete() const {
    return std::all_of(edges_.begin(), edges_.end(), [](const Edge& e) { return e.candidates.size() == 1; });
  }
  [[nodiscard]] std::vector<OpKind> choice() const {
    std::vector<OpKind> out;
    for (const auto& e : edges_) {
      if (e.candidates.size() != 1) throw ContractError("cell: choice() on a mixed cell");
      out.push_back(e.candidates[0]);
    }
    return out;
  }

  Tensor<T> forward(const Tensor<T>& x, const ArchParams<T>* alpha = nullptr) const {
    if (x.shape().c != spec_.width) {
      throw ShapeError("cell '" + name_ + "': input has " + std::to_string(x.shape().c) + " channels, width is " +
                       std::to_string(spec_.width));
    }
    std::vector<std::optional<Tensor<T>>> nodes(spec_.node_count);
    std::vector<std::optional<Tensor<T>>> results(spec_.edges.size());
    nodes[0] = x;
    // Chain edges are ordered by source, so each node is complete before it is read.
    for (std::size_t i = 0; i < spec_.edges.size(); ++i) {
      const auto& e = spec_.edges[i];
      if (!nodes[e.src]) throw ContractError("cell: edge reads an unfinished node");
      results[i] = edge_forward(i, *nodes[e.src], alpha);
      if (e.dst != spec_.node_count - 1) nodes[e.dst] = results[i];
    }
    std::vector<Tensor<T>> parts;
    for (std::size_t i : spec_.output_edges()) parts.push_back(*results[i]);
    return apply_conv(concat_channels(parts), fusion_);
  }

  [[nodiscard]] ParamSet<T> parameters() const {
    ParamSet<T> ps;
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      for (std::size_t k = 0; k < edges_[i].candidates.size(); ++k) {
        if (edges_[i].weights[k]) {
          collect(ps, name_ + ".edge" + std::to_string(i) + "." + std::string(to_string(edges_[i].candidates[k])),
                  *edges_[i].weights[k]);
        }
      }
    }
    collect(ps, name_ + ".fusion", fusion_);
    return ps;
  }

  [[nodiscard]] std::vector<ConvFootprint> convs() const {
    std::vector<ConvFootprint> out;
    for (const auto& e : edges_)
      for (const auto& w : e.weights)
        if (w) out.push_back(footprint(*w));
    out.push_back(footprint(fusion_));
    return out;
  }

  /// Parameters of the searchable operators alone (fusion excluded).
  [[nodiscard]] std::size_t op_param_count() const {
    std::size_t n = 0;
    for (const auto& e : edges_)
      for (const auto& w : e.weights)
        if (w) n += footprint(*w).params();
    return n;
  }

  /// Fusion weights that average the four concatenated copies of each channel.
  void set_averaging_fusion() {
    const std::size_t W = spec_.width;
    const std::size_t parts = fusion_.c_in() / W;
    auto w = fusion_.weight.mutable_data();
    std::fill(w.begin(), w.end(), T(0));
    for (std::size_t co = 0; co < W; ++co)
      for (std::size_t p = 0; p < parts; ++p) w[co * fusion_.c_in() + p * W + co] = T(1) / static_cast<T>(parts);
    if (fusion_.bias) {
      auto b = fusion_.bias->mutable_data();
      std::fill(b.begin(), b.end(), T(0));
    }
  }

 private:
  Cell(const CellSpec& spec, const std::vector<std::vector<OpKind>>& per_edge, std::string name, Rng& rng)
      : spec_(spec), name_(std::move(name)) {
    spec_.validate();
    for (const auto& cands : per_edge) {
      if (cands.empty()) throw ConfigError("cell: edge without candidates");
      Edge e;
      e.candidates = cands;
      for (OpKind k : cands) e.weights.push_back(make_op_weights<T>(k, spec_.width, rng));
      edges_.push_back(std::move(e));
    }
    fusion_ = make_conv<T>(spec_.width, spec_.width * spec_.output_edges().size(), 1, true, rng);
  }

  Tensor<T> edge_forward(std::size_t i, const Tensor<T>& x, const ArchParams<T>* alpha) const {
    const auto& e = edges_[i];
    if (e.candidates.size() == 1) return apply_op(e.candidates[0], x, e.weights[0]);
    if (!alpha) throw ContractError("cell '" + name_ + "': mixed edges need architecture logits");
    if (alpha->logits.size() != edges_.size()) throw ShapeError("cell: one logit vector per edge required");
    return mixed_forward(x, alpha->logits[i], e.candidates, e.weights);
  }

  CellSpec spec_;
  std::string name_;
  std::vector<Edge> edges_;
  ConvWeights<T> fusion_;
};

template <std::floating_point T>
Tensor<T> cell_forward(const Tensor<T>& x, const Cell<T>& cell, const ArchParams<T>* alpha = nullptr) {
  return cell.forward(x, alpha);
}

/// Every edge fixed to `kind`; no search involved.
template <std::floating_point T>
Cell<T> uniform_cell_baseline(OpKind kind, std::size_t width, std::string name, Rng& rng) {
  const auto reg = op_registry(TaskKind::low_task);
  if (std::find(reg.begin(), reg.end(), kind) == reg.end()) {
    throw ConfigError("uniform_cell_baseline: " + std::string(to_string(kind)) + " is not a low-level operator");
  }
  const auto spec = CellSpec::distillation(width);
  return Cell<T>::discrete(spec, std::vector<OpKind>(spec.edges.size(), kind), std::move(name), rng);
}

struct Cost {
  std::size_t params = 0;
  double mult_adds = 0;  // at the requested resolution
};

/// `repeats` counts how many times each layer runs per forward pass.
inline Cost count_cost(const std::vector<ConvFootprint>& convs, std::size_t h, std::size_t w, std::size_t repeats = 1) {
  Cost c;
  for (const auto& f : convs) {
    c.params += f.params();
    c.mult_adds += static_cast<double>(repeats) * f.mult_adds(h, w);
  }
  return c;
}

/// DOT-style edge listing: `edge i->j op=<chosen> w=<softmax weights>`.
template <std::floating_point T>
std::string arch_dump(const Cell<T>& cell, const ArchParams<T>* alpha) {
  std::ostringstream os;
  os << "# cell " << cell.name() << " width=" << cell.spec().width << "\n";
  std::vector<OpKind> choice;
  if (alpha) choice = discretize(*alpha);
  os << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < cell.spec().edges.size(); ++i) {
    const auto& e = cell.spec().edges[i];
    os << "edge " << e.src << "->" << e.dst << " op=";
    if (alpha) {
      os << to_string(choice[i]) << " w=";
      auto w = alpha->weights(i);
      for (std::size_t k = 0; k < w.size(); ++k) os << (k ? "," : "") << w[k];
    } else {
      os << to_string(cell.edges()[i].candidates.front()) << " w=1.0000";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace ruas
