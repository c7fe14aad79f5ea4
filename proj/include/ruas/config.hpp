#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ruas/error.hpp"
#include "ruas/scene.hpp"
#include "ruas/search.hpp"
#include "ruas/search_space.hpp"
#include "ruas/task.hpp"
#include "ruas/train.hpp"

namespace ruas {

using json = nlohmann::ordered_json;

inline constexpr std::uint64_t kDefaultSeed = 42;

/// Synthetic data recipe used when no image directory is configured.
struct SyntheticSpec {
  std::size_t count = 32;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 7;
  LowLightParams lowlight{};
};

struct DataConfig {
  std::optional<std::string> input_dir;
  std::optional<std::string> reference_dir;
  std::optional<std::string> split_file;  // ids of the validation split
  SyntheticSpec synthetic{};
};

/// Discrete operators for each cell, by registry name.
struct ArchitectureConfig {
  std::vector<OpKind> scene_ops = std::vector<OpKind>(7, OpKind::c3);
  std::vector<OpKind> task_ops = std::vector<OpKind>(7, OpKind::c3);
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  SceneConfig scene{};
  TaskConfig task{};
  SearchConfig search{};
  TrainConfig train{};
  ArchitectureConfig architecture{};
  DataConfig data{};
  DataConfig search_data{};  // smaller default set for the supernet

  RunConfig() {
    search_data.synthetic.count = 8;
    search_data.synthetic.height = 32;
    search_data.synthetic.width = 32;
  }

  void validate() const {
    scene.validate();
    task.validate();
    search.validate();
    train.validate();
    for (const auto* d : {&data, &search_data}) {
      if (!d->input_dir && (d->synthetic.count == 0 || d->synthetic.height == 0 || d->synthetic.width == 0)) {
        throw ConfigError("data: synthetic set must be nonempty");
      }
    }
    if (architecture.scene_ops.size() != CellSpec::distillation(scene.width).edges.size() ||
        architecture.task_ops.size() != CellSpec::distillation(task.width).edges.size()) {
      throw ConfigError("architecture: each cell needs one operator per edge");
    }
  }
};

namespace detail {

// Reads fields from an object and rejects keys that nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~StrictObject() = default;
  StrictObject(const StrictObject&) = delete;
  StrictObject& operator=(const StrictObject&) = delete;

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }
  template <class V>
  void get(const char* key, std::optional<V>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    V v{};
    get(key, v);
    out = v;
  }
  [[nodiscard]] const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  [[nodiscard]] std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + path_ + "." + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Enum, class Parse>
void get_enum(StrictObject& o, const char* key, Enum& out, Parse parse, const char* valid) {
  std::optional<std::string> s;
  o.get(key, s);
  if (!s) return;
  auto v = parse(*s);
  if (!v) throw ConfigError(o.path(key) + ": '" + *s + "' is not one of " + valid);
  out = *v;
}

inline std::vector<OpKind> parse_ops(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array of operator names");
  std::vector<OpKind> ops;
  for (const auto& e : j) {
    if (!e.is_string()) throw ConfigError(path + ": operator names must be strings");
    auto k = parse_op(e.get<std::string>());
    if (!k) throw ConfigError(path + ": unknown operator '" + e.get<std::string>() + "'");
    ops.push_back(*k);
  }
  return ops;
}

inline json ops_json(const std::vector<OpKind>& ops) {
  json a = json::array();
  for (auto k : ops) a.push_back(std::string(to_string(k)));
  return a;
}

inline void read_data(const json& j, const std::string& path, DataConfig& d) {
  StrictObject o(j, path);
  o.get("input_dir", d.input_dir);
  o.get("reference_dir", d.reference_dir);
  o.get("split_file", d.split_file);
  if (const auto* s = o.child("synthetic")) {
    StrictObject so(*s, path + ".synthetic");
    so.get("count", d.synthetic.count);
    so.get("height", d.synthetic.height);
    so.get("width", d.synthetic.width);
    so.get("seed", d.synthetic.seed);
    so.get("gamma_min", d.synthetic.lowlight.gamma_min);
    so.get("gamma_max", d.synthetic.lowlight.gamma_max);
    so.get("s_min", d.synthetic.lowlight.s_min);
    so.get("s_max", d.synthetic.lowlight.s_max);
    so.get("noise_sigma", d.synthetic.lowlight.noise_sigma);
    so.get("grid", d.synthetic.lowlight.grid);
    so.finish();
  }
  o.finish();
}

template <class V>
json opt_json(const std::optional<V>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json data_json(const DataConfig& d) {
  const auto& s = d.synthetic;
  return {{"input_dir", opt_json(d.input_dir)},
          {"reference_dir", opt_json(d.reference_dir)},
          {"split_file", opt_json(d.split_file)},
          {"synthetic",
           {{"count", s.count},
            {"height", s.height},
            {"width", s.width},
            {"seed", s.seed},
            {"gamma_min", s.lowlight.gamma_min},
            {"gamma_max", s.lowlight.gamma_max},
            {"s_min", s.lowlight.s_min},
            {"s_max", s.lowlight.s_max},
            {"noise_sigma", s.lowlight.noise_sigma},
            {"grid", s.lowlight.grid}}}};
}

}  // namespace detail

inline json scene_json(const SceneConfig& c) {
  return {{"stages", c.stages},   {"window", c.window},       {"gamma", c.gamma},
          {"warm_start", std::string(to_string(c.warm_start))}, {"t_floor", c.t_floor},
          {"eta", c.eta},         {"rtv_sigma", c.rtv_sigma}, {"rtv_eps", c.rtv_eps},
          {"width", c.width}};
}

inline json task_json(const TaskConfig& c) { return {{"epsilon", c.epsilon}, {"mu", c.mu}, {"width", c.width}}; }

inline SceneConfig scene_from_json(const json& j, const std::string& path = "scene") {
  SceneConfig c;
  detail::StrictObject o(j, path);
  o.get("stages", c.stages);
  o.get("window", c.window);
  o.get("gamma", c.gamma);
  detail::get_enum(o, "warm_start", c.warm_start, parse_warm_start, "fixed, no_rectify, rectify");
  o.get("t_floor", c.t_floor);
  o.get("eta", c.eta);
  o.get("rtv_sigma", c.rtv_sigma);
  o.get("rtv_eps", c.rtv_eps);
  o.get("width", c.width);
  o.finish();
  return c;
}

inline TaskConfig task_from_json(const json& j, const std::string& path = "task") {
  TaskConfig c;
  detail::StrictObject o(j, path);
  o.get("epsilon", c.epsilon);
  o.get("mu", c.mu);
  o.get("width", c.width);
  o.finish();
  return c;
}

/// Effective configuration with every default filled in.
inline json to_json(const RunConfig& c) {
  const auto& s = c.search;
  const auto& t = c.train;
  return {{"seed", detail::opt_json(c.seed)},
          {"scene", scene_json(c.scene)},
          {"task", task_json(c.task)},
          {"search",
           {{"beta", s.beta},
            {"lr_omega", s.lr_omega},
            {"lr_alpha", s.lr_alpha},
            {"fd_step", s.fd_step},
            {"epochs", s.epochs},
            {"batch", s.batch},
            {"strategy", std::string(to_string(s.strategy))},
            {"inner_steps", s.inner_steps},
            {"warmup_epochs", s.warmup_epochs},
            {"weight_decay", s.weight_decay},
            {"momentum", detail::opt_json(s.momentum)}}},
          {"train",
           {{"lambda", t.lambda},
            {"strategy", std::string(to_string(t.strategy))},
            {"variant", std::string(to_string(t.variant))},
            {"epochs", t.epochs},
            {"pretrain_epochs", t.pretrain_epochs},
            {"estimator_epochs", t.estimator_epochs},
            {"lr", t.lr},
            {"momentum", detail::opt_json(t.momentum)},
            {"weight_decay", t.weight_decay}}},
          {"architecture",
           {{"scene_ops", detail::ops_json(c.architecture.scene_ops)},
            {"task_ops", detail::ops_json(c.architecture.task_ops)}}},
          {"data", detail::data_json(c.data)},
          {"search_data", detail::data_json(c.search_data)}};
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::StrictObject o(j, "config");
  o.get("seed", c.seed);
  if (const auto* s = o.child("scene")) c.scene = scene_from_json(*s);
  if (const auto* s = o.child("task")) c.task = task_from_json(*s);
  if (const auto* s = o.child("search")) {
    detail::StrictObject so(*s, "search");
    so.get("beta", c.search.beta);
    so.get("lr_omega", c.search.lr_omega);
    so.get("lr_alpha", c.search.lr_alpha);
    so.get("fd_step", c.search.fd_step);
    so.get("epochs", c.search.epochs);
    so.get("batch", c.search.batch);
    detail::get_enum(so, "strategy", c.search.strategy, parse_search_strategy, "cooperative, independent, global");
    so.get("inner_steps", c.search.inner_steps);
    so.get("warmup_epochs", c.search.warmup_epochs);
    so.get("weight_decay", c.search.weight_decay);
    so.get("momentum", c.search.momentum);
    so.finish();
  }
  if (const auto* s = o.child("train")) {
    detail::StrictObject so(*s, "train");
    so.get("lambda", c.train.lambda);
    detail::get_enum(so, "strategy", c.train.strategy, parse_train_strategy, "end_to_end, hierarchical");
    detail::get_enum(so, "variant", c.train.variant, parse_variant, "ruas_s, ruas, ruas_a");
    so.get("epochs", c.train.epochs);
    so.get("pretrain_epochs", c.train.pretrain_epochs);
    so.get("estimator_epochs", c.train.estimator_epochs);
    so.get("lr", c.train.lr);
    so.get("momentum", c.train.momentum);
    so.get("weight_decay", c.train.weight_decay);
    so.finish();
  }
  if (const auto* s = o.child("architecture")) {
    detail::StrictObject so(*s, "architecture");
    if (const auto* a = so.child("scene_ops")) c.architecture.scene_ops = detail::parse_ops(*a, "architecture.scene_ops");
    if (const auto* a = so.child("task_ops")) c.architecture.task_ops = detail::parse_ops(*a, "architecture.task_ops");
    so.finish();
  }
  if (const auto* s = o.child("data")) detail::read_data(*s, "data", c.data);
  if (const auto* s = o.child("search_data")) detail::read_data(*s, "search_data", c.search_data);
  o.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// Seed precedence: flag, then RUAS_SEED, then the config, then 42.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const RunConfig& cfg) {
  if (flag) return *flag;
  if (const char* env = std::getenv("RUAS_SEED"); env && *env) {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("RUAS_SEED is not an integer: ") + env);
    return v;
  }
  return cfg.seed.value_or(kDefaultSeed);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

/// Loads the configured images, or generates the synthetic set.
template <std::floating_point T>
std::vector<Sample<T>> load_data(const DataConfig& d) {
  if (d.input_dir) {
    auto out = load_image_dir<T>(*d.input_dir, d.reference_dir ? std::optional<std::filesystem::path>(*d.reference_dir)
                                                               : std::nullopt);
    if (out.empty()) throw ConfigError("no PNG images in " + *d.input_dir);
    return out;
  }
  const auto& s = d.synthetic;
  return make_synthetic_set<T>(s.count, s.height, s.width, s.seed, s.lowlight);
}

/// Training/validation split: the ids listed in `split_file` validate,
/// everything else trains; without a file the split alternates.
template <std::floating_point T>
SplitDataset<T> split_data(const std::vector<Sample<T>>& all, const DataConfig& d) {
  if (!d.split_file) return split_alternate(all);
  const auto ids = read_id_list(*d.split_file);
  const std::set<std::string> val(ids.begin(), ids.end());
  SplitDataset<T> s;
  for (const auto& x : all) (val.count(x.id) ? s.val : s.train).push_back(x);
  return s;
}

}  // namespace ruas
