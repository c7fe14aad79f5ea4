#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ruas/config.hpp"
#include "ruas/error.hpp"
#include "ruas/model.hpp"

namespace ruas {

// File layout: 8-byte magic, uint32 version, uint64 header size, the JSON
// header, then every parameter as little-endian float64 in header order.
inline constexpr std::array<char, 8> kCheckpointMagic{'R', 'U', 'A', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to rebuild a model before its weights are loaded.
inline json architecture_json(const SceneConfig& scene, const TaskConfig& task, const std::vector<OpKind>& scene_ops,
                              const std::vector<OpKind>& task_ops) {
  return {{"scene", scene_json(scene)},
          {"task", task_json(task)},
          {"scene_ops", detail::ops_json(scene_ops)},
          {"task_ops", detail::ops_json(task_ops)}};
}

inline std::string architecture_hash(const json& arch) { return hex64(fnv1a(arch.dump())); }

template <std::floating_point T>
struct Checkpoint {
  RuasModel<T> model;
  json architecture;
  std::string hash;
};

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const RuasModel<T>& m) {
  if (m.scene.alpha || m.denoiser.alpha) throw ContractError("checkpoint: discretize the supernet before saving");
  const auto arch = architecture_json(m.scene.cfg, m.task_cfg, m.scene.cell.choice(), m.denoiser.cell.choice());
  const auto params = m.all_parameters();
  json header = {{"architecture", arch}, {"hash", architecture_hash(arch)}, {"params", json::array()}};
  std::size_t offset = 0;
  for (const auto& p : params) {
    const auto s = p.tensor.shape();
    header["params"].push_back({{"name", p.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
    offset += s.numel();
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t size = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&size), sizeof size);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    for (T v : p.tensor.data()) {
      const double d = static_cast<double>(v);
      out.write(reinterpret_cast<const char*>(&d), sizeof d);
    }
  }
  if (!out) throw IoError("short write on checkpoint " + path.string());
}

template <std::floating_point T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::array<char, 8> magic{};
  std::uint32_t version = 0;
  std::uint64_t size = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&size), sizeof size);
  if (!in || magic != kCheckpointMagic) throw IoError("not a checkpoint: " + path.string());
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version in " + path.string());
  if (size > (std::uint64_t(1) << 30)) throw IoError("corrupt checkpoint header in " + path.string());
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) throw IoError("truncated checkpoint " + path.string());

  Checkpoint<T> ck;
  json header;
  try {
    header = json::parse(text);
    ck.architecture = header.at("architecture");
    ck.hash = header.at("hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (architecture_hash(ck.architecture) != ck.hash) throw IoError("checkpoint hash mismatch in " + path.string());

  const auto scene = scene_from_json(ck.architecture.at("scene"), "checkpoint.scene");
  const auto task = task_from_json(ck.architecture.at("task"), "checkpoint.task");
  const auto scene_ops = detail::parse_ops(ck.architecture.at("scene_ops"), "checkpoint.scene_ops");
  const auto task_ops = detail::parse_ops(ck.architecture.at("task_ops"), "checkpoint.task_ops");
  Rng rng(0);
  ck.model = make_model<T>(scene, task, scene_ops, task_ops, rng);

  std::map<std::string, Tensor<T>> by_name;
  for (auto& p : ck.model.all_parameters()) by_name.emplace(p.name, p.tensor);
  const auto& entries = header.at("params");
  if (entries.size() != by_name.size()) {
    throw ConfigError("checkpoint " + path.string() + " holds " + std::to_string(entries.size()) +
                      " parameters, architecture " + ck.hash + " needs " + std::to_string(by_name.size()));
  }
  const auto base = in.tellg();
  for (const auto& e : entries) {
    const auto name = e.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint parameter '" + name + "' is not part of architecture " + ck.hash);
    const auto dims = e.at("shape").get<std::vector<std::size_t>>();
    const Shape s{dims.at(0), dims.at(1), dims.at(2), dims.at(3)};
    if (!(s == it->second.shape())) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + to_string(s) + ", architecture " + ck.hash +
                        " expects " + to_string(it->second.shape()));
    }
    in.seekg(base + static_cast<std::streamoff>(e.at("offset").get<std::size_t>() * sizeof(double)));
    auto dst = it->second.mutable_data();
    for (auto& v : dst) {
      double d = 0;
      in.read(reinterpret_cast<char*>(&d), sizeof d);
      v = static_cast<T>(d);
    }
    if (!in) throw IoError("truncated checkpoint " + path.string());
  }
  return ck;
}

/// Throws when the checkpoint was built for a different architecture.
inline void require_architecture(const json& checkpoint_arch, const json& expected_arch) {
  const auto a = architecture_hash(checkpoint_arch);
  const auto b = architecture_hash(expected_arch);
  if (a != b) throw ConfigError("architecture mismatch: checkpoint " + a + ", config " + b);
}

}  // namespace ruas
