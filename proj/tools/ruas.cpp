#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ruas/gradcheck.hpp"
#include "ruas/ruas.hpp"

namespace fs = std::filesystem;
using T = float;
using namespace ruas;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out = "out";
};

// One command invocation: effective config, seed, output directory, log.
class Run {
 public:
  Run(const Common& c, const std::string& command, const std::function<void(RunConfig&)>& override_fn = {})
      : out_(c.out) {
    cfg_ = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (override_fn) override_fn(cfg_);
    cfg_.validate();
    seed_ = resolve_seed(c.seed_opt && c.seed_opt->count() ? std::optional<std::uint64_t>(c.seed) : std::nullopt, cfg_);
    fs::create_directories(out_);
    log_.open(out_ / "log.txt");
    if (!log_) throw IoError("cannot write " + (out_ / "log.txt").string());
    auto j = to_json(cfg_);
    j["seed"] = seed_;
    j["command"] = command;
    write_json(out_ / "run_config.json", j);
    say(command + ": seed " + std::to_string(seed_) + ", output " + out_.string());
  }

  void say(const std::string& line) {
    std::cout << line << std::endl;
    log_ << line << std::endl;
  }

  [[nodiscard]] const RunConfig& cfg() const { return cfg_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] const fs::path& out() const { return out_; }

 private:
  RunConfig cfg_;
  std::uint64_t seed_ = kDefaultSeed;
  fs::path out_;
  std::ofstream log_;
};

std::ofstream open_csv(const fs::path& path, const std::string& header) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << header << "\n" << std::setprecision(10);
  return f;
}

std::string join_ops(const std::vector<OpKind>& ops, const char* sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < ops.size(); ++i) s += (i ? sep : "") + std::string(to_string(ops[i]));
  return s;
}

std::string fmt(std::optional<double> v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(8) << *v;
  return os.str();
}

json alpha_json(const ArchParams<T>& a) {
  json logits = json::array();
  for (const auto& l : a.logits) logits.push_back(std::vector<double>(l.data().begin(), l.data().end()));
  return {{"candidates", detail::ops_json(a.candidates)}, {"logits", logits}};
}

void write_dot(const fs::path& path, const std::vector<OpKind>& scene_ops, const std::vector<OpKind>& task_ops,
               const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "digraph ruas {\n  rankdir=LR;\n";
  auto cell = [&](const char* id, const char* label, const std::vector<OpKind>& ops, std::size_t width) {
    const auto spec = CellSpec::distillation(width);
    f << "  subgraph cluster_" << id << " {\n    label=\"" << label << "\";\n";
    for (std::size_t n = 0; n < spec.node_count; ++n) f << "    " << id << n << " [label=\"" << n << "\"];\n";
    f << "    " << id << "_fusion [label=\"fusion 1x1\", shape=box];\n";
    for (std::size_t i = 0; i < spec.edges.size(); ++i) {
      const auto& e = spec.edges[i];
      f << "    " << id << e.src << " -> " << id << e.dst << " [label=\"" << to_string(ops[i]) << "\"];\n";
    }
    f << "    " << id << spec.node_count - 1 << " -> " << id << "_fusion;\n  }\n";
  };
  cell("scene", "scene cell", scene_ops, cfg.scene.width);
  cell("task", "noise removal cell", task_ops, cfg.task.width);
  f << "}\n";
}

void write_history(const fs::path& path, const std::vector<SearchHistoryRow>& h) {
  auto f = open_csv(path, "epoch,scene_val,task_val,combined");
  for (const auto& r : h) f << r.epoch << "," << r.scene_val << "," << r.task_val << "," << r.combined << "\n";
}

void write_metrics(const fs::path& path, const MetricTable& t) {
  auto f = open_csv(path, "id,psnr_db,ssim");
  for (const auto& r : t.rows) f << r.id << "," << fmt(r.psnr_db) << "," << fmt(r.ssim) << "\n";
  if (t.mean_psnr) f << "mean," << fmt(t.mean_psnr) << "," << fmt(t.mean_ssim) << "\n";
}

std::pair<std::vector<OpKind>, std::vector<OpKind>> read_alpha_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    auto j = json::parse(in);
    return {detail::parse_ops(j.at("scene_ops"), "scene_ops"), detail::parse_ops(j.at("task_ops"), "task_ops")};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("architecture file " + path.string() + ": " + e.what());
  }
}

std::string metric_summary(const MetricTable& t) {
  return "PSNR " + fmt(t.mean_psnr) + " dB, SSIM " + fmt(t.mean_ssim);
}

SearchResult<T> run_search(Run& run, SearchStrategy strategy, const SplitDataset<T>& split, RuasModel<T>& m) {
  auto cfg = run.cfg().search;
  cfg.strategy = strategy;
  Rng rng(run.seed());
  m = make_supernet<T>(run.cfg().scene, run.cfg().task, op_registry(TaskKind::scene), op_registry(TaskKind::low_task),
                       rng);
  return search(m, split, cfg, rng, [&](const SearchHistoryRow& r) {
    std::ostringstream os;
    os << to_string(strategy) << " epoch " << r.epoch << ": scene_val " << r.scene_val << " task_val " << r.task_val
       << " combined " << r.combined;
    run.say(os.str());
  });
}

TrainResult<T> run_training(Run& run, RuasModel<T>& m, const std::vector<Sample<T>>& data, const std::string& tag) {
  Rng rng(run.seed() + 1);
  auto res = train(m, data, run.cfg().train, rng, [&](std::string_view phase, std::size_t e, double loss) {
    std::ostringstream os;
    os << tag << phase << " epoch " << e << ": loss " << loss;
    run.say(os.str());
  });
  run.say(tag + "momentum " + std::to_string(res.momentum));
  return res;
}

RuasModel<T> build_model(const RunConfig& cfg, const std::vector<OpKind>& scene_ops,
                         const std::vector<OpKind>& task_ops, std::uint64_t seed) {
  Rng rng(seed);
  return make_model<T>(cfg.scene, cfg.task, scene_ops, task_ops, rng);
}

// ---------------------------------------------------------------------------

int cmd_search(const Common& c, const std::string& strategy) {
  Run run(c, "search", [&](RunConfig& cfg) {
    if (!strategy.empty()) cfg.search.strategy = *parse_search_strategy(strategy);
  });
  auto all = load_data<T>(run.cfg().search_data);
  const auto split = split_data(all, run.cfg().search_data);
  RuasModel<T> m;
  auto res = run_search(run, run.cfg().search.strategy, split, m);
  const auto scene_ops = discretize(res.alpha_s);
  const auto task_ops = discretize(res.alpha_t);
  write_history(run.out() / "history.csv", res.history);
  json a = {{"strategy", std::string(to_string(res.strategy))},
            {"seed", run.seed()},
            {"momentum", res.momentum},
            {"alpha_s", alpha_json(res.alpha_s)},
            {"alpha_t", alpha_json(res.alpha_t)},
            {"scene_ops", detail::ops_json(scene_ops)},
            {"task_ops", detail::ops_json(task_ops)}};
  write_json(run.out() / "alpha_final.json", a);
  write_dot(run.out() / "arch.dot", scene_ops, task_ops, run.cfg());
  std::ofstream dump(run.out() / "arch.txt");
  dump << arch_dump(m.scene.cell, &*m.scene.alpha) << arch_dump(m.denoiser.cell, &*m.denoiser.alpha);
  run.say("scene ops: " + join_ops(scene_ops));
  run.say("task ops:  " + join_ops(task_ops));
  return kOk;
}

int cmd_train(const Common& c, const std::string& alpha_file, const std::string& variant, const std::string& strategy,
              const std::string& data_dir, const std::string& ref_dir) {
  Run run(c, "train", [&](RunConfig& cfg) {
    if (!variant.empty()) cfg.train.variant = *parse_variant(variant);
    if (!strategy.empty()) cfg.train.strategy = *parse_train_strategy(strategy);
    if (!data_dir.empty()) cfg.data.input_dir = data_dir;
    if (!ref_dir.empty()) cfg.data.reference_dir = ref_dir;
    if (!alpha_file.empty()) std::tie(cfg.architecture.scene_ops, cfg.architecture.task_ops) = read_alpha_file(alpha_file);
  });
  const auto& cfg = run.cfg();
  const auto data = load_data<T>(cfg.data);
  auto m = build_model(cfg, cfg.architecture.scene_ops, cfg.architecture.task_ops, run.seed());
  run.say("architecture " + architecture_hash(architecture_json(cfg.scene, cfg.task, cfg.architecture.scene_ops,
                                                                 cfg.architecture.task_ops)));
  const auto res = run_training(run, m, data, "");
  {
    auto f = open_csv(run.out() / "curve.csv", "phase,epoch,loss");
    for (std::size_t i = 0; i < res.pretrain_curve.size(); ++i) f << "pretrain," << i + 1 << "," << res.pretrain_curve[i] << "\n";
    for (std::size_t i = 0; i < res.curve.size(); ++i) f << "train," << i + 1 << "," << res.curve[i] << "\n";
  }
  save_checkpoint(run.out() / "model.ckpt", m);
  const auto table = evaluate(m, data, cfg.train.variant);
  write_metrics(run.out() / "metrics.csv", table);
  if (table.mean_psnr) {
    run.say("input:  " + metric_summary(evaluate_inputs(data)));
    run.say("output: " + metric_summary(table));
  }
  if (res.aborted) {
    run.say("aborted: " + res.abort_reason + " (checkpoint holds the last good weights)");
    return kNumeric;
  }
  return kOk;
}

std::vector<std::pair<std::string, fs::path>> list_inputs(const fs::path& input) {
  std::vector<std::pair<std::string, fs::path>> out;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file() && e.path().extension() == ".png") out.emplace_back(e.path().stem().string(), e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw ConfigError("no PNG images in " + input.string());
  } else {
    if (!fs::exists(input)) throw IoError("no such input: " + input.string());
    out.emplace_back(input.stem().string(), input);
  }
  return out;
}

int cmd_enhance(const Common& c, const std::string& model_path, const std::string& input, const std::string& variant,
                bool dump_stages) {
  Run run(c, "enhance");
  auto ck = load_checkpoint<T>(model_path);
  if (!c.config.empty()) {
    const auto& cfg = run.cfg();
    require_architecture(ck.architecture, architecture_json(cfg.scene, cfg.task, cfg.architecture.scene_ops,
                                                            cfg.architecture.task_ops));
  }
  const Variant v = variant.empty() ? run.cfg().train.variant : *parse_variant(variant);
  for (const auto& [id, path] : list_inputs(input)) {
    const auto y = load_png<T>(path);
    const auto out = ck.model.forward(y, v);
    save_png(run.out() / (id + ".png"), render(out.x));
    std::string note = out.removal_ran ? "noise removal ran" : "noise removal skipped";
    if (dump_stages) {
      const auto dir = run.out() / (id + "_stages");
      fs::create_directories(dir);
      for (std::size_t k = 0; k < out.scene.trajectory.size(); ++k) {
        save_png(dir / ("stage" + std::to_string(k + 1) + "_t.png"), out.scene.trajectory[k].t);
        save_png(dir / ("stage" + std::to_string(k + 1) + "_u.png"), render(out.scene.trajectory[k].u));
      }
      if (out.theta) save_png_normalized(dir / "noise_map.png", *out.theta);
    }
    run.say(id + ": " + std::string(to_string(v)) + ", " + note);
  }
  return kOk;
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& variant, const std::string& data_dir,
             const std::string& ref_dir) {
  Run run(c, "eval", [&](RunConfig& cfg) {
    if (!data_dir.empty()) cfg.data.input_dir = data_dir;
    if (!ref_dir.empty()) cfg.data.reference_dir = ref_dir;
  });
  auto ck = load_checkpoint<T>(model_path);
  const Variant v = variant.empty() ? run.cfg().train.variant : *parse_variant(variant);
  const auto data = load_data<T>(run.cfg().data);
  const auto table = evaluate(ck.model, data, v);
  write_metrics(run.out() / "metrics.csv", table);
  if (table.mean_psnr) {
    run.say("input:  " + metric_summary(evaluate_inputs(data)));
    run.say(std::string(to_string(v)) + ": " + metric_summary(table));
  } else {
    run.say("no references found; metrics.csv lists ids only");
  }
  return kOk;
}

int cmd_gradcheck(const Common& c) {
  Run run(c, "gradcheck");
  const auto results = run_gradcheck_suite(run.seed());
  auto f = open_csv(run.out() / "gradcheck.csv", "check,error,pass");
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.error < kGradTolerance;
    ok = ok && pass;
    f << r.name << "," << r.error << "," << (pass ? 1 : 0) << "\n";
    std::ostringstream os;
    os << (pass ? "ok   " : "FAIL ") << r.name << " " << r.error;
    run.say(os.str());
  }
  return ok ? kOk : kNumeric;
}

int cmd_ablate_k(const Common& c, const std::vector<std::size_t>& ks) {
  Run run(c, "ablate-k");
  const auto& cfg = run.cfg();
  const auto data = load_data<T>(cfg.data);
  auto f = open_csv(run.out() / "ablation.csv", "k,psnr_db,ssim,params,mult_adds");
  for (std::size_t k : ks) {
    auto scene = cfg.scene;
    scene.stages = k;
    scene.validate();
    Rng rng(run.seed());
    auto m = make_model<T>(scene, cfg.task, cfg.architecture.scene_ops, cfg.architecture.task_ops, rng);
    const auto res = run_training(run, m, data, "K=" + std::to_string(k) + " ");
    if (res.aborted) run.say("K=" + std::to_string(k) + " aborted: " + res.abort_reason);
    const auto t = evaluate(m, data, cfg.train.variant);
    const auto cost = m.cost(cfg.train.variant, data.front().input.shape().h, data.front().input.shape().w);
    f << k << "," << fmt(t.mean_psnr) << "," << fmt(t.mean_ssim) << "," << cost.params << "," << cost.mult_adds << "\n";
    run.say("K=" + std::to_string(k) + ": " + metric_summary(t));
  }
  return kOk;
}

int cmd_compare_strategies(const Common& c) {
  Run run(c, "compare-strategies");
  auto all = load_data<T>(run.cfg().search_data);
  const auto split = split_data(all, run.cfg().search_data);
  auto f = open_csv(run.out() / "strategies.csv",
                    "strategy,scene_val,task_val,combined,scene_params,total_params,scene_ops,task_ops");
  std::vector<std::pair<double, std::string>> order;
  for (auto s : {SearchStrategy::global, SearchStrategy::independent, SearchStrategy::cooperative}) {
    RuasModel<T> m;
    const auto res = run_search(run, s, split, m);
    const auto name = std::string(to_string(s));
    const auto scene_ops = discretize(res.alpha_s);
    const auto task_ops = discretize(res.alpha_t);
    write_history(run.out() / ("history_" + name + ".csv"), res.history);
    write_dot(run.out() / ("arch_" + name + ".dot"), scene_ops, task_ops, run.cfg());
    const auto derived = build_model(run.cfg(), scene_ops, task_ops, run.seed());
    const auto h = split.train.front().input.shape().h, w = split.train.front().input.shape().w;
    const auto& last = res.history.back();
    f << name << "," << last.scene_val << "," << last.task_val << "," << last.combined << ","
      << derived.cost(Variant::ruas_s, h, w).params << "," << derived.cost(Variant::ruas, h, w).params << ","
      << join_ops(scene_ops) << "," << join_ops(task_ops) << "\n";
    order.emplace_back(last.combined, name);
  }
  std::sort(order.begin(), order.end());
  std::string line = "ordering by final combined val loss:";
  for (const auto& [v, n] : order) line += " " + n + " (" + fmt(v) + ")";
  run.say(line);
  return kOk;
}

int cmd_fixed_op(const Common& c) {
  Run run(c, "fixed-op");
  const auto& cfg = run.cfg();
  const auto data = load_data<T>(cfg.data);
  const auto h = data.front().input.shape().h, w = data.front().input.shape().w;
  auto f = open_csv(run.out() / "fixed_op.csv", "arch,params,psnr_db,ssim");
  auto report = [&](const std::string& name, RuasModel<T>& m) {
    const auto res = run_training(run, m, data, name + " ");
    if (res.aborted) run.say(name + " aborted: " + res.abort_reason);
    const auto t = evaluate(m, data, cfg.train.variant);
    f << name << "," << m.cost(cfg.train.variant, h, w).params << "," << fmt(t.mean_psnr) << "," << fmt(t.mean_ssim)
      << "\n";
    run.say(name + ": " + metric_summary(t));
  };
  for (auto k : op_registry(TaskKind::low_task)) {
    auto m = build_model(cfg, std::vector<OpKind>(7, k), std::vector<OpKind>(7, k), run.seed());
    report(std::string(to_string(k)), m);
  }
  Rng rng(run.seed());
  auto m = make_supernet<T>(cfg.scene, cfg.task, op_registry(TaskKind::scene), op_registry(TaskKind::low_task), rng);
  for (auto* a : {&*m.scene.alpha, &*m.denoiser.alpha})
    for (auto& l : a->logits) std::fill(l.mutable_data().begin(), l.mutable_data().end(), T(0));
  report("supernet", m);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retinex-inspired unrolling with cooperative architecture search for low-light enhancement"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--seed", common.seed, "random seed (overrides RUAS_SEED and the config)");
    sub->add_option("--out", common.out, "output directory");
  };
  const std::vector<std::string> strategies{"cooperative", "independent", "global"};
  const std::vector<std::string> variants{"ruas_s", "ruas", "ruas_a"};

  std::string strategy, alpha_file, variant, train_strategy, data_dir, ref_dir, model_path, input;
  bool dump_stages = false;
  std::vector<std::size_t> ks{1, 2, 3, 4, 5};

  auto* search = app.add_subcommand("search", "architecture search");
  add_common(search);
  search->add_option("--strategy", strategy, "search strategy")->check(CLI::IsMember(strategies));

  auto* trn = app.add_subcommand("train", "train a discrete architecture");
  add_common(trn);
  trn->add_option("--alpha", alpha_file, "alpha_final.json from a search run")->check(CLI::ExistingFile);
  trn->add_option("--variant", variant, "model variant")->check(CLI::IsMember(variants));
  trn->add_option("--strategy", train_strategy, "training strategy")
      ->check(CLI::IsMember(std::vector<std::string>{"end_to_end", "hierarchical"}));
  trn->add_option("--data", data_dir, "directory of input PNGs (default: synthetic set)");
  trn->add_option("--reference", ref_dir, "directory of reference PNGs with matching names");

  auto* enh = app.add_subcommand("enhance", "enhance images with a trained model");
  add_common(enh);
  enh->add_option("--model", model_path, "checkpoint")->required();
  enh->add_option("--input", input, "PNG file or directory")->required();
  enh->add_option("--variant", variant, "model variant")->check(CLI::IsMember(variants));
  enh->add_flag("--dump-stages", dump_stages, "write per-stage t/u maps and the noise map");

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM of a trained model");
  add_common(ev);
  ev->add_option("--model", model_path, "checkpoint")->required();
  ev->add_option("--variant", variant, "model variant")->check(CLI::IsMember(variants));
  ev->add_option("--data", data_dir, "directory of input PNGs (default: synthetic set)");
  ev->add_option("--reference", ref_dir, "directory of reference PNGs with matching names");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc);
  auto* ak = app.add_subcommand("ablate-k", "stage-count ablation");
  add_common(ak);
  ak->add_option("--k-list", ks, "stage counts")->delimiter(',');
  auto* cs = app.add_subcommand("compare-strategies", "global vs independent vs cooperative search");
  add_common(cs);
  auto* fo = app.add_subcommand("fixed-op", "uniform-operator baselines and the supernet");
  add_common(fo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  for (auto* sub : app.get_subcommands()) common.seed_opt = sub->get_option("--seed");

  try {
    if (search->parsed()) return cmd_search(common, strategy);
    if (trn->parsed()) return cmd_train(common, alpha_file, variant, train_strategy, data_dir, ref_dir);
    if (enh->parsed()) return cmd_enhance(common, model_path, input, variant, dump_stages);
    if (ev->parsed()) return cmd_eval(common, model_path, variant, data_dir, ref_dir);
    if (gc->parsed()) return cmd_gradcheck(common);
    if (ak->parsed()) return cmd_ablate_k(common, ks);
    if (cs->parsed()) return cmd_compare_strategies(common);
    if (fo->parsed()) return cmd_fixed_op(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DomainError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
