// Command line front end. Talks to the library only through cstt/cstt.h.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cstt/cstt.h"

#ifndef CSTT_GIT_VERSION
#define CSTT_GIT_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Failure {
  cstt_status status;
  std::string message;
};

void check(cstt_status s) {
  if (s != CSTT_OK) throw Failure{s, cstt_last_error()};
}

struct StringDeleter {
  void operator()(char* s) const { cstt_string_free(s); }
};
using CString = std::unique_ptr<char, StringDeleter>;

std::string take(char* s) { return CString(s).get(); }

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Config = Handle<cstt_config, cstt_config_free>;
using Dataset = Handle<cstt_dataset, cstt_dataset_free>;
using Trainer = Handle<cstt_trainer, cstt_trainer_free>;

struct Options {
  std::string config_path;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, epochs, clusters, blocks;
  std::optional<std::string> variant, intra, inter;
  bool no_grg = false;
  std::vector<std::string> sets;

  // per command
  std::string data_path;
  std::string checkpoint;
  std::string split = "val";
  std::string plan = "variants";
  std::size_t max_clips = 8;
  double tol = 1e-5;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "root seed for every random stream");
  cmd->add_option("--workers", o.workers, "maximum worker threads");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--clusters", o.clusters, "clusters per clustered attention (1 disables)");
  cmd->add_option("--blocks", o.blocks, "number of stacked blocks");
  cmd->add_option("--variant", o.variant, "architecture variant")
      ->check(CLI::IsMember({"baseline", "spatial", "stacked", "parallel", "ours"}));
  cmd->add_flag("--no-grg", o.no_grg, "use a learned group query instead of the scene generator");
  cmd->add_option("--intra", o.intra, "intra-cluster attention")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--inter", o.inter, "inter-cluster attention")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--set", o.sets, "extra key=value override (repeatable)");
}

void apply_overrides(cstt_config* cfg, const Options& o) {
  auto set = [&](const char* key, const std::string& value) { check(cstt_config_set(cfg, key, value.c_str())); };
  if (o.seed) set("seed", std::to_string(*o.seed));
  if (o.workers) set("workers", std::to_string(*o.workers));
  if (o.epochs) set("epochs", std::to_string(*o.epochs));
  if (o.clusters) set("clusters", std::to_string(*o.clusters));
  if (o.blocks) set("blocks", std::to_string(*o.blocks));
  if (o.variant) set("variant", *o.variant);
  if (o.no_grg) set("grg", "off");
  if (o.intra) set("intra", *o.intra);
  if (o.inter) set("inter", *o.inter);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Failure{CSTT_ERR_CONFIG, "--set expects key=value, got '" + kv + "'"};
    set(kv.substr(0, eq).c_str(), kv.substr(eq + 1));
  }
  check(cstt_config_validate(cfg));
}

// File config (or `base`) plus command line overrides.
void resolve(Config& cfg, const Options& o, const cstt_config* base = nullptr) {
  check(base ? cstt_config_clone(base, cfg.out()) : cstt_config_new(cfg.out()));
  if (!o.config_path.empty()) check(cstt_config_load(cfg.get(), o.config_path.c_str()));
  apply_overrides(cfg.get(), o);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Failure{CSTT_ERR_IO, "cannot write " + path.string()};
}

void write_manifest(const std::string& command, const cstt_config* cfg, const Options& o) {
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw Failure{CSTT_ERR_IO, "cannot create output directory " + o.out + ": " + ec.message()};
  char* cfg_json = nullptr;
  check(cstt_config_to_json(cfg, &cfg_json));
  const json config = json::parse(take(cfg_json));
  char* seed = nullptr;
  check(cstt_config_get(cfg, "seed", &seed));
  json m{{"command", command},
         {"config", config},
         {"seed", std::stoull(take(seed))},
         {"version", std::string(cstt_version()) + "+" + CSTT_GIT_VERSION},
         {"out", fs::absolute(o.out).lexically_normal().string()}};
  if (!o.config_path.empty()) m["config_file"] = o.config_path;
  if (!o.checkpoint.empty()) m["checkpoint"] = o.checkpoint;
  if (!o.data_path.empty()) m["data"] = o.data_path;
  write_text(fs::path(o.out) / "manifest.json", m.dump(2) + "\n");
}

cstt_split parse_split(const std::string& s) {
  if (s == "train") return CSTT_SPLIT_TRAIN;
  if (s == "val") return CSTT_SPLIT_VAL;
  return CSTT_SPLIT_ALL;
}

void load_data(Dataset& data, const cstt_config* cfg, const Options& o) {
  if (o.data_path.empty())
    check(cstt_dataset_generate(cfg, data.out()));
  else
    check(cstt_dataset_read(o.data_path.c_str(), data.out()));
  check(cstt_dataset_check(data.get(), cfg));
}

json metrics_json(const cstt_metrics& m) {
  return {{"group_acc", m.group_accuracy},
          {"ind_acc", m.individual_accuracy},
          {"loss", m.loss},
          {"clips", m.clips}};
}

int cmd_gen(const Options& o) {
  Config cfg;
  resolve(cfg, o);
  write_manifest("gen", cfg.get(), o);
  Dataset data;
  check(cstt_dataset_generate(cfg.get(), data.out()));
  const fs::path path = fs::path(o.out) / "data.bin";
  check(cstt_dataset_write(data.get(), path.string().c_str()));
  std::cout << json{{"data", path.string()}, {"clips", cstt_dataset_size(data.get())}}.dump() << "\n";
  return 0;
}

void on_epoch(const char* line, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  *out << line << "\n";
  out->flush();
  std::cout << line << std::endl;
}

int cmd_train(const Options& o) {
  Config cfg;
  resolve(cfg, o);
  write_manifest("train", cfg.get(), o);
  Dataset data;
  load_data(data, cfg.get(), o);
  Trainer t;
  check(cstt_trainer_new(cfg.get(), t.out()));
  std::ofstream metrics(fs::path(o.out) / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw Failure{CSTT_ERR_IO, "cannot write " + (fs::path(o.out) / "metrics.jsonl").string()};
  check(cstt_trainer_fit(t.get(), data.get(), on_epoch, &metrics));
  const fs::path ckpt = fs::path(o.out) / "checkpoints";
  fs::create_directories(ckpt);
  check(cstt_trainer_save(t.get(), (ckpt / "last.ckpt").string().c_str()));
  if (cstt_trainer_epoch(t.get()) > 0) check(cstt_trainer_save_best(t.get(), (ckpt / "best.ckpt").string().c_str()));
  return 0;
}

// The checkpoint's own config, with the file and flags layered on top. Any
// architectural change is reported as an incompatibility by the loader.
void load_checkpoint(Trainer& t, Config& cfg, const Options& o) {
  if (o.checkpoint.empty()) throw Failure{CSTT_ERR_ARGUMENT, "--checkpoint is required"};
  Trainer raw;
  check(cstt_trainer_load(o.checkpoint.c_str(), raw.out()));
  Config base;
  check(cstt_trainer_config(raw.get(), base.out()));
  if (o.config_path.empty())
    resolve(cfg, o, base.get());
  else
    resolve(cfg, o);
  check(cstt_trainer_load_for(o.checkpoint.c_str(), cfg.get(), t.out()));
}

int cmd_eval(const Options& o) {
  Trainer t;
  Config cfg;
  load_checkpoint(t, cfg, o);
  write_manifest("eval", cfg.get(), o);
  Dataset data;
  load_data(data, cfg.get(), o);
  cstt_metrics m{};
  check(cstt_trainer_evaluate(t.get(), data.get(), parse_split(o.split), &m));
  json r = metrics_json(m);
  r["split"] = o.split;
  write_text(fs::path(o.out) / "eval.json", r.dump() + "\n");
  std::cout << r.dump() << "\n";
  return 0;
}

int cmd_gradcheck(const Options& o) {
  Config cfg;
  resolve(cfg, o);
  write_manifest("gradcheck", cfg.get(), o);
  double err = 0.0;
  int passed = 0;
  char* report = nullptr;
  check(cstt_gradcheck(cfg.get(), o.tol, &err, &passed, &report));
  const std::string lines = take(report);
  write_text(fs::path(o.out) / "gradcheck.txt", lines);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max_rel_error %.3e tol %.0e %s", err, o.tol, passed ? "PASS" : "FAIL");
  std::cout << buf << "\n";
  return passed ? 0 : 1;
}

void on_arm(const char* arm, double g, double a, std::uint64_t seed, void*) {
  std::cout << json{{"arm", arm}, {"group_acc", g}, {"ind_acc", a}, {"seed", seed}}.dump() << std::endl;
}

int cmd_ablate(const Options& o) {
  Config cfg;
  resolve(cfg, o);
  write_manifest("ablate", cfg.get(), o);
  Dataset data;
  load_data(data, cfg.get(), o);
  char* csv = nullptr;
  check(cstt_ablate(cfg.get(), data.get(), o.plan.c_str(), on_arm, nullptr, &csv));
  write_text(fs::path(o.out) / "ablation.csv", take(csv));
  return 0;
}

int cmd_export_clusters(const Options& o) {
  Trainer t;
  Config cfg;
  if (o.checkpoint.empty()) {
    resolve(cfg, o);
    check(cstt_trainer_new(cfg.get(), t.out()));
  } else {
    load_checkpoint(t, cfg, o);
  }
  write_manifest("export-clusters", cfg.get(), o);
  Dataset data;
  load_data(data, cfg.get(), o);
  char* out = nullptr;
  check(cstt_trainer_export_clusters(t.get(), data.get(), parse_split(o.split), o.max_clips, &out));
  const fs::path path = fs::path(o.out) / "clusters.json";
  write_text(path, take(out) + "\n");
  std::cout << json{{"clusters", path.string()}}.dump() << "\n";
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustered spatial-temporal transformer: data, training and studies"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cstt_version()) + "+" + CSTT_GIT_VERSION);
  Options o;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset into OUT/data.bin");
  auto* train = app.add_subcommand("train", "train a model; writes metrics.jsonl and checkpoints/");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
  auto* ablate = app.add_subcommand("ablate", "train every arm of an ablation plan; writes ablation.csv");
  auto* exportc = app.add_subcommand("export-clusters", "write per-site cluster labels to clusters.json");
  for (auto* c : {gen, train, eval, gradcheck, ablate, exportc}) add_common(c, o);
  for (auto* c : {train, eval, ablate, exportc})
    c->add_option("--data", o.data_path, "dataset file from `gen` (default: generate from config)")
        ->check(CLI::ExistingFile);
  for (auto* c : {eval, exportc}) {
    c->add_option("--checkpoint", o.checkpoint, "checkpoint file")->check(CLI::ExistingFile);
    c->add_option("--split", o.split, "clips to use")
        ->check(CLI::IsMember({"train", "val", "all"}))
        ->capture_default_str();
  }
  eval->get_option("--checkpoint")->required();
  exportc->add_option("--max-clips", o.max_clips, "number of clips to export")->capture_default_str();
  gradcheck->add_option("--tol", o.tol, "relative error tolerance")->capture_default_str();
  ablate->add_option("--plan", o.plan, "variants | clusters | attention | blocks | arm,arm,...")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage_error", e.what());
    return 64;
  }

  try {
    if (gen->parsed()) return cmd_gen(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (gradcheck->parsed()) return cmd_gradcheck(o);
    if (ablate->parsed()) return cmd_ablate(o);
    if (exportc->parsed()) return cmd_export_clusters(o);
  } catch (const Failure& f) {
    print_error(cstt_status_name(f.status), f.message);
    return static_cast<int>(f.status);
  } catch (const std::exception& e) {
    print_error("internal_error", e.what());
    return static_cast<int>(CSTT_ERR_INTERNAL);
  }
  return 0;
}
