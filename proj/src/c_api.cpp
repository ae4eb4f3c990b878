#include "cstt/cstt.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <optional>
#include <sstream>
#include <string>

#include "cstt/config.hpp"
#include "cstt/errors.hpp"
#include "cstt/training.hpp"

struct cstt_config {
  cstt::RunConfig cfg;
};

struct cstt_dataset {
  cstt::Dataset data;
};

struct cstt_trainer {
  cstt::Trainer trainer;
};

namespace {

thread_local std::string g_last_error;

class Incompatible : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

cstt_status fail(cstt_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <class F>
cstt_status guard(F&& f) {
  try {
    f();
    return CSTT_OK;
  } catch (const Incompatible& e) {
    return fail(CSTT_ERR_INCOMPATIBLE, e.what());
  } catch (const cstt::ConfigError& e) {
    return fail(CSTT_ERR_CONFIG, e.what());
  } catch (const cstt::IoError& e) {
    return fail(CSTT_ERR_IO, e.what());
  } catch (const cstt::ShapeError& e) {
    return fail(CSTT_ERR_SHAPE, e.what());
  } catch (const cstt::ContractError& e) {
    return fail(CSTT_ERR_CONTRACT, e.what());
  } catch (const cstt::NumericError& e) {
    return fail(CSTT_ERR_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(CSTT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(CSTT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CSTT_ERR_INTERNAL, "unknown exception");
  }
}

#define REQUIRE(ptr)                                                   \
  do {                                                                 \
    if ((ptr) == nullptr) return fail(CSTT_ERR_ARGUMENT, #ptr " is null"); \
  } while (0)

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<std::size_t> split_indices(const cstt::Dataset& d, cstt_split split) {
  switch (split) {
    case CSTT_SPLIT_TRAIN:
      return d.train_indices();
    case CSTT_SPLIT_VAL:
      return d.val_indices();
    case CSTT_SPLIT_ALL: {
      std::vector<std::size_t> all(d.clips.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      return all;
    }
  }
  throw cstt::ContractError("unknown split " + std::to_string(static_cast<int>(split)));
}

void check_geometry(const cstt::GeneratorConfig& d, const cstt::ModelConfig& m) {
  std::string out;
  auto cmp = [&](const char* name, std::size_t have, std::size_t want) {
    if (have != want)
      out += (out.empty() ? "" : ", ") + std::string(name) + " " + std::to_string(have) +
             " (dataset) vs " + std::to_string(want) + " (config)";
  };
  cmp("frames", d.frames, m.frames);
  cmp("individuals", d.individuals, m.individuals);
  cmp("input_dim", d.input_dim, m.input_dim);
  cmp("group_classes", d.group_classes, m.group_classes);
  cmp("action_classes", d.action_classes, m.action_classes);
  cmp("scene_channels", d.scene_channels, m.scene_channels);
  cmp("scene_height", d.scene_height, m.scene_height);
  cmp("scene_width", d.scene_width, m.scene_width);
  if (!out.empty()) throw Incompatible("dataset does not fit the model: " + out);
}

}  // namespace

extern "C" {

const char* cstt_version(void) { return "0.1.0"; }

const char* cstt_last_error(void) { return g_last_error.c_str(); }

const char* cstt_status_name(cstt_status s) {
  switch (s) {
    case CSTT_OK:
      return "ok";
    case CSTT_ERR_ARGUMENT:
      return "argument_error";
    case CSTT_ERR_CONFIG:
      return "config_error";
    case CSTT_ERR_IO:
      return "io_error";
    case CSTT_ERR_SHAPE:
      return "shape_error";
    case CSTT_ERR_CONTRACT:
      return "contract_error";
    case CSTT_ERR_NUMERIC:
      return "numeric_error";
    case CSTT_ERR_INCOMPATIBLE:
      return "incompatible";
    case CSTT_ERR_INTERNAL:
      return "internal_error";
  }
  return "unknown";
}

void cstt_string_free(char* s) { std::free(s); }

// ---- configuration ----

cstt_status cstt_config_new(cstt_config** out) {
  REQUIRE(out);
  return guard([&] { *out = new cstt_config{}; });
}

cstt_status cstt_config_clone(const cstt_config* cfg, cstt_config** out) {
  REQUIRE(cfg);
  REQUIRE(out);
  return guard([&] { *out = new cstt_config{cfg->cfg}; });
}

void cstt_config_free(cstt_config* cfg) { delete cfg; }

cstt_status cstt_config_load(cstt_config* cfg, const char* path) {
  REQUIRE(cfg);
  REQUIRE(path);
  return guard([&] { cfg->cfg = cstt::load_config(path, cfg->cfg); });
}

cstt_status cstt_config_parse(cstt_config* cfg, const char* text) {
  REQUIRE(cfg);
  REQUIRE(text);
  return guard([&] { cfg->cfg = cstt::parse_config(text, cfg->cfg); });
}

cstt_status cstt_config_set(cstt_config* cfg, const char* key, const char* value) {
  REQUIRE(cfg);
  REQUIRE(key);
  REQUIRE(value);
  return guard([&] { cstt::set_key(cfg->cfg, key, value); });
}

cstt_status cstt_config_get(const cstt_config* cfg, const char* key, char** out) {
  REQUIRE(cfg);
  REQUIRE(key);
  REQUIRE(out);
  return guard([&] { *out = dup(cstt::get_key(cfg->cfg, key)); });
}

cstt_status cstt_config_validate(const cstt_config* cfg) {
  REQUIRE(cfg);
  return guard([&] { cfg->cfg.validate(); });
}

cstt_status cstt_config_to_json(const cstt_config* cfg, char** out) {
  REQUIRE(cfg);
  REQUIRE(out);
  return guard([&] { *out = dup(cstt::config_json(cfg->cfg)); });
}

cstt_status cstt_config_to_text(const cstt_config* cfg, char** out) {
  REQUIRE(cfg);
  REQUIRE(out);
  return guard([&] { *out = dup(cstt::format_config(cfg->cfg)); });
}

cstt_status cstt_config_keys(char** out) {
  REQUIRE(out);
  return guard([&] {
    std::string s;
    for (const auto& k : cstt::config_keys()) s += k + "\n";
    *out = dup(s);
  });
}

// ---- data ----

cstt_status cstt_dataset_generate(const cstt_config* cfg, cstt_dataset** out) {
  REQUIRE(cfg);
  REQUIRE(out);
  return guard([&] {
    cfg->cfg.validate();
    *out = new cstt_dataset{cstt::generate_dataset(cfg->cfg.data, cfg->cfg.clips)};
  });
}

cstt_status cstt_dataset_read(const char* path, cstt_dataset** out) {
  REQUIRE(path);
  REQUIRE(out);
  return guard([&] { *out = new cstt_dataset{cstt::read_dataset(path)}; });
}

cstt_status cstt_dataset_write(const cstt_dataset* data, const char* path) {
  REQUIRE(data);
  REQUIRE(path);
  return guard([&] { cstt::write_dataset(path, data->data); });
}

size_t cstt_dataset_size(const cstt_dataset* data) { return data ? data->data.clips.size() : 0; }

cstt_status cstt_dataset_check(const cstt_dataset* data, const cstt_config* cfg) {
  REQUIRE(data);
  REQUIRE(cfg);
  return guard([&] { check_geometry(data->data.config, cfg->cfg.model); });
}

void cstt_dataset_free(cstt_dataset* data) { delete data; }

// ---- training ----

cstt_status cstt_trainer_new(const cstt_config* cfg, cstt_trainer** out) {
  REQUIRE(cfg);
  REQUIRE(out);
  return guard([&] { *out = new cstt_trainer{cstt::Trainer(cfg->cfg)}; });
}

cstt_status cstt_trainer_load(const char* path, cstt_trainer** out) {
  REQUIRE(path);
  REQUIRE(out);
  return guard([&] { *out = new cstt_trainer{cstt::Trainer::load(path)}; });
}

cstt_status cstt_trainer_load_for(const char* path, const cstt_config* want, cstt_trainer** out) {
  REQUIRE(path);
  REQUIRE(want);
  REQUIRE(out);
  return guard([&] {
    cstt::Trainer t = cstt::Trainer::load(path);
    const std::string why = cstt::model_incompatibility(t.config().model, want->cfg.model);
    if (!why.empty()) throw Incompatible("checkpoint does not match config: " + why);
    t.set_train_config(want->cfg.train);
    *out = new cstt_trainer{std::move(t)};
  });
}

void cstt_trainer_free(cstt_trainer* t) { delete t; }

cstt_status cstt_trainer_save(const cstt_trainer* t, const char* path) {
  REQUIRE(t);
  REQUIRE(path);
  return guard([&] { t->trainer.save(path); });
}

cstt_status cstt_trainer_save_best(const cstt_trainer* t, const char* path) {
  REQUIRE(t);
  REQUIRE(path);
  return guard([&] {
    const std::string& best = t->trainer.best_checkpoint();
    if (best.empty()) throw cstt::ContractError("no validated checkpoint yet");
    cstt::Trainer::deserialize(best).save(path);
  });
}

cstt_status cstt_trainer_fit(cstt_trainer* t, const cstt_dataset* data, cstt_epoch_fn on_epoch,
                             void* user) {
  REQUIRE(t);
  REQUIRE(data);
  return guard([&] {
    check_geometry(data->data.config, t->trainer.config().model);
    t->trainer.fit(data->data, [&](const cstt::EpochRecord& r) {
      if (on_epoch) on_epoch(cstt::to_json_line(r).c_str(), user);
    });
  });
}

cstt_status cstt_trainer_evaluate(const cstt_trainer* t, const cstt_dataset* data,
                                  cstt_split split, cstt_metrics* out) {
  REQUIRE(t);
  REQUIRE(data);
  REQUIRE(out);
  return guard([&] {
    check_geometry(data->data.config, t->trainer.config().model);
    const cstt::Metrics m = t->trainer.evaluate(data->data, split_indices(data->data, split));
    *out = {m.group_accuracy, m.individual_accuracy, m.loss, m.clips};
  });
}

cstt_status cstt_trainer_config(const cstt_trainer* t, cstt_config** out) {
  REQUIRE(t);
  REQUIRE(out);
  return guard([&] { *out = new cstt_config{t->trainer.config()}; });
}

size_t cstt_trainer_epoch(const cstt_trainer* t) { return t ? t->trainer.epoch() : 0; }

cstt_status cstt_trainer_export_clusters(const cstt_trainer* t, const cstt_dataset* data,
                                         cstt_split split, size_t max_clips, char** out) {
  REQUIRE(t);
  REQUIRE(data);
  REQUIRE(out);
  return guard([&] {
    check_geometry(data->data.config, t->trainer.config().model);
    auto idx = split_indices(data->data, split);
    if (idx.size() > max_clips) idx.resize(max_clips);
    const cstt::Trainer& tr = t->trainer;
    *out = dup(cstt::export_clusters(tr.model(), tr.clusters(), data->data, idx));
  });
}

// ---- checks and studies ----

cstt_status cstt_gradcheck(const cstt_config* cfg, double tol, double* max_rel_error, int* passed,
                           char** report) {
  REQUIRE(cfg);
  return guard([&] {
    const cstt::GradCheckReport r =
        cstt::check_model_gradients(cstt::gradcheck_config(cfg->cfg), tol);
    if (max_rel_error) *max_rel_error = r.max_rel_error;
    if (passed) *passed = r.pass ? 1 : 0;
    if (report) {
      std::ostringstream os;
      os.precision(3);
      os << std::scientific;
      for (const auto& e : r.entries) os << e.name << ' ' << e.max_rel_error << '\n';
      *report = dup(os.str());
    }
  });
}

cstt_status cstt_ablate(const cstt_config* base, const cstt_dataset* data, const char* plan,
                        cstt_arm_fn on_arm, void* user, char** csv) {
  REQUIRE(base);
  REQUIRE(data);
  REQUIRE(plan);
  return guard([&] {
    check_geometry(data->data.config, base->cfg.model);
    const auto arms = cstt::ablation_plan(plan, base->cfg);
    const auto rows = cstt::run_ablation(arms, data->data, [&](const cstt::AblationRow& r) {
      if (on_arm) on_arm(r.arm.c_str(), r.group_accuracy, r.individual_accuracy, r.seed, user);
    });
    if (csv) *csv = dup(cstt::ablation_csv(rows));
  });
}

}  // extern "C"
