#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cstt/clustering.hpp"
#include "cstt/config.hpp"
#include "cstt/context.hpp"
#include "cstt/grad_check.hpp"
#include "cstt/model.hpp"
#include "cstt/synth.hpp"

namespace cstt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update in place; t is the 1-based step count.
void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, double lr, const AdamConfig& cfg, std::uint64_t t);

class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParamStore& store, AdamConfig cfg = {});

  // Updates every parameter from its accumulated gradient.
  void step(ParamStore& store, double lr);
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Piecewise constant: lr divided by decay_factor once per decay epoch passed.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Scales all gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

struct Metrics {
  double group_accuracy = 0.0;
  double individual_accuracy = 0.0;
  double loss = 0.0;
  std::size_t clips = 0;
};

// Accuracy of argmax predictions (ties to the lowest class).
Metrics score_logits(const Tensor& group_logits, const Tensor& individual_logits,
                     std::span<const int> group_labels, std::span<const int> action_labels);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  bool validated = false;
  Metrics val;
};

// One JSON object, no timings, fixed key order. Validation fields are null
// for epochs that skipped validation.
std::string to_json_line(const EpochRecord& r);

// Owns everything that evolves during training: model, optimizer, cluster
// state and the named random streams. Every stream derives from the root
// seed, so two trainers built from the same config behave identically.
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);

  const RunConfig& config() const { return cfg_; }
  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  ClusterEngine& clusters() { return *clusters_; }
  const ClusterEngine& clusters() const { return *clusters_; }
  Adam& optimizer() { return adam_; }
  std::size_t epoch() const { return epoch_; }
  // Run settings for a resumed trainer (e.g. more epochs, other workers).
  void set_train_config(const TrainConfig& t) {
    t.validate();
    cfg_.train = t;
  }

  // One pass over the training split; returns the mean training loss.
  // A non-finite loss throws NumericError naming the first op that produced it.
  double train_epoch(const Dataset& data, const std::vector<std::size_t>& train_idx);

  // Trains until config().train.epochs, evaluating the validation split as
  // train.eval_every asks and always after the last epoch. The callback sees
  // each record as it is produced.
  std::vector<EpochRecord> fit(const Dataset& data,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

  // Forward-only, dropout off, cluster state untouched. Deterministic.
  Metrics evaluate(const Dataset& data, const std::vector<std::size_t>& idx) const;

  // Binary checkpoint: "CSTTCKPT", u32 version, u64 header length, JSON
  // header (config, epoch, names, shapes, RNG states), then f64 parameters,
  // Adam moments and per-site cluster centroids in header order.
  std::string serialize() const;
  static Trainer deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static Trainer load(const std::string& path);

  const std::string& best_checkpoint() const { return best_; }

 private:
  RunConfig cfg_;
  std::unique_ptr<Model> model_;
  Adam adam_;
  std::unique_ptr<ClusterEngine> clusters_;
  std::unique_ptr<DropoutSource> dropout_;
  Rng shuffle_;
  std::size_t epoch_ = 0;
  double best_acc_ = -1.0;
  std::string best_;
};

// Deterministic evaluation of any model; `workers` caps the threads used.
Metrics evaluate_model(const Model& model, const ClusterEngine& clusters, const Dataset& data,
                       const std::vector<std::size_t>& idx, std::size_t batch_size, double lambda,
                       std::size_t workers);

// Same switches as `base` (variant, GRG, clustering, pooling, ...) on a
// geometry small enough for central differences.
RunConfig gradcheck_config(const RunConfig& base);

// Central-difference check of the full training loss on one generated clip,
// dropout off and cluster assignments frozen.
GradCheckReport check_model_gradients(const RunConfig& cfg, double tol = 1e-5);

// Cluster labels of every clustered attention site for the given clips, as
// JSON: {"clusters": C, "mode": ..., "clips": [{"index", "group_label",
// "sites": [{"site", "group", "labels"}]}]}.
std::string export_clusters(const Model& model, const ClusterEngine& clusters,
                            const Dataset& data, const std::vector<std::size_t>& idx);

// ---- ablations -----------------------------------------------------------

struct AblationArm {
  std::string name;  // e.g. "variant=ours", "clusters=1", "blocks=0", "attention=intra"
  RunConfig config;
};

struct AblationRow {
  std::string arm;
  double group_accuracy = 0.0;
  double individual_accuracy = 0.0;
  std::uint64_t seed = 0;
};

// Named plans: "variants", "clusters", "attention", "blocks", or a comma
// separated list of arm names. Unknown names throw ConfigError.
std::vector<AblationArm> ablation_plan(const std::string& plan, const RunConfig& base);
AblationArm make_arm(const std::string& name, const RunConfig& base);

// Trains every arm on the same data with the same seed and reports the
// validation accuracy after the last epoch.
std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms, const Dataset& data,
                                      const std::function<void(const AblationRow&)>& on_row = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace cstt
