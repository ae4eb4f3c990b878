#include "cstt/training.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "cstt/errors.hpp"
#include "cstt/heads.hpp"

namespace cstt {

void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, double lr, const AdamConfig& cfg, std::uint64_t t) {
  if (t == 0) throw ContractError("adam_step needs t >= 1");
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
    throw ContractError("adam_step: parameter, gradient and moment sizes differ");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
  }
}

Adam::Adam(const ParamStore& store, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& p : store.items()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(ParamStore& store, double lr) {
  const auto& items = store.items();
  if (items.size() != m_.size()) throw ContractError("optimizer was built for another model");
  ++t_;
  std::vector<double> zeros;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor p = items[i].tensor;
    std::span<const double> g = p.grad();
    if (g.empty()) {
      zeros.assign(p.numel(), 0.0);
      g = zeros;
    }
    adam_step(p.mutable_data(), g, m_[i], v_[i], lr, cfg_, t_);
  }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.lr;
  for (std::size_t e : cfg.decay_epochs)
    if (epoch >= e) lr /= cfg.decay_factor;
  return lr;
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.items())
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& p : store.items()) {
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= f;
    }
  }
  return norm;
}

namespace {

struct Counts {
  std::size_t ok_g = 0, n_g = 0, ok_a = 0, n_a = 0;
};

Counts count_correct(const Tensor& group_logits, const Tensor& individual_logits,
                     std::span<const int> group_labels, std::span<const int> action_labels) {
  const std::vector<int> g = argmax_rows(group_logits);
  const std::vector<int> a =
      argmax_rows(reshape(individual_logits, {action_labels.size(), individual_logits.dim(-1)}));
  if (g.size() != group_labels.size())
    throw ContractError("score: " + std::to_string(g.size()) + " group predictions for " +
                        std::to_string(group_labels.size()) + " labels");
  Counts c;
  c.n_g = g.size();
  c.n_a = a.size();
  for (std::size_t i = 0; i < g.size(); ++i) c.ok_g += g[i] == group_labels[i];
  for (std::size_t i = 0; i < a.size(); ++i) c.ok_a += a[i] == action_labels[i];
  return c;
}

double ratio(std::size_t a, std::size_t b) {
  return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
}

}  // namespace

Metrics score_logits(const Tensor& group_logits, const Tensor& individual_logits,
                     std::span<const int> group_labels, std::span<const int> action_labels) {
  const Counts c = count_correct(group_logits, individual_logits, group_labels, action_labels);
  Metrics m;
  m.clips = c.n_g;
  m.group_accuracy = ratio(c.ok_g, c.n_g);
  m.individual_accuracy = ratio(c.ok_a, c.n_a);
  return m;
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j{{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}};
  if (r.validated) {
    j["val_loss"] = r.val.loss;
    j["val_group_acc"] = r.val.group_accuracy;
    j["val_ind_acc"] = r.val.individual_accuracy;
  } else {
    for (const char* k : {"val_loss", "val_group_acc", "val_ind_acc"}) j[k] = nullptr;
  }
  return j.dump();
}

Metrics evaluate_model(const Model& model, const ClusterEngine& clusters, const Dataset& data,
                       const std::vector<std::size_t>& idx, std::size_t batch_size, double lambda,
                       std::size_t workers) {
  if (idx.empty()) throw ContractError("evaluate needs at least one clip");
  const std::size_t n_batches = (idx.size() + batch_size - 1) / batch_size;
  struct Partial {
    Counts counts;
    double loss = 0.0;  // summed over clips
  };
  std::vector<Partial> parts(n_batches);
  auto run = [&](std::size_t first, std::size_t last) {
    ClusterEngine engine = clusters;
    ForwardContext ctx;
    ctx.clusters = &engine;
    for (std::size_t b = first; b < last; ++b) {
      const auto begin = idx.begin() + static_cast<std::ptrdiff_t>(b * batch_size);
      const auto end = idx.begin() + static_cast<std::ptrdiff_t>(
                                         std::min(idx.size(), (b + 1) * batch_size));
      Batch batch = make_batch(data, std::vector<std::size_t>(begin, end));
      ModelOutput out = model.forward(batch, ctx);
      Partial& p = parts[b];
      p.counts = count_correct(out.group_logits, out.individual_logits, batch.group_labels,
                               batch.action_labels);
      p.loss = model.loss(out, batch, lambda).item() * static_cast<double>(batch.size());
    }
  };
  const std::size_t w = std::clamp<std::size_t>(workers, 1, n_batches);
  if (w == 1) {
    run(0, n_batches);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < w; ++k)
      pool.emplace_back(run, k * n_batches / w, (k + 1) * n_batches / w);
    for (auto& t : pool) t.join();
  }
  Counts sum;
  Metrics total;
  for (const auto& p : parts) {
    sum.ok_g += p.counts.ok_g;
    sum.n_g += p.counts.n_g;
    sum.ok_a += p.counts.ok_a;
    sum.n_a += p.counts.n_a;
    total.loss += p.loss;
  }
  total.clips = sum.n_g;
  total.loss /= static_cast<double>(sum.n_g);
  total.group_accuracy = ratio(sum.ok_g, sum.n_g);
  total.individual_accuracy = ratio(sum.ok_a, sum.n_a);
  return total;
}

Trainer::Trainer(const RunConfig& cfg)
    : cfg_(cfg), shuffle_(derive_seed(cfg.train.seed, "shuffle")) {
  cfg_.validate();
  model_ = std::make_unique<Model>(cfg_.model, derive_seed(cfg_.train.seed, "init"));
  adam_ = Adam(model_->params());
  clusters_ = std::make_unique<ClusterEngine>(cfg_.model.cluster_mode, cfg_.model.clusters,
                                              derive_seed(cfg_.train.seed, "kmeans"),
                                              cfg_.model.kmeans_iterations);
  dropout_ = std::make_unique<DropoutSource>(cfg_.model.dropout,
                                             derive_seed(cfg_.train.seed, "dropout"));
}

double Trainer::train_epoch(const Dataset& data, const std::vector<std::size_t>& train_idx) {
  if (train_idx.empty()) throw ContractError("training needs at least one clip");
  std::vector<std::size_t> order = train_idx;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_.index(i)]);

  const double lr = lr_at(epoch_, cfg_.train);
  const std::size_t bs = cfg_.train.batch_size;
  ForwardContext ctx;
  ctx.training = true;
  ctx.dropout = dropout_.get();
  ctx.clusters = clusters_.get();
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t stop = std::min(order.size(), start + bs);
    Batch batch = make_batch(data, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                            order.begin() + static_cast<std::ptrdiff_t>(stop)));
    model_->params().zero_grad();
    ModelOutput out = model_->forward(batch, ctx);
    Tensor loss = model_->loss(out, batch, cfg_.train.lambda);
    if (!std::isfinite(loss.item())) {
      const std::string op = first_nonfinite_op(loss);
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch_) + ", clip offset " +
                             std::to_string(start) + "; first non-finite op: " +
                             (op.empty() ? "<input>" : op),
                         op);
    }
    total += loss.item() * static_cast<double>(stop - start);
    backward(loss);
    if (cfg_.train.clip_norm > 0.0) clip_grad_norm(model_->params(), cfg_.train.clip_norm);
    adam_.step(model_->params(), lr);
  }
  return total / static_cast<double>(order.size());
}

Metrics Trainer::evaluate(const Dataset& data, const std::vector<std::size_t>& idx) const {
  return evaluate_model(*model_, *clusters_, data, idx, cfg_.train.batch_size, cfg_.train.lambda,
                        cfg_.train.workers);
}

std::vector<EpochRecord> Trainer::fit(const Dataset& data,
                                      const std::function<void(const EpochRecord&)>& on_epoch) {
  const auto train_idx = data.train_indices();
  const auto val_idx = data.val_indices();
  std::vector<EpochRecord> history;
  while (epoch_ < cfg_.train.epochs) {
    EpochRecord r;
    r.epoch = epoch_;
    r.lr = lr_at(epoch_, cfg_.train);
    r.train_loss = train_epoch(data, train_idx);
    ++epoch_;
    const std::size_t every = cfg_.train.eval_every;
    r.validated = epoch_ == cfg_.train.epochs || (every > 0 && epoch_ % every == 0);
    if (r.validated) {
      r.val = evaluate(data, val_idx);
      if (r.val.group_accuracy > best_acc_) {
        best_acc_ = r.val.group_accuracy;
        best_ = serialize();
      }
    }
    history.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  return history;
}

RunConfig gradcheck_config(const RunConfig& base) {
  RunConfig c = base;
  for (const auto& [key, value] :
       {std::pair{"frames", "2"}, {"individuals", "3"}, {"group_classes", "4"},
        {"action_classes", "3"}, {"scene_channels", "2"}, {"scene_height", "2"},
        {"scene_width", "2"}, {"width", "8"}, {"heads", "2"}, {"ffn_multiplier", "2"},
        {"scene_tokens", "2"}, {"clips", "2"}})
    set_key(c, key, value);
  c.model.blocks = std::min<std::size_t>(c.model.blocks, 1);
  c.model.clusters = std::min<std::size_t>(c.model.clusters, 2);
  c.validate();
  return c;
}

GradCheckReport check_model_gradients(const RunConfig& cfg, double tol) {
  cfg.validate();
  Model model(cfg.model, derive_seed(cfg.train.seed, "init"));
  // fresh init has zero biases and tiny queries; perturb so every path is live
  Rng rng(derive_seed(cfg.train.seed, "gradcheck"));
  for (const auto& p : model.params().items()) {
    Tensor t = p.tensor;
    for (double& x : t.mutable_data()) x += rng.uniform(-0.3, 0.3);
  }
  Dataset data = generate_dataset(cfg.data, 2);
  Batch batch = make_batch(data, {0});
  ClusterEngine engine(cfg.model.cluster_mode, cfg.model.clusters,
                       derive_seed(cfg.train.seed, "kmeans"), cfg.model.kmeans_iterations);
  ForwardContext ctx{false, nullptr, &engine};
  engine.set_freeze(ClusterEngine::Freeze::Record);
  model.forward(batch, ctx);
  auto objective = [&] {
    engine.set_freeze(ClusterEngine::Freeze::Replay);
    return model.loss(model.forward(batch, ctx), batch, cfg.train.lambda);
  };
  return grad_check(objective, model.params().items(), 1e-5, tol);
}

std::string export_clusters(const Model& model, const ClusterEngine& clusters,
                            const Dataset& data, const std::vector<std::size_t>& idx) {
  ClusterEngine engine = clusters;
  engine.set_capture(true);
  ForwardContext ctx{false, nullptr, &engine};
  nlohmann::ordered_json out{{"clusters", model.config().clusters},
                             {"mode", to_string(model.config().cluster_mode)},
                             {"scope", to_string(model.config().cluster_scope)},
                             {"clips", nlohmann::ordered_json::array()}};
  for (std::size_t i : idx) {
    if (i >= data.clips.size()) throw ContractError("clip index out of range");
    engine.clear_captured();
    model.forward(make_batch(data, {i}), ctx);
    nlohmann::ordered_json sites = nlohmann::ordered_json::array();
    for (const auto& rec : engine.captured())
      sites.push_back({{"site", rec.site}, {"group", rec.group}, {"labels", rec.labels}});
    out["clips"].push_back({{"index", i},
                            {"group_label", data.clips[i].group_label},
                            {"sites", std::move(sites)}});
  }
  return out.dump();
}

// ---- ablations -----------------------------------------------------------

AblationArm make_arm(const std::string& name, const RunConfig& base) {
  const auto eq = name.find('=');
  const std::string key = name.substr(0, eq);
  const std::string value = eq == std::string::npos ? "" : name.substr(eq + 1);
  AblationArm arm{name, base};
  auto& m = arm.config.model;
  try {
    if (key == "variant") {
      m.variant = parse_variant(value);
    } else if (key == "clusters") {
      set_key(arm.config, "clusters", value);
    } else if (key == "blocks") {
      set_key(arm.config, "blocks", value);
    } else if (key == "attention") {
      if (value == "none") {
        m.intra = m.inter = false;
      } else if (value == "intra") {
        m.intra = true;
        m.inter = false;
      } else if (value == "inter") {
        m.intra = false;
        m.inter = true;
      } else if (value == "both") {
        m.intra = m.inter = true;
      } else {
        throw ConfigError("bad value");
      }
    } else {
      throw ConfigError("bad key");
    }
    arm.config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("unknown ablation arm '" + name + "' (" + e.what() + ")");
  }
  return arm;
}

std::vector<AblationArm> ablation_plan(const std::string& plan, const RunConfig& base) {
  std::vector<std::string> names;
  if (plan == "variants") {
    names = {"variant=baseline", "variant=spatial", "variant=stacked", "variant=parallel",
             "variant=ours"};
  } else if (plan == "clusters") {
    names = {"clusters=1", "clusters=2", "clusters=3", "clusters=4", "clusters=6"};
  } else if (plan == "attention") {
    names = {"attention=none", "attention=intra", "attention=inter", "attention=both"};
  } else if (plan == "blocks") {
    names = {"blocks=0", "blocks=1", "blocks=2", "blocks=3", "blocks=4"};
  } else {
    std::stringstream ss(plan);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) names.push_back(item);
    if (names.empty()) throw ConfigError("empty ablation plan");
  }
  std::vector<AblationArm> arms;
  for (const auto& n : names) arms.push_back(make_arm(n, base));
  return arms;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms, const Dataset& data,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (const auto& arm : arms) {
    Trainer trainer(arm.config);
    auto history = trainer.fit(data);
    AblationRow row{arm.name, 0.0, 0.0, arm.config.train.seed};
    if (!history.empty()) {
      row.group_accuracy = history.back().val.group_accuracy;
      row.individual_accuracy = history.back().val.individual_accuracy;
    } else {
      Metrics m = trainer.evaluate(data, data.val_indices());
      row.group_accuracy = m.group_accuracy;
      row.individual_accuracy = m.individual_accuracy;
    }
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "arm,group_acc,ind_acc,seed\n";
  for (const auto& r : rows)
    os << r.arm << ',' << r.group_accuracy << ',' << r.individual_accuracy << ',' << r.seed
       << '\n';
  return os.str();
}

}  // namespace cstt
