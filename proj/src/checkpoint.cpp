#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cstt/errors.hpp"
#include "cstt/training.hpp"

namespace cstt {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'T', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_doubles(std::string& out, std::span<const double> v) {
  for (double x : v) put(out, x);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v{};
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(std::span<double> out) {
    for (double& x : out) x = get<double>();
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("truncated checkpoint");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Trainer::serialize() const {
  nlohmann::ordered_json header;
  header["config"] = nlohmann::ordered_json::parse(config_json(cfg_));
  header["epoch"] = epoch_;
  header["adam_steps"] = adam_.steps();
  header["best_group_acc"] = best_acc_;
  header["rng"] = {{"shuffle", shuffle_.state()}, {"dropout", dropout_->rng().state()}};
  auto& params = header["params"] = nlohmann::ordered_json::array();
  for (const auto& p : model_->params().items())
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  auto& sites = header["clusters"] = nlohmann::ordered_json::array();
  for (const auto& [site, st] : clusters_->states())
    sites.push_back({{"site", site},
                     {"clusters", st.clusters},
                     {"dim", st.dim},
                     {"seed", st.seed},
                     {"duplicated_points", st.duplicated_points}});
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  for (const auto& p : model_->params().items()) put_doubles(out, p.tensor.data());
  for (const auto& m : adam_.first_moments()) put_doubles(out, m);
  for (const auto& v : adam_.second_moments()) put_doubles(out, v);
  for (const auto& [site, st] : clusters_->states()) {
    put_doubles(out, st.centroids);
    for (std::uint64_t c : st.counts) put(out, c);
  }
  return out;
}

Trainer Trainer::deserialize(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw IoError("not a CSTT checkpoint (bad magic)");
  if (const auto v = in.get<std::uint32_t>(); v != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(v));
  const auto len = in.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take(len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }

  try {
    Trainer t(config_from_json(header.at("config").dump()));
    t.epoch_ = header.at("epoch");
    t.adam_.set_steps(header.at("adam_steps"));
    t.best_acc_ = header.at("best_group_acc");
    t.shuffle_.set_state(header.at("rng").at("shuffle"));
    t.dropout_->rng().set_state(header.at("rng").at("dropout"));

    const auto& items = t.model_->params().items();
    const auto& params = header.at("params");
    if (params.size() != items.size())
      throw IoError("checkpoint holds " + std::to_string(params.size()) +
                    " parameters, model expects " + std::to_string(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (params[i].at("name") != items[i].name ||
          params[i].at("shape").get<Shape>() != items[i].tensor.shape())
        throw IoError("checkpoint parameter '" + params[i].at("name").get<std::string>() +
                      "' does not match model parameter '" + items[i].name + "'");
    }
    for (const auto& p : items) {
      Tensor tensor = p.tensor;
      in.doubles(tensor.mutable_data());
    }
    for (auto& m : t.adam_.first_moments()) in.doubles(m);
    for (auto& v : t.adam_.second_moments()) in.doubles(v);
    for (const auto& s : header.at("clusters")) {
      ClusterState st;
      st.clusters = s.at("clusters");
      st.dim = s.at("dim");
      st.seed = s.at("seed");
      st.duplicated_points = s.at("duplicated_points");
      st.centroids.resize(st.clusters * st.dim);
      in.doubles(st.centroids);
      st.counts.resize(st.clusters);
      for (auto& c : st.counts) c = in.get<std::uint64_t>();
      t.clusters_->states()[s.at("site").get<std::string>()] = std::move(st);
    }
    if (!in.done()) throw IoError("trailing bytes in checkpoint");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("incomplete checkpoint header: ") + e.what());
  }
}

void Trainer::save(const std::string& path) const {
  const std::string bytes = serialize();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os || !os.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw IoError("cannot write checkpoint: " + path);
}

Trainer Trainer::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

}  // namespace cstt
