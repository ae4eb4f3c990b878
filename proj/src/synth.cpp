#include "cstt/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "cstt/errors.hpp"
#include "cstt/random.hpp"

namespace cstt {

namespace {

constexpr double kLo = 0.02;
constexpr double kHi = 0.98;
constexpr double kBoxHalf = 0.025;
constexpr double kSceneSigma = 0.15;
constexpr int kAttempts = 64;
constexpr std::uint32_t kVersion = 1;

struct Vec2 {
  double x = 0.0, y = 0.0;
};

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

double reflect(double v) {
  while (v < kLo || v > kHi) v = v < kLo ? 2 * kLo - v : 2 * kHi - v;
  return v;
}

bool in_bounds(Vec2 p) { return p.x >= kLo && p.x <= kHi && p.y >= kLo && p.y <= kHi; }

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::pair<std::size_t, std::size_t> region_grid(std::size_t regions) {
  std::size_t rows = static_cast<std::size_t>(std::sqrt(static_cast<double>(regions)));
  while (rows > 1 && regions % rows != 0) --rows;
  rows = std::max<std::size_t>(rows, 1);
  return {rows, regions / rows};
}

// Per-frame speed of an archetype: spread over [0.7, 1.3] x step.
double archetype_speed(const GeneratorConfig& cfg, int a) {
  const double span = cfg.action_classes > 1
                          ? static_cast<double>(a) / static_cast<double>(cfg.action_classes - 1)
                          : 0.5;
  return cfg.step * (0.7 + 0.6 * span);
}

struct Script {
  std::vector<Vec2> pos;  // T x N
  std::vector<int> archetype;
  int label = 0;
  int pair_a = -1, pair_b = -1, half = -1, pattern = -1;
};

class Walker {
 public:
  Walker(const GeneratorConfig& cfg, Script& s, Rng& rng) : cfg_(cfg), s_(s), rng_(rng) {}

  Vec2& at(std::size_t t, std::size_t n) { return s_.pos[t * cfg_.individuals + n]; }

  // Distance to the nearest placed agent at frame t.
  double clearance(std::size_t t, Vec2 p, std::size_t n, const std::vector<bool>& placed) {
    double best = 1e9;
    for (std::size_t m = 0; m < cfg_.individuals; ++m)
      if (m != n && placed[m]) best = std::min(best, dist(at(t, m), p));
    return best;
  }

  // Rejection sampling; if every try is crowded, keep the roomiest candidate.
  template <typename Propose>
  Vec2 place(std::size_t t, std::size_t n, const std::vector<bool>& placed, Propose propose) {
    Vec2 best;
    double room = -1.0;
    for (int k = 0; k < kAttempts; ++k) {
      const Vec2 p = propose(k);
      const double r = clearance(t, p, n, placed);
      if (r >= cfg_.min_separation) return p;
      if (r > room) {
        room = r;
        best = p;
      }
    }
    return best;
  }

  Vec2 spawn(std::size_t t, std::size_t n, const std::vector<bool>& placed) {
    return place(t, n, placed,
                 [&](int) { return Vec2{rng_.uniform(0.05, 0.95), rng_.uniform(0.05, 0.95)}; });
  }

  Vec2 step_from(Vec2 from, std::size_t t, std::size_t n, const std::vector<bool>& placed) {
    const double speed = archetype_speed(cfg_, s_.archetype[n]);
    return place(t, n, placed, [&](int k) {
      const double theta = rng_.uniform(0.0, 2.0 * std::numbers::pi);
      // widen the stride range once the usual strides keep colliding
      const double len = k < kAttempts / 2 ? speed * rng_.uniform(0.8, 1.2)
                                           : speed * rng_.uniform(0.0, 2.0);
      return Vec2{reflect(from.x + len * std::cos(theta)), reflect(from.y + len * std::sin(theta))};
    });
  }

 private:
  const GeneratorConfig& cfg_;
  Script& s_;
  Rng& rng_;
};

// Places the meeting pair for frames [from, T) on a straight line through the
// meeting point; returns false if any position leaves the arena.
bool place_pair(const GeneratorConfig& cfg, Script& s, Vec2 c, double theta, std::size_t from) {
  const std::size_t n = cfg.individuals;
  const std::size_t m = cfg.meeting_frame(static_cast<std::size_t>(s.half));
  const Vec2 u{std::cos(theta), std::sin(theta)};
  const double va = archetype_speed(cfg, s.archetype[static_cast<std::size_t>(s.pair_a)]);
  const double vb = archetype_speed(cfg, s.archetype[static_cast<std::size_t>(s.pair_b)]);
  for (std::size_t t = from; t < cfg.frames; ++t) {
    const double k = std::abs(static_cast<double>(t) - static_cast<double>(m));
    const double ra = 0.5 * cfg.meet_distance + va * k;
    const double rb = 0.5 * cfg.meet_distance + vb * k;
    const Vec2 a{c.x - u.x * ra, c.y - u.y * ra};
    const Vec2 b{c.x + u.x * rb, c.y + u.y * rb};
    if (!in_bounds(a) || !in_bounds(b)) return false;
    s.pos[t * n + static_cast<std::size_t>(s.pair_a)] = a;
    s.pos[t * n + static_cast<std::size_t>(s.pair_b)] = b;
  }
  return true;
}

Script make_script(const GeneratorConfig& cfg, std::uint64_t index) {
  const std::size_t T = cfg.frames, N = cfg.individuals, A = cfg.action_classes;
  Rng rng(derive_seed(cfg.seed, "clip", index));
  Script s;
  s.pos.assign(T * N, Vec2{});
  s.archetype.resize(N);
  std::vector<bool> placed(N, false);
  Walker walk(cfg, s, rng);

  if (cfg.family == TaskFamily::Majority) {
    const int dominant = static_cast<int>(rng.index(A));
    for (auto& a : s.archetype)
      a = rng.bernoulli(0.5) ? dominant : static_cast<int>(rng.index(A));
    std::vector<int> counts(A, 0);
    for (int a : s.archetype) ++counts[static_cast<std::size_t>(a)];
    s.label = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  } else {
    for (auto& a : s.archetype) a = static_cast<int>(rng.index(A));
    const std::size_t R = cfg.regions();
    s.label = static_cast<int>(rng.index(cfg.group_classes));
    s.half = s.label / static_cast<int>(R);
    s.pattern = s.label % static_cast<int>(R);
    s.pair_a = static_cast<int>(rng.index(N));
    s.pair_b = static_cast<int>(rng.index(N - 1));
    if (s.pair_b >= s.pair_a) ++s.pair_b;

    const auto [rows, cols] = region_grid(R);
    const double cw = 1.0 / static_cast<double>(cols), ch = 1.0 / static_cast<double>(rows);
    const double x0 = static_cast<double>(static_cast<std::size_t>(s.pattern) % cols) * cw;
    const double y0 = static_cast<double>(static_cast<std::size_t>(s.pattern) / cols) * ch;
    const double mx = 0.2 * cw, my = 0.2 * ch;
    const std::size_t from = s.half == 0 ? 0 : (T - 1) / 2;
    bool ok = false;
    for (int k = 0; k < 1000 && !ok; ++k) {
      const Vec2 c{rng.uniform(x0 + mx, x0 + cw - mx), rng.uniform(y0 + my, y0 + ch - my)};
      ok = place_pair(cfg, s, c, rng.uniform(0.0, 2.0 * std::numbers::pi), from);
    }
    if (!ok) throw ContractError("could not place the meeting pair; step is too large");
    const auto a = static_cast<std::size_t>(s.pair_a), b = static_cast<std::size_t>(s.pair_b);
    // before the approach the pair wanders; walk backwards from the approach start
    for (std::size_t t = from; t-- > 0;) {
      std::vector<bool> mask(N, false);
      s.pos[t * N + a] = walk.step_from(s.pos[(t + 1) * N + a], t, a, mask);
      mask[a] = true;
      s.pos[t * N + b] = walk.step_from(s.pos[(t + 1) * N + b], t, b, mask);
    }
    placed[a] = placed[b] = true;
  }

  // free walkers advance frame by frame so each step sees everyone already there
  const std::vector<bool> fixed = placed;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<bool> here = fixed;
    for (std::size_t n = 0; n < N; ++n) {
      if (fixed[n]) continue;
      s.pos[t * N + n] = t == 0 ? walk.spawn(0, n, here)
                                : walk.step_from(s.pos[(t - 1) * N + n], t, n, here);
      here[n] = true;
    }
  }
  return s;
}

// Unit vectors: evenly spread angles in the first two dimensions plus a
// seeded random tail.
std::vector<double> archetype_table(const GeneratorConfig& cfg) {
  const std::size_t e = cfg.embedding_width(), A = cfg.action_classes;
  std::vector<double> table(A * e);
  Rng rng(derive_seed(cfg.seed, "archetypes"));
  for (std::size_t a = 0; a < A; ++a) {
    double* row = table.data() + a * e;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(a) / static_cast<double>(A);
    for (std::size_t j = 0; j < e; ++j) row[j] = j < 2 ? 0.0 : 0.5 * rng.normal();
    row[0] = std::cos(angle);
    if (e > 1) row[1] = std::sin(angle);
    double norm = 0.0;
    for (std::size_t j = 0; j < e; ++j) norm += row[j] * row[j];
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < e; ++j) row[j] *= cfg.embedding_scale / norm;
  }
  return table;
}

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("truncated dataset file: " + path);
  return v;
}

void put_f32(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) put(os, static_cast<float>(x));
}

std::vector<double> get_f32(std::istream& is, std::size_t n, const std::string& path) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(get<float>(is, path));
  return v;
}

nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"frames", c.frames},
          {"individuals", c.individuals},
          {"input_dim", c.input_dim},
          {"group_classes", c.group_classes},
          {"action_classes", c.action_classes},
          {"scene_channels", c.scene_channels},
          {"scene_height", c.scene_height},
          {"scene_width", c.scene_width},
          {"noise_sigma", c.noise_sigma},
          {"family", to_string(c.family)},
          {"seed", c.seed},
          {"step", c.step},
          {"min_separation", c.min_separation},
          {"meet_distance", c.meet_distance},
          {"velocity_scale", c.velocity_scale},
          {"embedding_scale", c.embedding_scale},
          {"position_encoding", to_string(c.position_encoding)}};
}

GeneratorConfig from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.frames = j.at("frames");
  c.individuals = j.at("individuals");
  c.input_dim = j.at("input_dim");
  c.group_classes = j.at("group_classes");
  c.action_classes = j.at("action_classes");
  c.scene_channels = j.at("scene_channels");
  c.scene_height = j.at("scene_height");
  c.scene_width = j.at("scene_width");
  c.noise_sigma = j.at("noise_sigma");
  c.family = parse_task_family(j.at("family"));
  c.seed = j.at("seed");
  c.step = j.at("step");
  c.min_separation = j.at("min_separation");
  c.meet_distance = j.at("meet_distance");
  c.velocity_scale = j.at("velocity_scale");
  c.embedding_scale = j.at("embedding_scale");
  c.position_encoding = parse_position_encoding(j.at("position_encoding"));
  return c;
}

}  // namespace

std::string to_string(TaskFamily f) {
  return f == TaskFamily::Interaction ? "interaction" : "majority";
}

std::string to_string(PositionEncoding e) {
  return e == PositionEncoding::Raw ? "raw" : "fourier";
}

PositionEncoding parse_position_encoding(const std::string& s) {
  if (s == "raw") return PositionEncoding::Raw;
  if (s == "fourier") return PositionEncoding::Fourier;
  throw ConfigError("unknown position encoding '" + s + "' (expected one of: raw, fourier)");
}

void decode_position(const GeneratorConfig& cfg, const double* f, double& x, double& y) {
  if (cfg.position_encoding == PositionEncoding::Raw) {
    x = f[0];
    y = f[1];
    return;
  }
  const double tau = 2.0 * std::numbers::pi;
  x = std::atan2(f[1], f[0]) / tau;
  y = std::atan2(f[3], f[2]) / tau;
  if (x < 0.0) x += 1.0;
  if (y < 0.0) y += 1.0;
}

TaskFamily parse_task_family(const std::string& s) {
  if (s == "interaction") return TaskFamily::Interaction;
  if (s == "majority") return TaskFamily::Majority;
  throw ConfigError("unknown task family '" + s + "' (expected one of: interaction, majority)");
}

void GeneratorConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(frames >= 2, "frames must be at least 2");
  require(individuals >= 2, "individuals must be at least 2");
  require(input_dim >= position_width() + 3,
          "input_dim must leave room for position, velocity and an archetype embedding");
  require(action_classes >= 1, "action_classes must be at least 1");
  require(scene_channels >= 1 && scene_height >= 1 && scene_width >= 1,
          "scene grid dimensions must be at least 1");
  require(noise_sigma >= 0.0, "noise_sigma must be non-negative");
  require(step > 0.0 && step < 0.2, "step must be in (0, 0.2)");
  require(min_separation >= 0.0 && meet_distance >= 0.0, "distances must be non-negative");
  require(group_classes <= 65535 && action_classes <= 65535, "class counts must fit in u16");
  if (family == TaskFamily::Interaction)
    require(group_classes >= 2 && group_classes % 2 == 0,
            "interaction family needs an even group_classes >= 2");
  else
    require(group_classes >= action_classes,
            "majority family needs group_classes >= action_classes");
}

int interaction_label(const GeneratorConfig& cfg, int half, int pattern) {
  return half * static_cast<int>(cfg.regions()) + pattern;
}

int region_of(double x, double y, std::size_t regions) {
  const auto [rows, cols] = region_grid(regions);
  const auto cell = [](double v, std::size_t k) {
    return std::min(static_cast<std::size_t>(std::max(v, 0.0) * static_cast<double>(k)), k - 1);
  };
  return static_cast<int>(cell(y, rows) * cols + cell(x, cols));
}

std::vector<double> clip_positions(const GeneratorConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Script s = make_script(cfg, index);
  std::vector<double> out;
  out.reserve(s.pos.size() * 2);
  for (Vec2 p : s.pos) {
    out.push_back(p.x);
    out.push_back(p.y);
  }
  return out;
}

SyntheticSample generate_clip(const GeneratorConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const std::size_t T = cfg.frames, N = cfg.individuals, D = cfg.input_dim;
  const std::size_t C = cfg.scene_channels, H = cfg.scene_height, W = cfg.scene_width;
  const std::size_t E = cfg.embedding_width(), V = cfg.position_width();
  constexpr double kTau = 2.0 * std::numbers::pi;
  Script s = make_script(cfg, index);
  const std::vector<double> table = archetype_table(cfg);
  Rng noise(derive_seed(cfg.seed, "noise", index));

  SyntheticSample out;
  out.index = index;
  out.seed = derive_seed(cfg.seed, "clip", index);
  out.group_label = s.label;
  out.action_labels = s.archetype;
  out.pair_a = s.pair_a;
  out.pair_b = s.pair_b;
  out.half = s.half;
  out.pattern = s.pattern;

  out.individuals.resize(T * N * D);
  out.boxes.resize(T * N * 4);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n) {
      const Vec2 p = s.pos[t * N + n];
      const Vec2 prev = t > 0 ? s.pos[(t - 1) * N + n] : p;
      const Vec2 next = t > 0 ? p : s.pos[N + n];
      const double* emb = table.data() + static_cast<std::size_t>(s.archetype[n]) * E;
      double* f = out.individuals.data() + (t * N + n) * D;
      if (cfg.position_encoding == PositionEncoding::Raw) {
        f[0] = p.x;
        f[1] = p.y;
      } else {
        f[0] = std::cos(kTau * p.x);
        f[1] = std::sin(kTau * p.x);
        f[2] = std::cos(kTau * p.y);
        f[3] = std::sin(kTau * p.y);
      }
      f[V] = (next.x - prev.x) / cfg.step * cfg.velocity_scale;
      f[V + 1] = (next.y - prev.y) / cfg.step * cfg.velocity_scale;
      for (std::size_t j = 0; j < E; ++j) f[V + 2 + j] = emb[j];
      for (std::size_t j = 0; j < D; ++j) f[j] = f32(f[j] + cfg.noise_sigma * noise.normal());
      double* b = out.boxes.data() + (t * N + n) * 4;
      b[0] = f32(std::clamp(p.x - kBoxHalf, 0.0, 1.0));
      b[1] = f32(std::clamp(p.y - kBoxHalf, 0.0, 1.0));
      b[2] = f32(std::clamp(p.x + kBoxHalf, 0.0, 1.0));
      b[3] = f32(std::clamp(p.y + kBoxHalf, 0.0, 1.0));
    }

  // channel 0: everyone; other channels: agents of the archetypes mapped there
  out.scene.assign(T * C * H * W, 0.0);
  const double inv = 1.0 / (2.0 * kSceneSigma * kSceneSigma);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n) {
      const Vec2 p = s.pos[t * N + n];
      const std::size_t ch =
          C > 1 ? 1 + static_cast<std::size_t>(s.archetype[n]) % (C - 1) : 0;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double cy = (static_cast<double>(i) + 0.5) / static_cast<double>(H);
          const double cx = (static_cast<double>(j) + 0.5) / static_cast<double>(W);
          const double g = std::exp(-((p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy)) * inv);
          out.scene[((t * C) * H + i) * W + j] += g;
          if (ch != 0) out.scene[((t * C + ch) * H + i) * W + j] += g;
        }
    }
  for (double& v : out.scene) v = f32(v);
  return out;
}

std::vector<std::size_t> Dataset::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips.size(); i += 2) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::val_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < clips.size(); i += 2) out.push_back(i);
  return out;
}

Dataset generate_dataset(const GeneratorConfig& cfg, std::size_t n_clips) {
  cfg.validate();
  if (n_clips < 2) throw ContractError("a dataset needs at least 2 clips");
  Dataset d;
  d.config = cfg;
  d.clips.reserve(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) d.clips.push_back(generate_clip(cfg, i));
  return d;
}

std::string sidecar_path(const std::string& dataset_path) { return dataset_path + ".json"; }

void write_dataset(const std::string& path, const Dataset& data) {
  const auto& c = data.config;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write dataset: " + path);
  os.write("CSTT", 4);
  put<std::uint32_t>(os, kVersion);
  for (std::size_t v : {c.frames, c.individuals, c.input_dim, c.group_classes, c.action_classes})
    put(os, static_cast<std::uint32_t>(v));
  for (const auto& s : data.clips) {
    put_f32(os, s.individuals);
    put_f32(os, s.scene);
    put_f32(os, s.boxes);
    put(os, static_cast<std::uint16_t>(s.group_label));
    for (int a : s.action_labels) put(os, static_cast<std::uint16_t>(a));
  }
  if (!os) throw IoError("failed while writing dataset: " + path);

  nlohmann::json meta{{"format", "CSTT"},
                      {"version", kVersion},
                      {"clips", data.clips.size()},
                      {"scene", {{"channels", c.scene_channels},
                                 {"height", c.scene_height},
                                 {"width", c.scene_width}}},
                      {"split", "train = even clip index, val = odd clip index"},
                      {"generator", to_json(c)}};
  std::ofstream js(sidecar_path(path), std::ios::trunc);
  if (!js) throw IoError("cannot write dataset sidecar: " + sidecar_path(path));
  js << meta.dump(2) << '\n';
  if (!js) throw IoError("failed while writing dataset sidecar: " + sidecar_path(path));
}

Dataset read_dataset(const std::string& path) {
  std::ifstream js(sidecar_path(path));
  if (!js) throw IoError("cannot read dataset sidecar: " + sidecar_path(path));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset sidecar " + sidecar_path(path) + ": " + e.what());
  }
  Dataset d;
  std::size_t n = 0;
  try {
    d.config = from_json(meta.at("generator"));
    n = meta.at("clips");
  } catch (const nlohmann::json::exception& e) {
    throw IoError("incomplete dataset sidecar " + sidecar_path(path) + ": " + e.what());
  }
  const auto& c = d.config;

  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read dataset: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CSTT", 4) != 0)
    throw IoError("not a CSTT dataset (bad magic): " + path);
  if (get<std::uint32_t>(is, path) != kVersion)
    throw IoError("unsupported dataset version: " + path);
  for (std::size_t v : {c.frames, c.individuals, c.input_dim, c.group_classes, c.action_classes})
    if (get<std::uint32_t>(is, path) != v)
      throw IoError("dataset header disagrees with its sidecar: " + path);

  const std::size_t T = c.frames, N = c.individuals;
  d.clips.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = d.clips[i];
    s.index = i;
    s.seed = derive_seed(c.seed, "clip", i);
    s.individuals = get_f32(is, T * N * c.input_dim, path);
    s.scene = get_f32(is, T * c.scene_channels * c.scene_height * c.scene_width, path);
    s.boxes = get_f32(is, T * N * 4, path);
    s.group_label = get<std::uint16_t>(is, path);
    s.action_labels.resize(N);
    for (auto& a : s.action_labels) a = get<std::uint16_t>(is, path);
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes in dataset: " + path);
  return d;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& clip_indices) {
  const auto& c = data.config;
  const std::size_t B = clip_indices.size(), T = c.frames, N = c.individuals;
  const std::size_t P = c.scene_height * c.scene_width;
  if (B == 0) throw ContractError("make_batch needs at least one clip");
  std::vector<double> ind, scene;
  ind.reserve(B * T * N * c.input_dim);
  scene.reserve(B * T * c.scene_channels * P);
  Batch b;
  for (std::size_t i : clip_indices) {
    if (i >= data.clips.size())
      throw ContractError("clip index " + std::to_string(i) + " out of range");
    const auto& s = data.clips[i];
    ind.insert(ind.end(), s.individuals.begin(), s.individuals.end());
    scene.insert(scene.end(), s.scene.begin(), s.scene.end());
    b.group_labels.push_back(s.group_label);
    b.action_labels.insert(b.action_labels.end(), s.action_labels.begin(), s.action_labels.end());
  }
  b.individuals = Tensor::from({B, T, N, c.input_dim}, std::move(ind));
  b.scene = Tensor::from({B, T, c.scene_channels, P}, std::move(scene));
  return b;
}

}  // namespace cstt
