#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cstt/model.hpp"

namespace cstt {

enum class TaskFamily { Interaction, Majority };
// raw: (x, y). fourier: (cos 2pi x, sin 2pi x, cos 2pi y, sin 2pi y).
enum class PositionEncoding { Raw, Fourier };

std::string to_string(TaskFamily f);
TaskFamily parse_task_family(const std::string& s);
std::string to_string(PositionEncoding e);
PositionEncoding parse_position_encoding(const std::string& s);

struct GeneratorConfig {
  std::size_t frames = 7;
  std::size_t individuals = 8;
  std::size_t input_dim = 8;  // position, 2 velocity, archetype embedding in the rest
  std::size_t group_classes = 8;
  std::size_t action_classes = 6;
  std::size_t scene_channels = 8;
  std::size_t scene_height = 4;
  std::size_t scene_width = 4;
  double noise_sigma = 0.02;
  TaskFamily family = TaskFamily::Interaction;
  std::uint64_t seed = 1;

  // trajectory knobs
  double step = 0.06;            // typical per-frame displacement
  double min_separation = 0.12;  // between agents that are not the meeting pair
  double meet_distance = 0.03;   // pair distance at the meeting frame
  double velocity_scale = 1.0;   // velocity features are displacement / step * scale
  double embedding_scale = 1.0;
  PositionEncoding position_encoding = PositionEncoding::Fourier;

  std::size_t position_width() const { return position_encoding == PositionEncoding::Raw ? 2 : 4; }
  std::size_t embedding_width() const { return input_dim - position_width() - 2; }

  std::size_t regions() const { return group_classes / 2; }
  std::size_t meeting_frame(std::size_t half) const {
    return half == 0 ? (frames - 1) / 2 : frames - 1;
  }
  void validate() const;
};

struct SyntheticSample {
  // All values are exactly representable as f32, so files round-trip exactly.
  std::vector<double> individuals;  // T x N x D_in
  std::vector<double> scene;        // T x C_g x H x W
  std::vector<double> boxes;        // T x N x 4, (x0, y0, x1, y1) in [0, 1]
  int group_label = 0;
  std::vector<int> action_labels;  // N
  std::uint64_t index = 0;
  std::uint64_t seed = 0;  // stream seed for this clip

  // latent script (interaction family)
  int pair_a = -1;
  int pair_b = -1;
  int half = -1;
  int pattern = -1;
};

// Position-independent description of the interaction label.
int interaction_label(const GeneratorConfig& cfg, int half, int pattern);
// Position encoded in a feature row (inverts the encoding, wraps to [0, 1)).
void decode_position(const GeneratorConfig& cfg, const double* features, double& x, double& y);
// Region of a point for the given number of regions (row-major grid cells).
int region_of(double x, double y, std::size_t regions);

SyntheticSample generate_clip(const GeneratorConfig& cfg, std::uint64_t index);

// Positions (T x N x 2) underlying a clip, before noise. Exposed for oracles.
std::vector<double> clip_positions(const GeneratorConfig& cfg, std::uint64_t index);

struct Dataset {
  GeneratorConfig config;
  std::vector<SyntheticSample> clips;

  std::vector<std::size_t> train_indices() const;  // even clip indices
  std::vector<std::size_t> val_indices() const;    // odd clip indices
};

Dataset generate_dataset(const GeneratorConfig& cfg, std::size_t n_clips);

// Little-endian container: "CSTT", version, T, N, D_in, G_cls, A_cls (u32),
// then per clip f32 individuals, f32 scene, f32 boxes, u16 y_g, u16 y_a[N].
// A JSON sidecar (<path>.json) carries the scene geometry and generator.
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);
std::string sidecar_path(const std::string& dataset_path);

// Assemble model input for the given clips.
Batch make_batch(const Dataset& data, const std::vector<std::size_t>& clip_indices);

}  // namespace cstt
