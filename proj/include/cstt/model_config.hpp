#pragma once

#include <cstddef>
#include <string>

#include "cstt/clustering.hpp"

namespace cstt {

enum class Variant { Baseline, Spatial, Stacked, Parallel, Ours };
enum class ClusterScope { PerFrame, Joint };
enum class Fusion { Sum, Concat };
enum class GroupPooling { Mean, Last };
enum class IndividualPooling { Mean, Center };

std::string to_string(Variant v);
std::string to_string(ClusterScope s);
std::string to_string(Fusion f);
std::string to_string(GroupPooling p);
std::string to_string(IndividualPooling p);
std::string to_string(ClusterMode m);

// Parsers throw ConfigError naming the accepted values.
Variant parse_variant(const std::string& s);
ClusterScope parse_cluster_scope(const std::string& s);
Fusion parse_fusion(const std::string& s);
GroupPooling parse_group_pooling(const std::string& s);
IndividualPooling parse_individual_pooling(const std::string& s);
ClusterMode parse_cluster_mode(const std::string& s);

struct ModelConfig {
  // clip geometry
  std::size_t frames = 7;       // T
  std::size_t individuals = 8;  // N
  std::size_t input_dim = 8;    // D_in
  std::size_t group_classes = 8;
  std::size_t action_classes = 6;
  std::size_t scene_channels = 8;
  std::size_t scene_height = 4;
  std::size_t scene_width = 4;

  // transformer
  std::size_t width = 32;  // D
  std::size_t heads = 4;
  std::size_t ffn_multiplier = 4;
  std::size_t blocks = 2;
  double dropout = 0.1;
  bool decoder_self_attention = false;
  Variant variant = Variant::Ours;

  // group representation generator
  bool grg = true;
  std::size_t scene_tokens = 8;  // K
  Fusion grg_fusion = Fusion::Sum;

  // clustered attention
  std::size_t clusters = 4;
  bool intra = true;
  bool inter = true;
  ClusterMode cluster_mode = ClusterMode::Lloyd;
  std::size_t kmeans_iterations = 5;
  ClusterScope cluster_scope = ClusterScope::PerFrame;
  bool cluster_temporal = false;

  // heads
  GroupPooling group_pooling = GroupPooling::Mean;
  IndividualPooling individual_pooling = IndividualPooling::Mean;

  std::size_t ffn_width() const { return ffn_multiplier * width; }
  std::size_t scene_pixels() const { return scene_height * scene_width; }
  // C = 1 is the plain spatial-temporal transformer.
  bool clustering_enabled() const { return clusters > 1 && (intra || inter); }
  bool uses_blocks() const { return variant != Variant::Baseline && blocks > 0; }

  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

}  // namespace cstt
