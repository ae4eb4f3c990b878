#include "cstt/model_config.hpp"

#include <array>
#include <utility>

#include "cstt/errors.hpp"

namespace cstt {

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<const char*, E>, N>& table,
             const char* what) {
  std::string options;
  for (const auto& [name, value] : table) {
    if (s == name) return value;
    options += options.empty() ? "" : ", ";
    options += name;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + s + "' (expected one of: " + options +
                    ")");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<const char*, E>, N>& table) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "?";
}

constexpr std::array<std::pair<const char*, Variant>, 5> kVariants{{
    {"baseline", Variant::Baseline},
    {"spatial", Variant::Spatial},
    {"stacked", Variant::Stacked},
    {"parallel", Variant::Parallel},
    {"ours", Variant::Ours},
}};
constexpr std::array<std::pair<const char*, ClusterScope>, 2> kScopes{{
    {"frame", ClusterScope::PerFrame},
    {"joint", ClusterScope::Joint},
}};
constexpr std::array<std::pair<const char*, Fusion>, 2> kFusions{{
    {"sum", Fusion::Sum},
    {"concat", Fusion::Concat},
}};
constexpr std::array<std::pair<const char*, GroupPooling>, 2> kGroupPool{{
    {"mean", GroupPooling::Mean},
    {"last", GroupPooling::Last},
}};
constexpr std::array<std::pair<const char*, IndividualPooling>, 2> kIndPool{{
    {"mean", IndividualPooling::Mean},
    {"center", IndividualPooling::Center},
}};
constexpr std::array<std::pair<const char*, ClusterMode>, 2> kModes{{
    {"lloyd", ClusterMode::Lloyd},
    {"minibatch", ClusterMode::MiniBatch},
}};

}  // namespace

std::string to_string(Variant v) { return enum_name(v, kVariants); }
std::string to_string(ClusterScope s) { return enum_name(s, kScopes); }
std::string to_string(Fusion f) { return enum_name(f, kFusions); }
std::string to_string(GroupPooling p) { return enum_name(p, kGroupPool); }
std::string to_string(IndividualPooling p) { return enum_name(p, kIndPool); }
std::string to_string(ClusterMode m) { return enum_name(m, kModes); }

Variant parse_variant(const std::string& s) { return parse_enum(s, kVariants, "variant"); }
ClusterScope parse_cluster_scope(const std::string& s) {
  return parse_enum(s, kScopes, "cluster scope");
}
Fusion parse_fusion(const std::string& s) { return parse_enum(s, kFusions, "fusion"); }
GroupPooling parse_group_pooling(const std::string& s) {
  return parse_enum(s, kGroupPool, "group pooling");
}
IndividualPooling parse_individual_pooling(const std::string& s) {
  return parse_enum(s, kIndPool, "individual pooling");
}
ClusterMode parse_cluster_mode(const std::string& s) {
  return parse_enum(s, kModes, "cluster mode");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(frames >= 1, "frames must be at least 1");
  require(individuals >= 1, "individuals must be at least 1");
  require(input_dim >= 1, "input_dim must be at least 1");
  require(group_classes >= 2, "group_classes must be at least 2");
  require(action_classes >= 2, "action_classes must be at least 2");
  require(scene_channels >= 1 && scene_height >= 1 && scene_width >= 1,
          "scene grid dimensions must be at least 1");
  require(width >= 1, "width must be at least 1");
  require(heads >= 1 && width % heads == 0,
          "width " + std::to_string(width) + " is not divisible by heads " +
              std::to_string(heads));
  require(ffn_multiplier >= 1, "ffn_multiplier must be at least 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(scene_tokens >= 1, "scene_tokens must be at least 1");
  require(clusters >= 1, "clusters must be at least 1");
  require(kmeans_iterations >= 1, "kmeans_iterations must be at least 1");
}

}  // namespace cstt
