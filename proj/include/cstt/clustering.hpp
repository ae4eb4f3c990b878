#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cstt/tensor.hpp"

namespace cstt {

// Row-major N x D point set.
struct PointsView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t dim = 0;

  PointsView() = default;
  PointsView(std::span<const double> values, std::size_t n, std::size_t d);
  explicit PointsView(const Tensor& points);  // [N, D]

  const double* row(std::size_t i) const { return data.data() + i * dim; }
};

struct ClusterState {
  std::size_t clusters = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // clusters x dim
  std::vector<std::uint64_t> counts;
  std::uint64_t seed = 0;
  // init_centroids had to duplicate points because C > N.
  bool duplicated_points = false;

  const double* centroid(std::size_t c) const { return centroids.data() + c * dim; }
  double* centroid(std::size_t c) { return centroids.data() + c * dim; }
};

struct Assignment {
  std::vector<int> labels;
};

double squared_distance(const double* a, const double* b, std::size_t dim);

// Nearest centroid by squared Euclidean distance; ties go to the lower index.
Assignment assign(const PointsView& points, const ClusterState& state);

// k-means++ seeding driven by `seed`. C > N duplicates points and sets
// `duplicated_points`.
ClusterState init_centroids(const PointsView& points, std::size_t clusters, std::uint64_t seed);

// One full-batch Lloyd iteration. Empty clusters take the member of the
// largest cluster farthest from that cluster's centroid before the means are
// recomputed.
ClusterState lloyd_step(const PointsView& points, const ClusterState& state);

// Same assignment plus empty-cluster repair as lloyd_step, without moving the
// centroids. Labels every cluster when C <= N.
Assignment assign_with_repair(const PointsView& points, const ClusterState& state);

// Per-sample mini-batch update: labels come from the incoming centroids, then
// for each point in order count_c += 1 and m_c += (x - m_c) / count_c.
ClusterState minibatch_step(const PointsView& points, const ClusterState& state);

// Sum over points of the squared distance to the assigned centroid.
double wcss(const PointsView& points, const ClusterState& state, const Assignment& labels);
// Same, against the nearest centroid.
double wcss(const PointsView& points, const ClusterState& state);

// Stateless pipeline used inside the model: seed, `iterations` Lloyd steps,
// final repaired assignment.
Assignment cluster_points(const PointsView& points, std::size_t clusters, std::uint64_t seed,
                          std::size_t iterations);

enum class ClusterMode { Lloyd, MiniBatch };

// One clustered-attention call's labels, kept for export.
struct ClusterRecord {
  std::string site;
  std::size_t group = 0;
  std::vector<int> labels;
};

// Produces cluster labels for the model's clustered attention. Each call
// site (e.g. "block0.spatial") is clustered independently.
//
//  * Lloyd mode is stateless: every group is clustered from scratch with a
//    seed derived from the site, so labels depend only on the group's points.
//  * MiniBatch mode keeps persistent centroids per site. Training calls also
//    apply minibatch_step; the caller must serialize those calls.
//
// Record/Replay freeze the labels in call order (finite-difference checks).
class ClusterEngine {
 public:
  enum class Freeze { Off, Record, Replay };

  ClusterEngine(ClusterMode mode, std::size_t clusters, std::uint64_t seed,
                std::size_t lloyd_iterations = 5);

  ClusterMode mode() const { return mode_; }
  std::size_t clusters() const { return clusters_; }

  // points: [G, L, D] (detached values are used). Returns G label vectors.
  std::vector<std::vector<int>> assign_groups(const std::string& site, const Tensor& points,
                                              bool training);

  void set_freeze(Freeze f);
  // Replay externally supplied labels, one entry per assign_groups call.
  void set_replay(std::vector<std::vector<std::vector<int>>> calls);
  const std::vector<std::vector<std::vector<int>>>& recorded() const { return frozen_; }
  void set_capture(bool on) { capture_ = on; }
  const std::vector<ClusterRecord>& captured() const { return captured_; }
  void clear_captured() { captured_.clear(); }

  std::map<std::string, ClusterState>& states() { return states_; }
  const std::map<std::string, ClusterState>& states() const { return states_; }

 private:
  ClusterMode mode_;
  std::size_t clusters_;
  std::uint64_t seed_;
  std::size_t iterations_;
  std::map<std::string, ClusterState> states_;
  Freeze freeze_ = Freeze::Off;
  std::vector<std::vector<std::vector<int>>> frozen_;
  std::size_t cursor_ = 0;
  bool capture_ = false;
  std::vector<ClusterRecord> captured_;
};

}  // namespace cstt
