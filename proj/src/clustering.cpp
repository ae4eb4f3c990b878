#include "cstt/clustering.hpp"

#include <algorithm>
#include <limits>

#include "cstt/random.hpp"

namespace cstt {

PointsView::PointsView(std::span<const double> values, std::size_t n, std::size_t d)
    : data(values), rows(n), dim(d) {
  if (values.size() != n * d) throw ShapeError("PointsView: value count does not match N x D");
}

PointsView::PointsView(const Tensor& points) {
  if (points.rank() != 2) {
    throw ShapeError("clustering expects [N,D] points, got " + to_string(points.shape()));
  }
  data = points.data();
  rows = points.dim(0);
  dim = points.dim(1);
}

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

namespace {

void check_compatible(const PointsView& points, const ClusterState& state) {
  if (points.rows == 0) throw ContractError("clustering: no points");
  if (state.clusters == 0) throw ContractError("clustering: need at least one cluster");
  if (points.dim != state.dim) {
    throw ShapeError("clustering: points have width " + std::to_string(points.dim) +
                     ", centroids " + std::to_string(state.dim));
  }
}

int nearest(const double* x, const ClusterState& state) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < state.clusters; ++c) {
    const double d = squared_distance(x, state.centroid(c), state.dim);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

void repair_empty(const PointsView& points, const ClusterState& state, Assignment& a) {
  std::vector<std::size_t> sizes(state.clusters, 0);
  for (int l : a.labels) ++sizes[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < state.clusters; ++c) {
    if (sizes[c] != 0) continue;
    std::size_t donor = 0;
    for (std::size_t k = 1; k < state.clusters; ++k) {
      if (sizes[k] > sizes[donor]) donor = k;
    }
    if (sizes[donor] < 2) return;  // C > N: nothing left to steal
    std::size_t pick = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < points.rows; ++i) {
      if (static_cast<std::size_t>(a.labels[i]) != donor) continue;
      const double d = squared_distance(points.row(i), state.centroid(donor), state.dim);
      if (d > far) {
        far = d;
        pick = i;
      }
    }
    a.labels[pick] = static_cast<int>(c);
    --sizes[donor];
    ++sizes[c];
  }
}

}  // namespace

Assignment assign(const PointsView& points, const ClusterState& state) {
  check_compatible(points, state);
  Assignment a;
  a.labels.resize(points.rows);
  for (std::size_t i = 0; i < points.rows; ++i) a.labels[i] = nearest(points.row(i), state);
  return a;
}

Assignment assign_with_repair(const PointsView& points, const ClusterState& state) {
  Assignment a = assign(points, state);
  repair_empty(points, state, a);
  return a;
}

ClusterState init_centroids(const PointsView& points, std::size_t clusters, std::uint64_t seed) {
  if (points.rows == 0) throw ContractError("init_centroids: no points");
  if (clusters == 0) throw ContractError("init_centroids: need at least one cluster");
  ClusterState s;
  s.clusters = clusters;
  s.dim = points.dim;
  s.seed = seed;
  s.centroids.assign(clusters * points.dim, 0.0);
  s.counts.assign(clusters, 0);
  Rng rng(seed);

  std::vector<std::size_t> chosen;
  chosen.push_back(rng.index(points.rows));
  std::vector<double> d2(points.rows);
  const std::size_t distinct_target = std::min(clusters, points.rows);
  while (chosen.size() < distinct_target) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) {
        best = std::min(best, squared_distance(points.row(i), points.row(c), points.dim));
      }
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      pick = points.rows - 1;
      for (std::size_t i = 0; i < points.rows; ++i) {
        if (d2[i] <= 0.0) continue;
        if (r < d2[i]) {
          pick = i;
          break;
        }
        r -= d2[i];
      }
      // Rounding can leave r past the end; land on the last candidate.
      if (d2[pick] <= 0.0) {
        for (std::size_t i = points.rows; i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      pick = rng.index(points.rows);  // all remaining points coincide
    }
    chosen.push_back(pick);
  }
  if (clusters > points.rows) {
    s.duplicated_points = true;
    for (std::size_t c = chosen.size(); c < clusters; ++c) chosen.push_back(chosen[c % points.rows]);
  }
  for (std::size_t c = 0; c < clusters; ++c) {
    std::copy_n(points.row(chosen[c]), points.dim, s.centroid(c));
  }
  return s;
}

ClusterState lloyd_step(const PointsView& points, const ClusterState& state) {
  Assignment a = assign_with_repair(points, state);
  ClusterState next = state;
  std::vector<double> sums(state.clusters * state.dim, 0.0);
  std::vector<std::size_t> sizes(state.clusters, 0);
  for (std::size_t i = 0; i < points.rows; ++i) {
    const std::size_t c = static_cast<std::size_t>(a.labels[i]);
    ++sizes[c];
    for (std::size_t j = 0; j < state.dim; ++j) sums[c * state.dim + j] += points.row(i)[j];
  }
  for (std::size_t c = 0; c < state.clusters; ++c) {
    if (sizes[c] == 0) continue;  // only possible when C > N
    for (std::size_t j = 0; j < state.dim; ++j) {
      next.centroid(c)[j] = sums[c * state.dim + j] / static_cast<double>(sizes[c]);
    }
  }
  return next;
}

ClusterState minibatch_step(const PointsView& points, const ClusterState& state) {
  Assignment a = assign(points, state);
  ClusterState next = state;
  for (std::size_t i = 0; i < points.rows; ++i) {
    const std::size_t c = static_cast<std::size_t>(a.labels[i]);
    const double eta = 1.0 / static_cast<double>(++next.counts[c]);
    double* m = next.centroid(c);
    for (std::size_t j = 0; j < state.dim; ++j) m[j] += eta * (points.row(i)[j] - m[j]);
  }
  return next;
}

double wcss(const PointsView& points, const ClusterState& state, const Assignment& labels) {
  check_compatible(points, state);
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    total += squared_distance(points.row(i),
                              state.centroid(static_cast<std::size_t>(labels.labels[i])), state.dim);
  }
  return total;
}

double wcss(const PointsView& points, const ClusterState& state) {
  return wcss(points, state, assign(points, state));
}

Assignment cluster_points(const PointsView& points, std::size_t clusters, std::uint64_t seed,
                          std::size_t iterations) {
  ClusterState s = init_centroids(points, clusters, seed);
  for (std::size_t it = 0; it < iterations; ++it) s = lloyd_step(points, s);
  return assign_with_repair(points, s);
}

// ---- ClusterEngine ---------------------------------------------------------

ClusterEngine::ClusterEngine(ClusterMode mode, std::size_t clusters, std::uint64_t seed,
                             std::size_t lloyd_iterations)
    : mode_(mode), clusters_(clusters), seed_(seed), iterations_(lloyd_iterations) {
  if (clusters == 0) throw ConfigError("cluster count must be at least 1");
}

void ClusterEngine::set_freeze(Freeze f) {
  if (f == Freeze::Record) frozen_.clear();
  cursor_ = 0;
  freeze_ = f;
}

void ClusterEngine::set_replay(std::vector<std::vector<std::vector<int>>> calls) {
  for (const auto& call : calls)
    for (const auto& labels : call)
      for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= clusters_)
          throw ContractError("replayed cluster label out of range");
  frozen_ = std::move(calls);
  cursor_ = 0;
  freeze_ = Freeze::Replay;
}

std::vector<std::vector<int>> ClusterEngine::assign_groups(const std::string& site,
                                                           const Tensor& points, bool training) {
  if (points.rank() != 3) {
    throw ShapeError("assign_groups expects [G,L,D], got " + to_string(points.shape()));
  }
  const std::size_t g = points.dim(0);
  const std::size_t l = points.dim(1);
  const std::size_t d = points.dim(2);
  std::vector<std::vector<int>> out;

  if (freeze_ == Freeze::Replay) {
    if (cursor_ >= frozen_.size() || frozen_[cursor_].size() != g ||
        (g > 0 && frozen_[cursor_][0].size() != l)) {
      throw ContractError("cluster replay does not match the recorded call sequence");
    }
    out = frozen_[cursor_++];
  } else {
    out.reserve(g);
    const auto all = points.data();
    if (mode_ == ClusterMode::Lloyd) {
      const std::uint64_t site_seed = derive_seed(seed_, site);
      for (std::size_t gi = 0; gi < g; ++gi) {
        PointsView pv(all.subspan(gi * l * d, l * d), l, d);
        out.push_back(cluster_points(pv, clusters_, site_seed, iterations_).labels);
      }
    } else {
      auto it = states_.find(site);
      if (it == states_.end()) {
        PointsView first(all.subspan(0, l * d), l, d);
        it = states_.emplace(site, init_centroids(first, clusters_, derive_seed(seed_, site))).first;
      }
      ClusterState& state = it->second;
      for (std::size_t gi = 0; gi < g; ++gi) {
        PointsView pv(all.subspan(gi * l * d, l * d), l, d);
        out.push_back(assign_with_repair(pv, state).labels);
        if (training) state = minibatch_step(pv, state);
      }
    }
    if (freeze_ == Freeze::Record) frozen_.push_back(out);
  }
  if (capture_) {
    for (std::size_t gi = 0; gi < g; ++gi) captured_.push_back({site, gi, out[gi]});
  }
  return out;
}

}  // namespace cstt
