#pragma once

#include <cstdint>
#include <vector>

#include "cstt/random.hpp"
#include "cstt/tensor.hpp"

namespace cstt {

class ClusterEngine;

// Draws dropout keep-masks from a seeded stream. In Record mode the masks are
// kept; Replay mode hands them back in the same call order so that repeated
// forward passes (e.g. finite differences) see identical masks.
class DropoutSource {
 public:
  enum class Mode { Sample, Record, Replay };

  DropoutSource(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}

  double rate() const { return rate_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode);
  Tensor apply(const Tensor& x);
  Rng& rng() { return rng_; }

 private:
  double rate_;
  Rng rng_;
  Mode mode_ = Mode::Sample;
  std::vector<std::vector<std::uint8_t>> recorded_;
  std::size_t cursor_ = 0;
};

// Per-call switches threaded through every forward pass.
struct ForwardContext {
  bool training = false;
  DropoutSource* dropout = nullptr;
  ClusterEngine* clusters = nullptr;

  Tensor drop(const Tensor& x) const {
    return (training && dropout != nullptr) ? dropout->apply(x) : x;
  }
};

}  // namespace cstt
