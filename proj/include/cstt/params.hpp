#pragma once

#include <string>
#include <vector>

#include "cstt/random.hpp"
#include "cstt/tensor.hpp"

namespace cstt {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

enum class Init {
  Zeros,
  Ones,
  FanIn,        // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = shape[0]
  SmallNormal,  // normal(0, 0.02)
};

// Ordered registry of trainable tensors with stable dotted names
// ("block0.spatial.attn.w_q"). Order of creation is the serialization order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t init_seed = 0) : rng_(init_seed) {}

  Tensor create(const std::string& name, Shape shape, Init init);
  const std::vector<NamedParam>& items() const { return items_; }
  Tensor find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  Rng rng_;
  std::vector<NamedParam> items_;
};

}  // namespace cstt
