#include "cstt/context.hpp"

namespace cstt {

void DropoutSource::set_mode(Mode mode) {
  if (mode == Mode::Record) recorded_.clear();
  cursor_ = 0;
  mode_ = mode;
}

Tensor DropoutSource::apply(const Tensor& x) {
  if (rate_ == 0.0) return x;
  if (mode_ == Mode::Replay) {
    if (cursor_ >= recorded_.size() || recorded_[cursor_].size() != x.numel()) {
      throw ContractError("dropout replay does not match the recorded call sequence");
    }
    return dropout(x, rate_, recorded_[cursor_++]);
  }
  std::vector<std::uint8_t> keep(x.numel());
  for (auto& k : keep) k = rng_.bernoulli(1.0 - rate_) ? 1 : 0;
  Tensor out = dropout(x, rate_, keep);
  if (mode_ == Mode::Record) recorded_.push_back(std::move(keep));
  return out;
}

}  // namespace cstt
