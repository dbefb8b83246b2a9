#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "polex/types.hpp"

namespace polex {

struct Experience {
  State state;
  ActionId action = 0;
  double reward = 0.0;
  State next_state;
  bool terminal = false;  // true only for real terminations, not step-cap truncation
};

/// Fixed-capacity FIFO ring of experiences.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw DomainError("replay buffer capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Experience e) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(e));
    } else {
      data_[head_] = std::move(e);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  /// i = 0 is the oldest retained experience.
  const Experience& at(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

  /// Uniform draw with replacement.
  std::vector<std::size_t> sample(std::size_t n, Rng& rng) const {
    if (data_.empty()) throw DomainError("sample from empty replay buffer");
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(data_.size()));
    return idx;
  }
  const Experience& raw(std::size_t slot) const { return data_[slot]; }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // oldest element once full
  std::vector<Experience> data_;
};

}  // namespace polex
