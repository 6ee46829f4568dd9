// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "caora/error.hpp"

namespace caora {

inline constexpr std::size_t kStateDim = 4;
inline constexpr std::size_t kActionDim = 2;

/// One experience tuple. States are normalised by r_max and actions lie in [-1,1].
struct Transition {
  std::array<double, kStateDim> s{};
  std::array<double, kActionDim> a{};
  double r = 0.0;
  std::array<double, kStateDim> s_next{};
  bool done = false;

  bool finite() const {
    for (double v : s) if (!std::isfinite(v)) return false;
    for (double v : a) if (!std::isfinite(v)) return false;
    for (double v : s_next) if (!std::isfinite(v)) return false;
    return std::isfinite(r);
  }
};

/// Fixed-capacity FIFO ring: once full, each push overwrites the oldest entry.
template <typename T = Transition>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {
    detail::require(capacity > 0, "replay buffer capacity must be positive");
    storage_.reserve(std::min<std::size_t>(capacity, 1u << 16));
  }

  void push(const T& item) {
    if (storage_.size() < capacity_) {
      storage_.push_back(item);
    } else {
      storage_[cursor_] = item;
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  /// Uniform sample with replacement.
  template <typename Gen>
  std::vector<T> sample(std::size_t batch, Gen& gen) const {
    if (batch == 0 || batch > storage_.size())
      throw StateError("replay buffer holds fewer transitions than the requested batch");
    std::uniform_int_distribution<std::size_t> pick(0, storage_.size() - 1);
    std::vector<T> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(storage_[pick(gen)]);
    return out;
  }

  /// i-th oldest stored item.
  const T& at(std::size_t i) const {
    if (i >= storage_.size()) throw InvalidArgument("replay buffer index out of range");
    const std::size_t start = storage_.size() < capacity_ ? 0 : cursor_;
    return storage_[(start + i) % capacity_];
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }
  bool full() const { return storage_.size() == capacity_; }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<T> storage_;
};

}  // namespace caora
