#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "omnet/nn.hpp"
#include "omnet/rng.hpp"
#include "omnet/serialize.hpp"

namespace omnet {

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;  // goal reached; time-limit truncation stays false
};

/// Column-per-sample minibatch.
struct Batch {
  Matrix s;
  Matrix a;
  Vector r;
  Matrix s_next;
  Vector done;  // 1.0 for terminal transitions

  Eigen::Index size() const { return r.size(); }
};

/// Fixed-capacity ring buffer with uniform sampling with replacement.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(std::size_t capacity, std::size_t obs_dim, std::size_t act_dim)
      : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }

  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t inserted() const noexcept { return inserted_; }
  bool empty() const noexcept { return size_ == 0; }

  void add(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s_next,
           bool done) {
    if (s.size() != obs_dim_ || s_next.size() != obs_dim_ || a.size() != act_dim_)
      throw std::invalid_argument("ReplayBuffer::add: dimension mismatch");
    const std::size_t slot = inserted_ % capacity_;
    auto put = [slot](std::vector<double>& store, std::span<const double> v) {
      const std::size_t at = slot * v.size();
      if (store.size() < at + v.size()) store.resize(at + v.size());
      std::copy(v.begin(), v.end(), store.begin() + static_cast<std::ptrdiff_t>(at));
    };
    put(s_, s);
    put(a_, a);
    put(s_next_, s_next);
    if (r_.size() <= slot) {
      r_.resize(slot + 1);
      done_.resize(slot + 1);
    }
    r_[slot] = r;
    done_[slot] = done ? 1.0 : 0.0;
    ++inserted_;
    if (size_ < capacity_) ++size_;
  }

  void add(const Transition& t) { add(t.s, t.a, t.r, t.s_next, t.done); }

  Transition at(std::size_t k) const {
    if (k >= size_) throw std::out_of_range("ReplayBuffer::at");
    Transition t;
    t.s.assign(s_.begin() + static_cast<std::ptrdiff_t>(k * obs_dim_),
               s_.begin() + static_cast<std::ptrdiff_t>((k + 1) * obs_dim_));
    t.a.assign(a_.begin() + static_cast<std::ptrdiff_t>(k * act_dim_),
               a_.begin() + static_cast<std::ptrdiff_t>((k + 1) * act_dim_));
    t.s_next.assign(s_next_.begin() + static_cast<std::ptrdiff_t>(k * obs_dim_),
                    s_next_.begin() + static_cast<std::ptrdiff_t>((k + 1) * obs_dim_));
    t.r = r_[k];
    t.done = done_[k] != 0.0;
    return t;
  }

  Batch sample(std::size_t batch_size, Rng& rng) const {
    if (empty()) throw std::logic_error("ReplayBuffer::sample: buffer is empty");
    const auto B = static_cast<Eigen::Index>(batch_size);
    Batch b{Matrix(obs_dim_, B), Matrix(act_dim_, B), Vector(B), Matrix(obs_dim_, B), Vector(B)};
    for (Eigen::Index c = 0; c < B; ++c) {
      const auto k = static_cast<std::size_t>(rng.index(size_));
      for (std::size_t d = 0; d < obs_dim_; ++d) {
        b.s(static_cast<Eigen::Index>(d), c) = s_[k * obs_dim_ + d];
        b.s_next(static_cast<Eigen::Index>(d), c) = s_next_[k * obs_dim_ + d];
      }
      for (std::size_t d = 0; d < act_dim_; ++d) b.a(static_cast<Eigen::Index>(d), c) = a_[k * act_dim_ + d];
      b.r[c] = r_[k];
      b.done[c] = done_[k];
    }
    return b;
  }

  void write(ByteWriter& w) const {
    w.tag("RPLY");
    w.u64(capacity_);
    w.u64(obs_dim_);
    w.u64(act_dim_);
    w.u64(size_);
    w.u64(inserted_);
    w.f64s(s_);
    w.f64s(a_);
    w.f64s(r_);
    w.f64s(s_next_);
    w.f64s(done_);
  }

  static ReplayBuffer read(ByteReader& r) {
    r.expect_tag("RPLY");
    ReplayBuffer b;
    b.capacity_ = r.u64();
    b.obs_dim_ = r.u64();
    b.act_dim_ = r.u64();
    b.size_ = r.u64();
    b.inserted_ = r.u64();
    b.s_ = r.f64s();
    b.a_ = r.f64s();
    b.r_ = r.f64s();
    b.s_next_ = r.f64s();
    b.done_ = r.f64s();
    if (b.capacity_ == 0 || b.size_ > b.capacity_ || b.r_.size() != b.size_ || b.s_.size() != b.size_ * b.obs_dim_)
      throw FormatError("ReplayBuffer: inconsistent sizes");
    return b;
  }

 private:
  std::size_t capacity_ = 1;
  std::size_t obs_dim_ = 0;
  std::size_t act_dim_ = 0;
  std::size_t size_ = 0;
  std::size_t inserted_ = 0;
  std::vector<double> s_, a_, r_, s_next_, done_;
};

}  // namespace omnet
