#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "mtbp/types.hpp"

namespace mtbp {

// The lattice of all vectors I <= X (componentwise), materialized once per
// observation.  Vectors are addressed by their mixed-radix rank
//   rank(I) = sum_k I[k] * stride[k],   stride over digits X[k]+1,
// which is linear: rank(I + J) = rank(I) + rank(J) whenever I + J <= X.
// The dynamic programs sweep ranks sorted by (total, lexicographic).
class Lattice {
 public:
  explicit Lattice(CountVector bound) : bound_(std::move(bound)) {
    const int d = static_cast<int>(bound_.size());
    for (int c : bound_)
      if (c < 0) fail(ErrorKind::validation, "negative observation count");
    strides_.assign(d, 1);
    long long size = 1;
    for (int k = d - 1; k >= 0; --k) {
      strides_[k] = static_cast<int>(size);
      size *= bound_[k] + 1;
      if (size > (1 << 27))
        fail(ErrorKind::guard,
             "observation lattice too large (" + format_counts(bound_) + ")");
    }
    size_ = static_cast<int>(size);

    vectors_.reserve(size_);
    totals_.reserve(size_);
    CountVector v(d, 0);
    for (int r = 0; r < size_; ++r) {  // rank order == lexicographic order
      vectors_.push_back(v);
      totals_.push_back(total_count(v));
      for (int k = d - 1; k >= 0; --k) {
        if (v[k] < bound_[k]) { ++v[k]; break; }
        v[k] = 0;
      }
    }
    ascending_.resize(size_);
    std::iota(ascending_.begin(), ascending_.end(), 0);
    std::stable_sort(ascending_.begin(), ascending_.end(),
                     [&](int a, int b) { return totals_[a] < totals_[b]; });
  }

  int dims() const { return static_cast<int>(bound_.size()); }
  const CountVector& bound() const { return bound_; }
  int size() const { return size_; }

  // v must satisfy v <= bound componentwise.
  int rank(const CountVector& v) const {
    int r = 0;
    for (size_t k = 0; k < v.size(); ++k) r += v[k] * strides_[k];
    return r;
  }

  const CountVector& at(int rank) const { return vectors_[rank]; }
  int total_at(int rank) const { return totals_[rank]; }

  // Ranks ordered by ascending total, ties in lexicographic (= rank) order.
  const std::vector<int>& ascending() const { return ascending_; }

  // Calls fn(rank, total) for every vector J <= limit, including 0 and
  // limit itself; limit must be <= bound.  Ranks are w.r.t. this lattice.
  template <class F>
  void for_each_below(const CountVector& limit, F&& fn) const {
    const int d = dims();
    CountVector v(d, 0);
    int r = 0, t = 0;
    for (;;) {
      fn(r, t);
      int k = d - 1;
      for (; k >= 0; --k) {
        if (v[k] < limit[k]) {
          ++v[k]; r += strides_[k]; ++t;
          break;
        }
        r -= v[k] * strides_[k]; t -= v[k]; v[k] = 0;
      }
      if (k < 0) return;
    }
  }

 private:
  CountVector bound_;
  std::vector<int> strides_;
  int size_ = 0;
  std::vector<CountVector> vectors_;
  std::vector<int> totals_;
  std::vector<int> ascending_;
};

}  // namespace mtbp
