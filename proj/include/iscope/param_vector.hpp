#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <new>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "iscope/error.hpp"

namespace iscope {

/// One named parameter tensor inside a flat parameter vector.
struct TensorShape {
  std::string name;
  std::vector<std::size_t> dims;

  std::size_t size() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
  }
  bool operator==(const TensorShape&) const = default;
};

/// Maps a flat parameter vector onto named tensors, in order.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(std::vector<TensorShape> entries) : entries_(std::move(entries)) {
    offsets_.reserve(entries_.size());
    for (const auto& e : entries_) {
      offsets_.push_back(total_);
      total_ += e.size();
    }
  }

  std::size_t size() const noexcept { return total_; }
  const std::vector<TensorShape>& entries() const noexcept { return entries_; }
  std::size_t offset(std::size_t entry) const { return offsets_.at(entry); }

  bool operator==(const ParamLayout& o) const { return entries_ == o.entries_; }

 private:
  std::vector<TensorShape> entries_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

/// A named tensor with its values, as produced by ParamVector::unflatten.
struct NamedTensor {
  TensorShape shape;
  std::vector<double> values;
};

/// Allocator with 64-byte aligned blocks. Vectorized reductions then see the
/// same alignment on every allocation, which keeps results bitwise stable.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

/// Flattened network parameters with their layout. Closed under addition and
/// scaling when layouts agree.
class ParamVector {
 public:
  ParamVector() : layout_(std::make_shared<const ParamLayout>()) {}
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), values_(layout_->size(), 0.0) {}
  ParamVector(std::shared_ptr<const ParamLayout> layout, const std::vector<double>& values)
      : layout_(std::move(layout)), values_(values.begin(), values.end()) {
    if (values_.size() != layout_->size()) {
      throw ShapeError("<flat>", "value count " + std::to_string(values_.size()) +
                                     " != layout size " + std::to_string(layout_->size()));
    }
  }

  /// Vector of zeros sharing this vector's layout.
  ParamVector zeros_like() const { return ParamVector(layout_); }

  std::size_t size() const noexcept { return values_.size(); }
  const ParamLayout& layout() const noexcept { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return layout_; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_layout(const ParamVector& o) const {
    return layout_ == o.layout_ || *layout_ == *o.layout_;
  }

  std::vector<NamedTensor> unflatten() const {
    std::vector<NamedTensor> out;
    const auto& entries = layout_->entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const auto begin = values_.begin() + static_cast<std::ptrdiff_t>(layout_->offset(e));
      out.push_back({entries[e], std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(entries[e].size()))});
    }
    return out;
  }

  static ParamVector flatten(const std::vector<NamedTensor>& tensors) {
    std::vector<TensorShape> shapes;
    std::vector<double> values;
    for (const auto& t : tensors) {
      if (t.values.size() != t.shape.size()) throw ShapeError(t.shape.name, "tensor value count mismatch");
      shapes.push_back(t.shape);
      values.insert(values.end(), t.values.begin(), t.values.end());
    }
    return ParamVector(std::make_shared<const ParamLayout>(std::move(shapes)), std::move(values));
  }

  ParamVector& operator+=(const ParamVector& o) {
    check(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  ParamVector& operator-=(const ParamVector& o) {
    check(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  ParamVector& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  /// this += a * x
  ParamVector& axpy(double a, const ParamVector& x) {
    check(x);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * x.values_[i];
    return *this;
  }

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(double s, ParamVector a) { return a *= s; }

  /// Bitwise equality of values (and layout).
  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.same_layout(b) && a.values_.size() == b.values_.size() &&
           (a.values_.empty() || std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0);
  }

  double dot(const ParamVector& o) const {
    check(o);
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * o.values_[i];
    return s;
  }
  double norm2() const { return std::sqrt(dot(*this)); }
  double norm_inf() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }
  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  void check(const ParamVector& o) const {
    if (!same_layout(o)) throw ShapeError("<flat>", "parameter layouts differ");
  }

  std::shared_ptr<const ParamLayout> layout_;
  AlignedDoubles values_;
};

}  // namespace iscope
