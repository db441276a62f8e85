#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "trip/error.hpp"

namespace trip {

using Matrix = Eigen::MatrixXd;

/**
 * A 3-D core of shape (categories, rows, cols). Slice `s` is the
 * rows x cols matrix Q[s].
 *
 * Stored values are signed and unconstrained. Every computation goes through
 * abs_slice() / summed(), the element-wise absolute value of the stored
 * entries, so the tensor is non-negative at use. Both are cached at
 * construction; the object is immutable afterwards.
 */
class CoreTensor {
public:
  CoreTensor() = default;

  /// `values` is row-major over (category, row, col).
  CoreTensor(std::size_t categories, std::size_t rows, std::size_t cols,
             std::span<const double> values)
  {
    if (categories == 0 || rows == 0 || cols == 0)
      throw argument_error("core dimensions must be positive");
    if (values.size() != categories * rows * cols)
      throw argument_error("core payload has " + std::to_string(values.size()) +
                           " values, expected " +
                           std::to_string(categories * rows * cols));
    slices_.reserve(categories);
    std::size_t idx = 0;
    for (std::size_t s = 0; s < categories; ++s) {
      Matrix m(rows, cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          m(r, c) = values[idx++];
      slices_.push_back(std::move(m));
    }
    finish();
  }

  explicit CoreTensor(std::vector<Matrix> slices) : slices_(std::move(slices))
  {
    if (slices_.empty())
      throw argument_error("core needs at least one slice");
    for (const auto& s : slices_)
      if (s.rows() != slices_.front().rows() || s.cols() != slices_.front().cols() ||
          s.size() == 0)
        throw argument_error("core slices must share a non-empty shape");
    finish();
  }

  std::size_t categories() const noexcept { return slices_.size(); }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(summed_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(summed_.cols()); }
  std::size_t size() const noexcept { return categories() * rows() * cols(); }

  const Matrix& slice(std::size_t s) const { return slices_.at(s); }
  const Matrix& abs_slice(std::size_t s) const { return abs_.at(s); }
  const std::vector<Matrix>& abs_slices() const noexcept { return abs_; }
  /// Sum over categories of |Q[s]|; the marginalized factor.
  const Matrix& summed() const noexcept { return summed_; }
  /// (rows*cols) x categories; column s is |Q[s]| flattened column-major.
  const Matrix& abs_stack() const noexcept { return abs_stack_; }

  double value(std::size_t s, std::size_t r, std::size_t c) const { return slices_.at(s)(r, c); }

  /// Row-major copy over (category, row, col).
  std::vector<double> flat() const
  {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& m : slices_)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
          out.push_back(m(r, c));
    return out;
  }

private:
  void finish()
  {
    summed_ = Matrix::Zero(slices_.front().rows(), slices_.front().cols());
    abs_.reserve(slices_.size());
    abs_stack_.resize(summed_.size(), static_cast<Eigen::Index>(slices_.size()));
    for (const auto& s : slices_) {
      if (!s.allFinite())
        throw argument_error("core values must be finite");
      abs_.push_back(s.cwiseAbs());
      summed_ += abs_.back();
      abs_stack_.col(static_cast<Eigen::Index>(abs_.size() - 1)) = abs_.back().reshaped();
    }
  }

  std::vector<Matrix> slices_;
  std::vector<Matrix> abs_;
  Matrix summed_;
  Matrix abs_stack_;
};

/// Ordered ring of cores; cores[k].cols() == cores[k+1].rows(), wrapping.
class CoreSet {
public:
  CoreSet() = default;

  explicit CoreSet(std::vector<CoreTensor> cores) : cores_(std::move(cores))
  {
    if (cores_.empty())
      throw argument_error("a core set needs at least one core");
    check_ring(cores_);
  }

  std::size_t dims() const noexcept { return cores_.size(); }
  const CoreTensor& operator[](std::size_t k) const { return cores_.at(k); }
  const std::vector<CoreTensor>& cores() const noexcept { return cores_; }
  std::size_t categories(std::size_t k) const { return cores_.at(k).categories(); }

  template <class Cores>
  static void check_ring(const Cores& cores)
  {
    const std::size_t d = cores.size();
    for (std::size_t k = 0; k < d; ++k) {
      const auto& a = deref(cores[k]);
      const auto& b = deref(cores[(k + 1) % d]);
      if (a.cols() != b.rows())
        throw argument_error("core " + std::to_string(k) + " has " + std::to_string(a.cols()) +
                             " columns but core " + std::to_string((k + 1) % d) + " has " +
                             std::to_string(b.rows()) + " rows");
    }
  }

private:
  static const CoreTensor& deref(const CoreTensor& c) { return c; }
  static const CoreTensor& deref(const CoreTensor* c) { return *c; }

  std::vector<CoreTensor> cores_;
};

/// Partial assignment of discrete variables; absent variables are marginalized.
class AssignmentMask {
public:
  AssignmentMask() = default;

  AssignmentMask& observe(std::size_t var, std::size_t value)
  {
    observed_[var] = value;
    return *this;
  }

  static AssignmentMask full(std::span<const std::size_t> values)
  {
    AssignmentMask m;
    for (std::size_t k = 0; k < values.size(); ++k)
      m.observe(k, values[k]);
    return m;
  }

  bool contains(std::size_t var) const { return observed_.count(var) != 0; }
  std::optional<std::size_t> value(std::size_t var) const
  {
    auto it = observed_.find(var);
    if (it == observed_.end())
      return std::nullopt;
    return it->second;
  }
  bool empty() const noexcept { return observed_.empty(); }
  std::size_t size() const noexcept { return observed_.size(); }
  const std::map<std::size_t, std::size_t>& observed() const noexcept { return observed_; }

  void validate(const CoreSet& cores) const
  {
    for (const auto& [k, v] : observed_) {
      if (k >= cores.dims())
        throw range_error("variable " + std::to_string(k) + " out of range for " +
                          std::to_string(cores.dims()) + " variables");
      if (v >= cores.categories(k))
        throw range_error("value " + std::to_string(v) + " out of range for variable " +
                          std::to_string(k));
    }
  }

private:
  std::map<std::size_t, std::size_t> observed_;
};

} // namespace trip
