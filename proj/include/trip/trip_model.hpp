#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "trip/core_tensor.hpp"
#include "trip/detail/ring.hpp"
#include "trip/tensor_ring.hpp"

namespace trip {

/**
 * Gaussian mixture on a d-dimensional lattice. Dimension k has N_k
 * components N(mean[k][s], std[k][s]); the joint component weights
 * p(s_1..s_d) are the tensor ring given by `cores`.
 */
class TripModel {
public:
  TripModel() = default;

  TripModel(CoreSet cores, std::vector<std::vector<double>> means,
            std::vector<std::vector<double>> stds)
      : cores_(std::move(cores)), means_(std::move(means)), stds_(std::move(stds))
  {
    validate_components(cores_.cores(), means_, stds_);
  }

  std::size_t dims() const noexcept { return cores_.dims(); }
  std::size_t components(std::size_t k) const { return cores_.categories(k); }
  const CoreSet& cores() const noexcept { return cores_; }
  const std::vector<std::vector<double>>& means() const noexcept { return means_; }
  const std::vector<std::vector<double>>& stds() const noexcept { return stds_; }

  template <class Cores>
  static void validate_components(const Cores& cores, const std::vector<std::vector<double>>& means,
                                  const std::vector<std::vector<double>>& stds)
  {
    if (means.size() != cores.size() || stds.size() != cores.size())
      throw argument_error("means/stds must have one entry per dimension");
    for (std::size_t k = 0; k < cores.size(); ++k) {
      if (means[k].size() != cores[k].categories() || stds[k].size() != cores[k].categories())
        throw argument_error("dimension " + std::to_string(k) + " needs " +
                             std::to_string(cores[k].categories()) + " means and stds");
      for (std::size_t s = 0; s < means[k].size(); ++s) {
        if (!std::isfinite(means[k][s]))
          throw argument_error("means must be finite");
        if (!(stds[k][s] > 0.0) || !std::isfinite(stds[k][s]))
          throw argument_error("stds must be positive and finite");
      }
    }
  }

private:
  CoreSet cores_;
  std::vector<std::vector<double>> means_;
  std::vector<std::vector<double>> stds_;
};

/// Observed continuous values by dimension; absent dimensions are marginalized.
class ContinuousMask {
public:
  ContinuousMask() = default;

  ContinuousMask& observe(std::size_t dim, double z)
  {
    if (!std::isfinite(z))
      throw argument_error("observed value for dimension " + std::to_string(dim) +
                           " is not finite");
    observed_[dim] = z;
    return *this;
  }

  static ContinuousMask full(std::span<const double> z)
  {
    ContinuousMask m;
    for (std::size_t k = 0; k < z.size(); ++k)
      m.observe(k, z[k]);
    return m;
  }

  bool contains(std::size_t dim) const { return observed_.count(dim) != 0; }
  bool empty() const noexcept { return observed_.empty(); }
  std::size_t size() const noexcept { return observed_.size(); }
  const std::map<std::size_t, double>& observed() const noexcept { return observed_; }

  void validate(std::size_t dims) const
  {
    for (const auto& [k, z] : observed_) {
      if (k >= dims)
        throw range_error("dimension " + std::to_string(k) + " out of range for " +
                          std::to_string(dims) + " dimensions");
      if (!std::isfinite(z))
        throw argument_error("observed values must be finite");
    }
  }

private:
  std::map<std::size_t, double> observed_;
};

namespace detail {

inline std::vector<Factor> continuous_factors(const TripModel& model, const ContinuousMask& mask)
{
  mask.validate(model.dims());
  std::vector<Factor> factors(model.dims());
  for (const auto& [k, z] : mask.observed())
    factors[k] = gaussian_factor(model.means()[k], model.stds()[k], z);
  return factors;
}

// Draw s from `probs`, then z ~ N(mean[s], std[s]).
template <class Rng>
double draw_mixture(std::span<const double> probs, std::span<const double> means,
                    std::span<const double> stds, Rng& rng)
{
  const std::size_t s = draw_categorical(probs, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  return means[s] + stds[s] * normal(rng);
}

} // namespace detail

/// log p(z_M) with unobserved dimensions integrated out.
inline double log_density(const TripModel& model, const ContinuousMask& mask)
{
  const auto factors = detail::continuous_factors(model, mask);
  return detail::log_ring_ratio(detail::ring_of(model.cores()), factors);
}

inline double log_density(const TripModel& model, std::span<const double> z)
{
  if (z.size() != model.dims())
    throw argument_error("point has " + std::to_string(z.size()) + " coordinates, expected " +
                         std::to_string(model.dims()));
  return log_density(model, ContinuousMask::full(z));
}

/// p(s_k | z_{1..k-1}): prefix cores weighted by Gaussian likelihoods, the
/// current core sliced, later cores summed. `k` is zero-based.
inline std::vector<double> conditional_mixture_weights(const TripModel& model, std::size_t k,
                                                       std::span<const double> prefix)
{
  if (k >= model.dims())
    throw range_error("dimension " + std::to_string(k) + " out of range");
  if (prefix.size() != k)
    throw argument_error("prefix must hold exactly " + std::to_string(k) + " values");
  ContinuousMask mask;
  for (std::size_t j = 0; j < k; ++j)
    mask.observe(j, prefix[j]);
  const auto factors = detail::continuous_factors(model, mask);
  const auto ring = detail::ring_of(model.cores());

  Matrix head = Matrix::Identity(ring.front()->rows(), ring.front()->rows());
  double unused = 0.0;
  for (std::size_t j = 0; j < k; ++j)
    detail::multiply_right(head, *ring[j], factors[j], unused);
  Matrix tail = Matrix::Identity(ring.front()->rows(), ring.front()->rows());
  for (std::size_t j = model.dims(); j-- > k + 1;) {
    tail = ring[j]->summed() * tail;
    detail::rescale(tail, unused);
  }
  return detail::slice_probabilities(*ring[k], head, tail);
}

/**
 * Redraws the dimensions in `resample_dims` from p(z_resample | z_rest) by
 * the chain rule in ring order. Each redrawn dimension is conditioned on all
 * kept dimensions and on the dimensions already redrawn.
 */
template <class Rng>
std::vector<double> conditional_resample(const TripModel& model, std::span<const double> current,
                                         const std::set<std::size_t>& resample_dims, Rng& rng)
{
  if (current.size() != model.dims())
    throw argument_error("point has " + std::to_string(current.size()) +
                         " coordinates, expected " + std::to_string(model.dims()));
  std::vector<double> out(current.begin(), current.end());
  if (resample_dims.empty())
    return out;
  if (*resample_dims.rbegin() >= model.dims())
    throw range_error("resample dimension out of range");
  ContinuousMask kept;
  std::vector<bool> free(model.dims(), false);
  for (std::size_t k = 0; k < model.dims(); ++k) {
    if (resample_dims.count(k))
      free[k] = true;
    else
      kept.observe(k, current[k]);
  }

  auto factors = detail::continuous_factors(model, kept);
  detail::sample_chain(detail::ring_of(model.cores()), factors, free,
                       [&](std::size_t k, std::span<const double> probs) {
                         out[k] = detail::draw_mixture(probs, model.means()[k],
                                                       model.stds()[k], rng);
                         return detail::gaussian_factor(model.means()[k], model.stds()[k],
                                                        out[k]);
                       });
  return out;
}

inline std::vector<double> conditional_resample(const TripModel& model,
                                                std::span<const double> current,
                                                const std::set<std::size_t>& resample_dims,
                                                std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  return conditional_resample(model, current, resample_dims, rng);
}

/// Ancestral sample z ~ p(z); identical to resampling every dimension.
template <class Rng>
std::vector<double> sample(const TripModel& model, Rng& rng)
{
  std::set<std::size_t> all;
  for (std::size_t k = 0; k < model.dims(); ++k)
    all.insert(k);
  const std::vector<double> zeros(model.dims(), 0.0);
  return conditional_resample(model, zeros, all, rng);
}

inline std::vector<double> sample(const TripModel& model, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  return sample(model, rng);
}

struct ParamStats {
  std::size_t param_count = 0;
  std::size_t memory_bytes = 0;

  /// Memory in MB of 2^20 bytes.
  double megabytes() const noexcept { return static_cast<double>(memory_bytes) / 1048576.0; }
};

/// Parameters: every core entry plus a mean and a std per component.
inline ParamStats param_stats(std::span<const std::size_t> components,
                              std::span<const std::size_t> core_sizes)
{
  if (components.size() != core_sizes.size() || components.empty())
    throw argument_error("components and core sizes must be non-empty and the same length");
  ParamStats st;
  const std::size_t d = components.size();
  for (std::size_t k = 0; k < d; ++k)
    st.param_count += components[k] * core_sizes[k] * core_sizes[(k + 1) % d] + 2 * components[k];
  st.memory_bytes = 8 * st.param_count;
  return st;
}

inline ParamStats param_stats(const TripModel& model)
{
  std::vector<std::size_t> n, m;
  for (const auto& c : model.cores().cores()) {
    n.push_back(c.categories());
    m.push_back(c.rows());
  }
  return param_stats(n, m);
}

} // namespace trip
