#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trip/core_tensor.hpp"
#include "trip/detail/ring.hpp"

// Discrete distributions over a d-dimensional lattice stored as a tensor ring:
//   P[r_1..r_d]  proportional to  Tr(|Q_1|[r_1] ... |Q_d|[r_d]).
namespace trip {

namespace detail {

inline RingView ring_of(const CoreSet& cores)
{
  RingView ring;
  ring.reserve(cores.dims());
  for (const auto& c : cores.cores())
    ring.push_back(&c);
  return ring;
}

inline std::vector<Factor> discrete_factors(const CoreSet& cores, const AssignmentMask& mask)
{
  mask.validate(cores);
  std::vector<Factor> factors(cores.dims());
  for (const auto& [k, v] : mask.observed())
    factors[k] = Factor::slice_factor(v);
  return factors;
}

} // namespace detail

/// Tr(prod_j |Q_j|[r_j]) for a full assignment; no normalization.
inline double unnormalized_weight(const CoreSet& cores, std::span<const std::size_t> r)
{
  if (r.size() != cores.dims())
    throw range_error("assignment has " + std::to_string(r.size()) + " entries, expected " +
                      std::to_string(cores.dims()));
  Matrix buf = Matrix::Identity(cores[0].rows(), cores[0].rows());
  for (std::size_t k = 0; k < cores.dims(); ++k) {
    if (r[k] >= cores.categories(k))
      throw range_error("value " + std::to_string(r[k]) + " out of range for variable " +
                        std::to_string(k));
    buf = buf * cores[k].abs_slice(r[k]);
  }
  return buf.trace();
}

/// log p(r_M): observed variables use their slice, the rest are summed out.
inline double log_marginal(const CoreSet& cores, const AssignmentMask& mask)
{
  const auto factors = detail::discrete_factors(cores, mask);
  return detail::log_ring_ratio(detail::ring_of(cores), factors);
}

/// log p(observed | given).
inline double log_conditional(const CoreSet& cores, const AssignmentMask& observed,
                              const AssignmentMask& given)
{
  AssignmentMask joint = given;
  for (const auto& [k, v] : observed.observed()) {
    if (given.contains(k))
      throw argument_error("variable " + std::to_string(k) +
                           " appears in both the event and the condition");
    joint.observe(k, v);
  }
  const double log_given = log_marginal(cores, given);
  if (log_given == -std::numeric_limits<double>::infinity())
    throw null_condition_error("conditioning event has zero probability");
  return log_marginal(cores, joint) - log_given;
}

/// Draws the unobserved variables in ring order from exact one-variable
/// conditionals; observed variables are copied through.
template <class Rng>
std::vector<std::size_t> sample(const CoreSet& cores, const AssignmentMask& given, Rng& rng)
{
  auto factors = detail::discrete_factors(cores, given);
  std::vector<bool> free(cores.dims(), true);
  std::vector<std::size_t> out(cores.dims(), 0);
  for (const auto& [k, v] : given.observed()) {
    free[k] = false;
    out[k] = v;
  }
  const auto ring = detail::ring_of(cores);
  // Reject impossible conditions up front, even when nothing is left to draw.
  if (detail::log_ring_ratio(ring, factors) == -std::numeric_limits<double>::infinity())
    throw null_condition_error("conditioning event has zero probability");
  detail::sample_chain(ring, factors, free, [&](std::size_t k, std::span<const double> probs) {
    out[k] = detail::draw_categorical(probs, rng);
    return detail::Factor::slice_factor(out[k]);
  });
  return out;
}

inline std::vector<std::size_t> sample(const CoreSet& cores, const AssignmentMask& given,
                                       std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  return sample(cores, given, rng);
}

} // namespace trip
