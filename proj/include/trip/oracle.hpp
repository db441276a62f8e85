#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "trip/core_tensor.hpp"
#include "trip/detail/math.hpp"
#include "trip/joint_model.hpp"
#include "trip/trip_model.hpp"

// Brute-force reference implementations. Nothing here goes through the ring
// contraction engine: weights are evaluated entry by entry with plain loops
// and marginals are exhaustive sums, so these can check the fast paths.
namespace trip::oracle {

inline constexpr std::size_t max_dense_entries = 1'000'000;

/// Tr(prod_j |Q_j|[r_j]) with explicit loops, no Eigen products.
inline double naive_weight(std::span<const CoreTensor* const> ring, std::span<const std::size_t> r)
{
  const std::size_t m0 = ring.front()->rows();
  std::vector<double> buf(m0 * m0, 0.0), next;
  for (std::size_t i = 0; i < m0; ++i)
    buf[i * m0 + i] = 1.0;
  std::size_t cols = m0;
  for (std::size_t j = 0; j < ring.size(); ++j) {
    const CoreTensor& core = *ring[j];
    const std::size_t inner = core.rows(), out_cols = core.cols();
    next.assign(m0 * out_cols, 0.0);
    for (std::size_t a = 0; a < m0; ++a)
      for (std::size_t b = 0; b < out_cols; ++b) {
        double acc = 0.0;
        for (std::size_t c = 0; c < inner; ++c)
          acc += buf[a * cols + c] * std::abs(core.value(r[j], c, b));
        next[a * out_cols + b] = acc;
      }
    buf.swap(next);
    cols = out_cols;
  }
  double tr = 0.0;
  for (std::size_t i = 0; i < m0; ++i)
    tr += buf[i * cols + i];
  return tr;
}

/// Full normalized probability tensor, row-major over the variables.
struct DenseJoint {
  std::vector<std::size_t> shape;
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }

  std::vector<std::size_t> unravel(std::size_t flat) const
  {
    std::vector<std::size_t> idx(shape.size());
    for (std::size_t k = shape.size(); k-- > 0;) {
      idx[k] = flat % shape[k];
      flat /= shape[k];
    }
    return idx;
  }
};

inline std::size_t dense_size(std::span<const CoreTensor* const> ring)
{
  std::size_t n = 1;
  for (const CoreTensor* c : ring) {
    if (n > max_dense_entries / c->categories())
      throw size_cap_error("model has more than " + std::to_string(max_dense_entries) +
                           " lattice states; refusing to enumerate");
    n *= c->categories();
  }
  return n;
}

inline DenseJoint densify(std::span<const CoreTensor* const> ring)
{
  DenseJoint dj;
  const std::size_t n = dense_size(ring);
  for (const CoreTensor* c : ring)
    dj.shape.push_back(c->categories());
  dj.probs.resize(n);
  double total = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    dj.probs[f] = naive_weight(ring, dj.unravel(f));
    total += dj.probs[f];
  }
  if (!(total > 0.0))
    throw degenerate_error("all lattice weights are zero");
  for (auto& p : dj.probs)
    p /= total;
  return dj;
}

inline DenseJoint densify(const CoreSet& cores)
{
  std::vector<const CoreTensor*> ring;
  for (const auto& c : cores.cores())
    ring.push_back(&c);
  return densify(ring);
}

/// p(r_M) by summing every matching entry.
inline double dense_marginal(const DenseJoint& dj, const AssignmentMask& mask)
{
  double p = 0.0;
  for (std::size_t f = 0; f < dj.size(); ++f) {
    const auto idx = dj.unravel(f);
    bool match = true;
    for (const auto& [k, v] : mask.observed())
      match = match && idx.at(k) == v;
    if (match)
      p += dj.probs[f];
  }
  return p;
}

inline double dense_conditional(const DenseJoint& dj, const AssignmentMask& observed,
                                const AssignmentMask& given)
{
  AssignmentMask joint = given;
  for (const auto& [k, v] : observed.observed())
    joint.observe(k, v);
  return dense_marginal(dj, joint) / dense_marginal(dj, given);
}

using detail::log_normal_pdf;
using detail::log_sum_exp;

/// Every lattice mode of a continuous model with its prior weight.
struct ModeList {
  DenseJoint weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> stds;
};

inline ModeList enumerate_modes(const TripModel& model)
{
  return {densify(model.cores()), model.means(), model.stds()};
}

/// log sum_s p(s) prod_{j observed} N(z_j | mu_j^{s_j}, sigma_j^{s_j});
/// unobserved dimensions integrate to one.
inline double dense_log_density(const ModeList& modes, const ContinuousMask& mask)
{
  std::vector<double> terms;
  terms.reserve(modes.weights.size());
  for (std::size_t f = 0; f < modes.weights.size(); ++f) {
    if (modes.weights.probs[f] <= 0.0)
      continue;
    const auto s = modes.weights.unravel(f);
    double t = std::log(modes.weights.probs[f]);
    for (const auto& [k, z] : mask.observed())
      t += log_normal_pdf(z, modes.means[k][s[k]], modes.stds[k][s[k]]);
    terms.push_back(t);
  }
  return log_sum_exp(terms);
}

/// p(s_k | z_0..z_{k-1}) by exhaustive mode sums.
inline std::vector<double> dense_mixture_weights(const ModeList& modes, std::size_t k,
                                                 std::span<const double> prefix)
{
  std::vector<double> w(modes.weights.shape.at(k), 0.0);
  double total = 0.0;
  for (std::size_t f = 0; f < modes.weights.size(); ++f) {
    const auto s = modes.weights.unravel(f);
    double t = modes.weights.probs[f];
    for (std::size_t j = 0; j < prefix.size(); ++j)
      t *= std::exp(log_normal_pdf(prefix[j], modes.means[j][s[j]], modes.stds[j][s[j]]));
    w[s[k]] += t;
    total += t;
  }
  for (auto& x : w)
    x /= total;
  return w;
}

/// Marginal mean of every dimension: sum_s p(s) mu^s.
inline std::vector<double> dense_mean(const ModeList& modes)
{
  std::vector<double> mean(modes.means.size(), 0.0);
  for (std::size_t f = 0; f < modes.weights.size(); ++f) {
    const auto s = modes.weights.unravel(f);
    for (std::size_t k = 0; k < mean.size(); ++k)
      mean[k] += modes.weights.probs[f] * modes.means[k][s[k]];
  }
  return mean;
}

/// log p(z_M, y_ob) for a joint model by enumerating every ring state.
inline double dense_log_joint(const JointModel& model, const ContinuousMask& z,
                              const PartialAttributes& y)
{
  const auto ring = model.ring();
  const DenseJoint dj = densify(ring);
  std::vector<double> terms;
  for (std::size_t f = 0; f < dj.size(); ++f) {
    if (dj.probs[f] <= 0.0)
      continue;
    const auto idx = dj.unravel(f);
    bool match = true;
    for (const auto& [a, v] : y.observed())
      match = match && idx[model.position_of(model.latent_dims() + a)] == v;
    if (!match)
      continue;
    double t = std::log(dj.probs[f]);
    for (const auto& [k, value] : z.observed()) {
      const std::size_t s = idx[model.position_of(k)];
      t += log_normal_pdf(value, model.means()[k][s], model.stds()[k][s]);
    }
    terms.push_back(t);
  }
  return log_sum_exp(terms);
}

/// Central differences of f at `params`, one coordinate at a time.
inline std::vector<double> numeric_grad(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> params, double h = 1e-5)
{
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

} // namespace trip::oracle
