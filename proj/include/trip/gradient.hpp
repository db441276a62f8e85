#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "trip/detail/ring.hpp"
#include "trip/joint_model.hpp"
#include "trip/trip_model.hpp"

namespace trip {

/// Gradient with respect to the stored parameters: signed core entries,
/// means, and log standard deviations.
struct GradPsi {
  std::vector<std::vector<Matrix>> d_cores;           // [dim][component]
  std::vector<std::vector<Matrix>> d_attribute_cores; // [attribute][value]; joint models only
  std::vector<std::vector<double>> d_means;
  std::vector<std::vector<double>> d_log_stds;

  static GradPsi zeros_like(const GradPsi& g)
  {
    GradPsi z = g;
    z.scale(0.0);
    return z;
  }

  template <class F>
  void for_each(F&& f)
  {
    for (auto& per_dim : d_cores)
      for (auto& m : per_dim)
        for (Eigen::Index i = 0; i < m.size(); ++i)
          f(m.data()[i]);
    for (auto& per_attr : d_attribute_cores)
      for (auto& m : per_attr)
        for (Eigen::Index i = 0; i < m.size(); ++i)
          f(m.data()[i]);
    for (auto& v : d_means)
      for (auto& x : v)
        f(x);
    for (auto& v : d_log_stds)
      for (auto& x : v)
        f(x);
  }

  void scale(double a)
  {
    for_each([a](double& x) { x *= a; });
  }

  /// this += a * other; shapes must match.
  void add_scaled(const GradPsi& other, double a)
  {
    for (std::size_t k = 0; k < d_cores.size(); ++k)
      for (std::size_t s = 0; s < d_cores[k].size(); ++s)
        d_cores[k][s] += a * other.d_cores[k][s];
    for (std::size_t k = 0; k < d_attribute_cores.size(); ++k)
      for (std::size_t s = 0; s < d_attribute_cores[k].size(); ++s)
        d_attribute_cores[k][s] += a * other.d_attribute_cores[k][s];
    for (std::size_t k = 0; k < d_means.size(); ++k)
      for (std::size_t s = 0; s < d_means[k].size(); ++s) {
        d_means[k][s] += a * other.d_means[k][s];
        d_log_stds[k][s] += a * other.d_log_stds[k][s];
      }
  }

  /// Flattened in the order cores, attribute cores, means, log stds; core
  /// entries row-major within each slice.
  std::vector<double> flatten() const
  {
    std::vector<double> out;
    auto push_cores = [&](const std::vector<std::vector<Matrix>>& cores) {
      for (const auto& per : cores)
        for (const auto& m : per)
          for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
              out.push_back(m(r, c));
    };
    push_cores(d_cores);
    push_cores(d_attribute_cores);
    for (const auto& v : d_means)
      out.insert(out.end(), v.begin(), v.end());
    for (const auto& v : d_log_stds)
      out.insert(out.end(), v.begin(), v.end());
    return out;
  }
};

struct LogDensityGrad {
  double log_density = 0.0;
  GradPsi grad;
};

namespace detail {

// d|x|/dx with the subgradient at 0 taken as 0.
inline Matrix chain_abs(const Matrix& d_abs, const Matrix& stored)
{
  return d_abs.cwiseProduct(stored.unaryExpr([](double x) {
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  }));
}

// Scatter a ring gradient back onto model parameters. `order[p]` is the
// variable at ring position p; ids below `d` are latents.
inline LogDensityGrad collect_gradient(const RingView& ring, std::span<const std::size_t> order,
                                       std::size_t d,
                                       const std::vector<std::vector<double>>& means,
                                       const std::vector<std::vector<double>>& stds,
                                       std::span<const double> z,
                                       const std::vector<Factor>& factors,
                                       const RingGradient& rg)
{
  LogDensityGrad out;
  out.log_density = rg.log_prob;
  out.grad.d_cores.resize(d);
  out.grad.d_means.resize(d);
  out.grad.d_log_stds.resize(d);
  out.grad.d_attribute_cores.resize(ring.size() - d);
  for (std::size_t p = 0; p < ring.size(); ++p) {
    const std::size_t v = order[p];
    const bool latent = v < d;
    const CoreTensor& core = *ring[p];
    auto& dst = latent ? out.grad.d_cores[v] : out.grad.d_attribute_cores[v - d];
    dst.resize(core.categories());
    for (std::size_t s = 0; s < core.categories(); ++s)
      dst[s] = chain_abs(rg.d_abs[p][s], core.slice(s));
    if (!latent)
      continue;
    const auto& mu = means[v];
    const auto& sd = stds[v];
    out.grad.d_means[v].assign(mu.size(), 0.0);
    out.grad.d_log_stds[v].assign(mu.size(), 0.0);
    if (factors[p].kind != Factor::Kind::weighted)
      continue;
    for (std::size_t s = 0; s < mu.size(); ++s) {
      // d log p / d log N_s, then through the Gaussian log-likelihood.
      const double g = factors[p].weights[s] * rg.d_weights[p][s];
      const double u = (z[v] - mu[s]) / sd[s];
      out.grad.d_means[v][s] = g * u / sd[s];
      out.grad.d_log_stds[v][s] = g * (u * u - 1.0);
    }
  }
  return out;
}

} // namespace detail

/// log p(z, y_ob) and its gradient for a joint model with z fully observed.
inline LogDensityGrad grad_log_joint(const JointModel& model, std::span<const double> z,
                                     const PartialAttributes& y)
{
  if (z.size() != model.latent_dims())
    throw argument_error("latent vector has " + std::to_string(z.size()) +
                         " coordinates, expected " + std::to_string(model.latent_dims()));
  const auto factors = detail::joint_factors(model, ContinuousMask::full(z), y);
  const auto ring = model.ring();
  const auto rg = detail::ring_gradient(ring, factors);
  return detail::collect_gradient(ring, model.order(), model.latent_dims(), model.means(),
                                  model.stds(), z, factors, rg);
}

/// log p(z) and its gradient by reverse mode through the ring contraction.
inline LogDensityGrad grad_log_density(const TripModel& model, std::span<const double> z)
{
  if (z.size() != model.dims())
    throw argument_error("point has " + std::to_string(z.size()) + " coordinates, expected " +
                         std::to_string(model.dims()));
  const auto factors = detail::continuous_factors(model, ContinuousMask::full(z));
  const auto ring = detail::ring_of(model.cores());
  const auto rg = detail::ring_gradient(ring, factors);
  std::vector<std::size_t> order(model.dims());
  for (std::size_t k = 0; k < order.size(); ++k)
    order[k] = k;
  return detail::collect_gradient(ring, order, model.dims(), model.means(), model.stds(), z,
                                  factors, rg);
}

/// Score-function estimator with the batch-mean baseline:
///   (1/l) sum_i grad log p(z_i) (d_i - mean(d)).
inline GradPsi reinforce_grad(const TripModel& model,
                              const std::vector<std::vector<double>>& samples,
                              std::span<const double> scores)
{
  if (samples.size() != scores.size())
    throw argument_error("need one score per sample");
  const std::size_t l = samples.size();
  if (l < 2)
    throw argument_error("the mean baseline needs at least two samples");
  // Mean taken relative to the first score so equal scores cancel exactly.
  double shift = 0.0;
  for (std::size_t i = 0; i < l; ++i)
    shift += scores[i] - scores[0];
  const double baseline = scores[0] + shift / static_cast<double>(l);

  GradPsi total;
  for (std::size_t i = 0; i < l; ++i) {
    auto g = grad_log_density(model, samples[i]).grad;
    const double centred = scores[i] - baseline;
    if (i == 0) {
      total = GradPsi::zeros_like(g);
    }
    total.add_scaled(g, centred);
  }
  total.scale(1.0 / static_cast<double>(l));
  return total;
}

struct ElboEstimate {
  double elbo = 0.0;
  double kl = 0.0;
  double elbo_std_error = 0.0;
  double kl_std_error = 0.0;
};

/**
 * Monte-Carlo ELBO and KL(q || p) for a diagonal Gaussian q:
 *   z_i = q_mean + eps_i * q_std,
 *   kl   = mean[log q(z_i) - log p(z_i)],
 *   elbo = mean[recon_logp(z_i) + log p(z_i) - log q(z_i)].
 */
template <class Rng>
ElboEstimate kl_and_elbo_mc(const TripModel& model, std::span<const double> q_mean,
                            std::span<const double> q_std,
                            const std::function<double(std::span<const double>)>& recon_logp,
                            std::size_t l, Rng& rng)
{
  const std::size_t d = model.dims();
  if (q_mean.size() != d || q_std.size() != d)
    throw argument_error("q parameters must have one entry per dimension");
  for (double s : q_std)
    if (!(s > 0.0) || !std::isfinite(s))
      throw argument_error("q_std must be positive");
  if (l == 0)
    throw argument_error("need at least one Monte-Carlo sample");

  constexpr double half_log_2pi = 0.91893853320467274178;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(d);
  double kl_sum = 0.0, kl_sq = 0.0, elbo_sum = 0.0, elbo_sq = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    double log_q = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double eps = normal(rng);
      z[k] = q_mean[k] + eps * q_std[k];
      log_q += -0.5 * eps * eps - std::log(q_std[k]) - half_log_2pi;
    }
    const double log_p = log_density(model, z);
    const double kl_i = log_q - log_p;
    const double elbo_i = (recon_logp ? recon_logp(z) : 0.0) - kl_i;
    kl_sum += kl_i;
    kl_sq += kl_i * kl_i;
    elbo_sum += elbo_i;
    elbo_sq += elbo_i * elbo_i;
  }
  const double n = static_cast<double>(l);
  auto std_error = [n](double sum, double sq) {
    if (n < 2.0)
      return 0.0;
    const double mean = sum / n;
    const double var = std::max(0.0, (sq - n * mean * mean) / (n - 1.0));
    return std::sqrt(var / n);
  };
  return {elbo_sum / n, kl_sum / n, std_error(elbo_sum, elbo_sq), std_error(kl_sum, kl_sq)};
}

inline ElboEstimate kl_and_elbo_mc(const TripModel& model, std::span<const double> q_mean,
                                   std::span<const double> q_std,
                                   const std::function<double(std::span<const double>)>& recon_logp,
                                   std::size_t l, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  return kl_and_elbo_mc(model, q_mean, q_std, recon_logp, l, rng);
}

} // namespace trip
