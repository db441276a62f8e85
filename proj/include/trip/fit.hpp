#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trip/gradient.hpp"
#include "trip/joint_model.hpp"
#include "trip/detail/math.hpp"
#include "trip/trip_model.hpp"

namespace trip {

struct FitConfig {
  double learning_rate = 1e-3;
  int epochs = 100;
  std::size_t batch_size = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Refit means/stds and redraw cores after epoch 1 and then every this many
  // epochs. Zero disables.
  int reinit_period_epochs = 0;
  int gmm_iterations = 50;
  std::uint64_t seed = 0;

  void validate() const
  {
    if (!(learning_rate > 0.0))
      throw argument_error("learning rate must be positive");
    if (epochs < 1)
      throw argument_error("epochs must be at least 1");
    if (batch_size < 1)
      throw argument_error("batch size must be at least 1");
    if (reinit_period_epochs < 0)
      throw argument_error("re-initialization period must be non-negative");
  }
};

/// First-order ascent with bias-corrected adaptive moments.
class AdamOptimizer {
public:
  AdamOptimizer(std::size_t n, double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0)
  {
  }

  /// params += lr * m_hat / (sqrt(v_hat) + eps); `grad` is the ascent direction.
  void step(std::vector<double>& params, std::span<const double> grad)
  {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] += lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  void reset()
  {
    std::fill(m_.begin(), m_.end(), 0.0);
    std::fill(v_.begin(), v_.end(), 0.0);
    t_ = 0;
  }

private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

struct Gmm1d {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> stds;
};

/**
 * One-dimensional Gaussian mixture by EM with k-means++ seeding. Components
 * are returned sorted by mean. Standard deviations are floored at 1e-3 of
 * the data spread so a component collapsing onto one point stays usable.
 */
template <class Rng>
Gmm1d fit_gmm_1d(std::span<const double> x, std::size_t k, int iterations, Rng& rng)
{
  if (x.empty())
    throw argument_error("no data rows");
  if (k == 0)
    throw argument_error("need at least one component");
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x)
    var += (v - mean) * (v - mean);
  var /= n;
  const double spread = var > 0.0 ? std::sqrt(var) : 1.0;
  const double floor = 1e-3 * spread;

  // k-means++ seeding
  std::vector<double> centres;
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  centres.push_back(x[pick(rng)]);
  std::vector<double> dist(x.size());
  while (centres.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centres)
        best = std::min(best, (x[i] - c) * (x[i] - c));
      dist[i] = best;
      total += best;
    }
    if (!(total > 0.0)) {
      // Fewer distinct points than components.
      centres.push_back(centres.back() + spread * static_cast<double>(centres.size()));
      continue;
    }
    const double u = unif(rng) * total;
    double acc = 0.0;
    std::size_t chosen = x.size() - 1;
    for (std::size_t i = 0; i < x.size(); ++i) {
      acc += dist[i];
      if (u < acc) {
        chosen = i;
        break;
      }
    }
    centres.push_back(x[chosen]);
  }

  Gmm1d g;
  g.means = centres;
  g.weights.assign(k, 1.0 / static_cast<double>(k));
  g.stds.assign(k, std::max(spread / static_cast<double>(k), floor));

  std::vector<double> resp(x.size() * k);
  std::vector<double> logs(k);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t c = 0; c < k; ++c)
        logs[c] = std::log(g.weights[c]) + detail::log_normal_pdf(x[i], g.means[c], g.stds[c]);
      const double lse = detail::log_sum_exp(logs);
      for (std::size_t c = 0; c < k; ++c)
        resp[i * k + c] = std::exp(logs[c] - lse);
    }
    for (std::size_t c = 0; c < k; ++c) {
      double w = 0.0, mu = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        w += resp[i * k + c];
        mu += resp[i * k + c] * x[i];
      }
      if (w < 1e-12) {
        // Dead component: leave it where it is with a small weight.
        g.weights[c] = 1e-12;
        continue;
      }
      mu /= w;
      double s2 = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i)
        s2 += resp[i * k + c] * (x[i] - mu) * (x[i] - mu);
      g.weights[c] = w / n;
      g.means[c] = mu;
      g.stds[c] = std::max(std::sqrt(s2 / w), floor);
    }
  }

  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return g.means[a] < g.means[b]; });
  Gmm1d sorted;
  for (auto i : idx) {
    sorted.weights.push_back(g.weights[i]);
    sorted.means.push_back(g.means[i]);
    sorted.stds.push_back(g.stds[i]);
  }
  return sorted;
}

template <class Model>
struct FitResult {
  Model model;
  std::vector<double> epoch_nll; // mean negative log-likelihood per epoch
};

using EpochCallback = std::function<void(int epoch, double mean_nll)>;

namespace detail {

// Flat parameter vector for a joint model with uniform core size m:
// latent cores, attribute cores (each slice row-major), means, log stds.
struct ParamLayout {
  std::size_t d = 0;
  std::size_t components = 0;
  std::size_t core_size = 0;
  std::vector<AttributeSpec> attributes;
  std::vector<std::size_t> order;

  std::size_t core_block() const { return components * core_size * core_size; }
  std::size_t attr_offset() const { return d * core_block(); }
  std::size_t means_offset() const
  {
    std::size_t off = attr_offset();
    for (const auto& a : attributes)
      off += a.cardinality * core_size * core_size;
    return off;
  }
  std::size_t log_stds_offset() const { return means_offset() + d * components; }
  std::size_t size() const { return log_stds_offset() + d * components; }

  JointModel unpack(std::span<const double> p) const
  {
    const std::size_t mm = core_size * core_size;
    std::vector<CoreTensor> latent;
    for (std::size_t k = 0; k < d; ++k)
      latent.emplace_back(components, core_size, core_size, p.subspan(k * core_block(), core_block()));
    std::vector<CoreTensor> attr;
    std::size_t off = attr_offset();
    for (const auto& a : attributes) {
      attr.emplace_back(a.cardinality, core_size, core_size, p.subspan(off, a.cardinality * mm));
      off += a.cardinality * mm;
    }
    std::vector<std::vector<double>> means(d), stds(d);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t s = 0; s < components; ++s) {
        means[k].push_back(p[means_offset() + k * components + s]);
        stds[k].push_back(std::exp(p[log_stds_offset() + k * components + s]));
      }
    return JointModel(std::move(latent), std::move(means), std::move(stds), std::move(attr),
                      attributes, order);
  }
};

// Parameters that left the representable range (infinite or zero sigma,
// non-finite entries) count as divergence.
inline JointModel unpack_checked(const ParamLayout& layout, std::span<const double> p, int epoch)
{
  try {
    return layout.unpack(p);
  } catch (const argument_error&) {
    throw divergence_error("parameters became non-finite at epoch " + std::to_string(epoch),
                           epoch);
  }
}

template <class Rng>
void init_cores(const ParamLayout& layout, std::vector<double>& p, Rng& rng)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < layout.means_offset(); ++i)
    p[i] = normal(rng);
}

template <class Rng>
void init_components(const ParamLayout& layout, const std::vector<std::vector<double>>& data,
                     int gmm_iterations, std::vector<double>& p, Rng& rng)
{
  std::vector<double> column(data.size());
  for (std::size_t k = 0; k < layout.d; ++k) {
    for (std::size_t i = 0; i < data.size(); ++i)
      column[i] = data[i][k];
    const Gmm1d g = fit_gmm_1d(column, layout.components, gmm_iterations, rng);
    for (std::size_t s = 0; s < layout.components; ++s) {
      p[layout.means_offset() + k * layout.components + s] = g.means[s];
      p[layout.log_stds_offset() + k * layout.components + s] = std::log(g.stds[s]);
    }
  }
}

} // namespace detail

/**
 * Maximum-likelihood fit of a joint latent/attribute model by minibatch
 * gradient ascent on the mean log p(z, y_ob). Missing attributes enter
 * through exact marginalization. `attrs` may be empty (no attributes) or
 * hold one row of optional values per data row.
 */
inline FitResult<JointModel>
fit_joint(const std::vector<std::vector<double>>& latents,
          const std::vector<std::vector<std::optional<std::size_t>>>& attrs,
          const std::vector<AttributeSpec>& attributes, std::size_t components,
          std::size_t core_size, const std::vector<std::size_t>& order, const FitConfig& config,
          const EpochCallback& on_epoch = {})
{
  config.validate();
  if (latents.empty())
    throw argument_error("no data rows");
  if (components < 1 || core_size < 1)
    throw argument_error("components and core size must be at least 1");
  const std::size_t d = latents.front().size();
  if (d == 0)
    throw argument_error("data has no latent columns");
  for (const auto& row : latents) {
    if (row.size() != d)
      throw argument_error("ragged data rows");
    for (double v : row)
      if (!std::isfinite(v))
        throw argument_error("data contains non-finite values");
  }
  if (!attributes.empty() && attrs.size() != latents.size())
    throw argument_error("need one attribute row per data row");

  const std::size_t n = latents.size();
  std::vector<PartialAttributes> ys(n);
  if (!attributes.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      if (attrs[i].size() != attributes.size())
        throw argument_error("attribute row " + std::to_string(i) + " has the wrong length");
      for (std::size_t a = 0; a < attributes.size(); ++a)
        if (attrs[i][a]) {
          if (*attrs[i][a] >= attributes[a].cardinality)
            throw argument_error("attribute value out of range in row " + std::to_string(i));
          ys[i].observe(a, *attrs[i][a]);
        }
    }
  }

  detail::ParamLayout layout{d, components, core_size, attributes, order};
  if (order.size() != d + attributes.size())
    throw argument_error("permutation must cover every latent and attribute");

  std::mt19937_64 rng(config.seed);
  std::vector<double> params(layout.size(), 0.0);
  detail::init_cores(layout, params, rng);
  detail::init_components(layout, latents, config.gmm_iterations, params, rng);

  AdamOptimizer adam(params.size(), config.learning_rate, config.beta1, config.beta2,
                     config.epsilon);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> grad(params.size());
  FitResult<JointModel> result;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const JointModel model = detail::unpack_checked(layout, params, epoch);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = perm[b];
        const auto g = grad_log_joint(model, latents[i], ys[i]);
        batch_loss -= g.log_density;
        const auto flat = g.grad.flatten();
        for (std::size_t j = 0; j < flat.size(); ++j)
          grad[j] += flat[j];
      }
      if (!std::isfinite(batch_loss))
        throw divergence_error("non-finite loss at epoch " + std::to_string(epoch), epoch);
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& g : grad)
        g *= inv;
      adam.step(params, grad);
      epoch_loss += batch_loss;
    }
    const double nll = epoch_loss / static_cast<double>(n);
    result.epoch_nll.push_back(nll);
    if (on_epoch)
      on_epoch(epoch, nll);

    const int period = config.reinit_period_epochs;
    if (period > 0 && epoch < config.epochs && (epoch == 1 || (epoch - 1) % period == 0)) {
      detail::init_cores(layout, params, rng);
      detail::init_components(layout, latents, config.gmm_iterations, params, rng);
      adam.reset();
    }
  }
  result.model = detail::unpack_checked(layout, params, config.epochs);
  return result;
}

/// Maximum-likelihood TRIP fit with N components per dimension and core size m.
inline FitResult<TripModel> fit_mle(const std::vector<std::vector<double>>& data,
                                    std::size_t components, std::size_t core_size,
                                    const FitConfig& config, const EpochCallback& on_epoch = {})
{
  if (data.empty())
    throw argument_error("no data rows");
  std::vector<std::size_t> order(data.front().size());
  std::iota(order.begin(), order.end(), 0);
  auto joint = fit_joint(data, {}, {}, components, core_size, order, config, on_epoch);
  FitResult<TripModel> out;
  out.epoch_nll = std::move(joint.epoch_nll);
  out.model = TripModel(CoreSet(joint.model.latent_cores()), joint.model.means(),
                        joint.model.stds());
  return out;
}

} // namespace trip
