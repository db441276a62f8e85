#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "trip/core_tensor.hpp"
#include "trip/error.hpp"

// Contraction engine shared by the discrete, continuous and joint models.
//
// Each ring position j carries a factor describing how its core enters the
// product:  M_j = sum_s w_j[s] |Q_j[s]|.  Marginalized positions use
// w = 1 (the summed core), observed discrete positions a one-hot w, and
// observed continuous positions the Gaussian likelihoods of each component.
// The normalizer always uses the summed cores.
namespace trip::detail {

using RingView = std::vector<const CoreTensor*>;

struct Factor {
  enum class Kind { summed, slice, weighted };

  Kind kind = Kind::summed;
  std::size_t slice = 0;
  std::vector<double> weights; // weighted only; max entry is 1
  double log_scale = 0.0;      // log of the divisor taken out of the weights

  static Factor summed_factor() { return {}; }
  static Factor slice_factor(std::size_t s) { return {Kind::slice, s, {}, 0.0}; }
};

/// Factor for an observed continuous value: w[s] = N(z | mean[s], std[s]),
/// evaluated in log space and shifted by its max.
inline Factor gaussian_factor(std::span<const double> means, std::span<const double> stds,
                              double z)
{
  constexpr double half_log_2pi = 0.91893853320467274178;
  Factor f;
  f.kind = Factor::Kind::weighted;
  f.weights.resize(means.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < means.size(); ++s) {
    const double u = (z - means[s]) / stds[s];
    f.weights[s] = -0.5 * u * u - std::log(stds[s]) - half_log_2pi;
    mx = std::max(mx, f.weights[s]);
  }
  for (auto& w : f.weights)
    w = std::exp(w - mx);
  f.log_scale = mx;
  return f;
}

// Weighted sum of the |slices| into `out`, reusing its storage.
inline void weighted_sum_into(const CoreTensor& core, std::span<const double> weights, Matrix& out)
{
  out.resize(core.rows(), core.cols());
  out.reshaped().noalias() =
      core.abs_stack() * Eigen::Map<const Eigen::VectorXd>(weights.data(), weights.size());
}

inline Matrix factor_matrix(const CoreTensor& core, const Factor& f)
{
  switch (f.kind) {
  case Factor::Kind::summed:
    return core.summed();
  case Factor::Kind::slice:
    return core.abs_slice(f.slice);
  case Factor::Kind::weighted:
    break;
  }
  Matrix m;
  weighted_sum_into(core, f.weights, m);
  return m;
}

/// Scratch storage reused along one chain of products.
struct ChainBuffers {
  Matrix factor, product;
};

// Divide by the max-abs entry and accumulate its log. Zero buffers stay zero.
inline void rescale(Matrix& buf, double& log_acc)
{
  const double s = buf.cwiseAbs().maxCoeff();
  if (s > 0.0 && std::isfinite(s)) {
    buf /= s;
    log_acc += std::log(s);
  }
}

inline void multiply_right(Matrix& buf, const CoreTensor& core, const Factor& f, double& log_acc,
                           ChainBuffers& scratch)
{
  const Matrix* m = &core.summed();
  if (f.kind == Factor::Kind::weighted) {
    weighted_sum_into(core, f.weights, scratch.factor);
    m = &scratch.factor;
  } else if (f.kind == Factor::Kind::slice) {
    m = &core.abs_slice(f.slice);
  }
  scratch.product.noalias() = buf * *m;
  buf.swap(scratch.product);
  rescale(buf, log_acc);
}

inline void multiply_right(Matrix& buf, const CoreTensor& core, const Factor& f, double& log_acc)
{
  ChainBuffers scratch;
  multiply_right(buf, core, f, log_acc, scratch);
}

/// log Tr(prod_j |Q_j|[.]) with every position summed; throws if not positive.
inline double log_normalizer(const RingView& ring)
{
  Matrix norm = Matrix::Identity(ring.front()->rows(), ring.front()->rows());
  Matrix product;
  double log_acc = 0.0;
  for (const CoreTensor* core : ring) {
    product.noalias() = norm * core->summed();
    norm.swap(product);
    rescale(norm, log_acc);
  }
  const double tr = norm.trace();
  if (!(tr > 0.0) || !std::isfinite(tr))
    throw degenerate_error("normalizer of the tensor ring is not positive");
  return std::log(tr) + log_acc;
}

/// log Tr(prod M_j) - log Tr(prod summed_j); the normalized log-probability.
inline double log_ring_ratio(const RingView& ring, std::span<const Factor> factors)
{
  const double log_norm = log_normalizer(ring);
  Matrix buff = Matrix::Identity(ring.front()->rows(), ring.front()->rows());
  ChainBuffers scratch;
  double log_acc = 0.0;
  for (std::size_t j = 0; j < ring.size(); ++j) {
    multiply_right(buff, *ring[j], factors[j], log_acc, scratch);
    log_acc += factors[j].log_scale;
  }
  const double tr = buff.trace();
  if (!(tr > 0.0))
    return -std::numeric_limits<double>::infinity();
  return std::log(tr) + log_acc - log_norm;
}

/// Suffix products S[k] = M_k ... M_{D-1}, each rescaled; S[D] = I.
inline std::vector<Matrix> suffix_products(const RingView& ring, std::span<const Factor> factors)
{
  const std::size_t d = ring.size();
  std::vector<Matrix> suffix(d + 1);
  suffix[d] = Matrix::Identity(ring.front()->rows(), ring.front()->rows());
  double unused = 0.0;
  for (std::size_t k = d; k-- > 0;) {
    suffix[k] = factor_matrix(*ring[k], factors[k]) * suffix[k + 1];
    rescale(suffix[k], unused);
  }
  return suffix;
}

/// Normalized p(value at position k) given prefix product P (positions < k)
/// and suffix product S (positions > k): p(v) ~ Tr(P |Q_k[v]| S).
inline std::vector<double> slice_probabilities(const CoreTensor& core, const Matrix& prefix,
                                               const Matrix& suffix)
{
  const Matrix t = suffix * prefix; // cols(k) x rows(k)
  std::vector<double> p(core.categories());
  double total = 0.0;
  for (std::size_t v = 0; v < core.categories(); ++v) {
    p[v] = core.abs_slice(v).cwiseProduct(t.transpose()).sum();
    total += p[v];
  }
  if (!(total > 0.0) || !std::isfinite(total))
    throw null_condition_error("conditioning event has zero probability");
  for (auto& x : p)
    x /= total;
  return p;
}

/**
 * Chain-rule sampling over the positions flagged in `free`, in ring order.
 * Free positions must enter `factors` as summed; each is replaced by the
 * factor returned from `choose(position, probabilities)` before moving on,
 * so later positions condition on everything drawn so far and on every
 * fixed position.
 */
template <class Choose>
void sample_chain(const RingView& ring, std::vector<Factor>& factors,
                  const std::vector<bool>& free, Choose&& choose)
{
  const auto suffix = suffix_products(ring, factors);
  Matrix prefix = Matrix::Identity(ring.front()->rows(), ring.front()->rows());
  ChainBuffers scratch;
  double unused = 0.0;
  for (std::size_t k = 0; k < ring.size(); ++k) {
    if (free[k]) {
      const auto probs = slice_probabilities(*ring[k], prefix, suffix[k + 1]);
      factors[k] = choose(k, std::span<const double>(probs));
    }
    multiply_right(prefix, *ring[k], factors[k], unused, scratch);
  }
}

/// Draw an index from a normalized probability vector with one uniform variate.
template <class Rng>
std::size_t draw_categorical(std::span<const double> probs, Rng& rng)
{
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    acc += probs[v];
    if (u < acc)
      return v;
  }
  // u landed in the rounding gap above the last partial sum.
  for (std::size_t v = probs.size(); v-- > 0;)
    if (probs[v] > 0.0)
      return v;
  return probs.size() - 1;
}

struct RingGradient {
  double log_prob = 0.0;
  // d log p / d |Q_j[s]|, per position and slice.
  std::vector<std::vector<Matrix>> d_abs;
  // d log p / d w_j[s] for weighted positions (empty otherwise).
  std::vector<std::vector<double>> d_weights;
};

namespace grad_impl {

// For each position j: G_j = d log Tr(prod M) / d M_j = (S_j P_j)^T / Tr.
// P_j and S_j carry independent scales; the ratio cancels them.
inline std::vector<Matrix> trace_adjoints(const RingView& ring, const std::vector<Matrix>& mats,
                                          double& log_trace)
{
  const std::size_t d = ring.size();
  const Eigen::Index m0 = static_cast<Eigen::Index>(ring.front()->rows());
  std::vector<Matrix> prefix(d);
  prefix[0] = Matrix::Identity(m0, m0);
  double log_acc = 0.0;
  for (std::size_t j = 1; j < d; ++j) {
    prefix[j] = prefix[j - 1] * mats[j - 1];
    rescale(prefix[j], log_acc);
  }
  Matrix suffix = Matrix::Identity(m0, m0);
  double unused = 0.0;
  std::vector<Matrix> adj(d);
  for (std::size_t j = d; j-- > 0;) {
    const Matrix t = suffix * prefix[j];
    const double tr = mats[j].cwiseProduct(t.transpose()).sum();
    if (!(tr > 0.0) || !std::isfinite(tr))
      throw degenerate_error("log-probability is not finite; gradient undefined");
    adj[j] = t.transpose() / tr;
    if (j == d - 1) {
      // Same trace as the full forward product, with prefix scales.
      log_trace = std::log(tr) + log_acc;
    }
    suffix = mats[j] * suffix;
    rescale(suffix, unused);
  }
  return adj;
}

} // namespace grad_impl

/// Reverse-mode gradient of log_ring_ratio with respect to |Q| and weights.
inline RingGradient ring_gradient(const RingView& ring, std::span<const Factor> factors)
{
  const std::size_t d = ring.size();
  std::vector<Matrix> buff_mats(d), norm_mats(d);
  for (std::size_t j = 0; j < d; ++j) {
    buff_mats[j] = factor_matrix(*ring[j], factors[j]);
    norm_mats[j] = ring[j]->summed();
  }
  double log_buff = 0.0, log_norm = 0.0;
  log_normalizer(ring); // throws on a degenerate ring
  const auto norm_adj = grad_impl::trace_adjoints(ring, norm_mats, log_norm);
  const auto buff_adj = grad_impl::trace_adjoints(ring, buff_mats, log_buff);

  RingGradient g;
  g.log_prob = log_buff - log_norm;
  for (const auto& f : factors)
    g.log_prob += f.log_scale;
  g.d_abs.resize(d);
  g.d_weights.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const CoreTensor& core = *ring[j];
    const Factor& f = factors[j];
    auto& out = g.d_abs[j];
    out.assign(core.categories(), Matrix());
    for (std::size_t s = 0; s < core.categories(); ++s) {
      double w = 1.0;
      if (f.kind == Factor::Kind::weighted)
        w = f.weights[s];
      else if (f.kind == Factor::Kind::slice)
        w = (s == f.slice) ? 1.0 : 0.0;
      out[s] = w * buff_adj[j] - norm_adj[j];
    }
    if (f.kind == Factor::Kind::weighted) {
      g.d_weights[j].resize(core.categories());
      for (std::size_t s = 0; s < core.categories(); ++s)
        g.d_weights[j][s] = core.abs_slice(s).cwiseProduct(buff_adj[j]).sum();
    }
  }
  return g;
}

} // namespace trip::detail
