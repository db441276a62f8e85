#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trip/core_tensor.hpp"
#include "trip/detail/ring.hpp"
#include "trip/trip_model.hpp"

namespace trip {

struct AttributeSpec {
  std::string name;
  std::size_t cardinality = 0;

  bool operator==(const AttributeSpec&) const = default;
};

/**
 * Joint distribution over d continuous latents and c discrete attributes,
 * all sharing one tensor ring. `order[p]` is the variable at ring position
 * p: ids 0..d-1 are latents, d..d+c-1 are attributes.
 */
class JointModel {
public:
  JointModel() = default;

  JointModel(std::vector<CoreTensor> latent_cores, std::vector<std::vector<double>> means,
             std::vector<std::vector<double>> stds, std::vector<CoreTensor> attribute_cores,
             std::vector<AttributeSpec> attributes, std::vector<std::size_t> order)
      : latent_cores_(std::move(latent_cores)), means_(std::move(means)), stds_(std::move(stds)),
        attribute_cores_(std::move(attribute_cores)), attributes_(std::move(attributes)),
        order_(std::move(order))
  {
    if (latent_cores_.empty())
      throw argument_error("a joint model needs at least one latent dimension");
    TripModel::validate_components(latent_cores_, means_, stds_);
    if (attribute_cores_.size() != attributes_.size())
      throw argument_error("one attribute core per attribute is required");
    for (std::size_t a = 0; a < attributes_.size(); ++a)
      if (attribute_cores_[a].categories() != attributes_[a].cardinality)
        throw argument_error("attribute '" + attributes_[a].name + "' has cardinality " +
                             std::to_string(attributes_[a].cardinality) + " but its core has " +
                             std::to_string(attribute_cores_[a].categories()) + " slices");
    const std::size_t n = ring_size();
    if (order_.size() != n)
      throw argument_error("permutation must cover all " + std::to_string(n) + " variables");
    position_.assign(n, n);
    for (std::size_t p = 0; p < n; ++p) {
      if (order_[p] >= n || position_[order_[p]] != n)
        throw argument_error("permutation is not a bijection");
      position_[order_[p]] = p;
    }
    CoreSet::check_ring(ring());
  }

  /// The c = 0 model whose ring is exactly `trip`'s.
  static JointModel from_trip(const TripModel& trip)
  {
    std::vector<std::size_t> order(trip.dims());
    for (std::size_t k = 0; k < order.size(); ++k)
      order[k] = k;
    return JointModel(trip.cores().cores(), trip.means(), trip.stds(), {}, {}, std::move(order));
  }

  std::size_t latent_dims() const noexcept { return latent_cores_.size(); }
  std::size_t attribute_count() const noexcept { return attribute_cores_.size(); }
  std::size_t ring_size() const noexcept { return latent_dims() + attribute_count(); }

  const std::vector<CoreTensor>& latent_cores() const noexcept { return latent_cores_; }
  const std::vector<CoreTensor>& attribute_cores() const noexcept { return attribute_cores_; }
  const std::vector<std::vector<double>>& means() const noexcept { return means_; }
  const std::vector<std::vector<double>>& stds() const noexcept { return stds_; }
  const std::vector<AttributeSpec>& attributes() const noexcept { return attributes_; }
  const std::vector<std::size_t>& order() const noexcept { return order_; }
  std::size_t position_of(std::size_t variable) const { return position_.at(variable); }

  bool is_latent(std::size_t variable) const noexcept { return variable < latent_dims(); }

  const CoreTensor& core_of(std::size_t variable) const
  {
    return is_latent(variable) ? latent_cores_.at(variable)
                               : attribute_cores_.at(variable - latent_dims());
  }

  detail::RingView ring() const
  {
    detail::RingView r;
    r.reserve(ring_size());
    for (std::size_t v : order_)
      r.push_back(&core_of(v));
    return r;
  }

  std::optional<std::size_t> attribute_index(const std::string& name) const
  {
    for (std::size_t a = 0; a < attributes_.size(); ++a)
      if (attributes_[a].name == name)
        return a;
    return std::nullopt;
  }

private:
  std::vector<CoreTensor> latent_cores_;
  std::vector<std::vector<double>> means_;
  std::vector<std::vector<double>> stds_;
  std::vector<CoreTensor> attribute_cores_;
  std::vector<AttributeSpec> attributes_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> position_;
};

/// Observed attribute values by attribute index; absent ones are missing.
class PartialAttributes {
public:
  PartialAttributes() = default;

  PartialAttributes& observe(std::size_t attribute, std::size_t value)
  {
    observed_[attribute] = value;
    return *this;
  }

  bool contains(std::size_t a) const { return observed_.count(a) != 0; }
  bool empty() const noexcept { return observed_.empty(); }
  const std::map<std::size_t, std::size_t>& observed() const noexcept { return observed_; }

  void validate(const JointModel& model) const
  {
    for (const auto& [a, v] : observed_) {
      if (a >= model.attribute_count())
        throw range_error("attribute " + std::to_string(a) + " out of range");
      if (v >= model.attributes()[a].cardinality)
        throw range_error("value " + std::to_string(v) + " out of range for attribute '" +
                          model.attributes()[a].name + "'");
    }
  }

private:
  std::map<std::size_t, std::size_t> observed_;
};

namespace detail {

inline std::vector<Factor> joint_factors(const JointModel& model, const ContinuousMask& z,
                                         const PartialAttributes& y)
{
  z.validate(model.latent_dims());
  y.validate(model);
  std::vector<Factor> factors(model.ring_size());
  for (const auto& [k, value] : z.observed())
    factors[model.position_of(k)] = gaussian_factor(model.means()[k], model.stds()[k], value);
  for (const auto& [a, v] : y.observed())
    factors[model.position_of(model.latent_dims() + a)] = Factor::slice_factor(v);
  return factors;
}

} // namespace detail

/// log p(z_M, y_ob): one ring pass in permuted order.
inline double log_joint(const JointModel& model, const ContinuousMask& z,
                        const PartialAttributes& y)
{
  const auto factors = detail::joint_factors(model, z, y);
  return detail::log_ring_ratio(model.ring(), factors);
}

/// log p(y_ob | z) for a fully observed latent vector.
inline double log_attr_given_z(const JointModel& model, std::span<const double> z,
                               const PartialAttributes& y)
{
  if (z.size() != model.latent_dims())
    throw argument_error("latent vector has " + std::to_string(z.size()) +
                         " coordinates, expected " + std::to_string(model.latent_dims()));
  if (y.empty())
    return 0.0;
  const auto mask = ContinuousMask::full(z);
  return log_joint(model, mask, y) - log_joint(model, mask, PartialAttributes{});
}

/// z ~ p(z | y_ob); missing attributes are summed out.
template <class Rng>
std::vector<double> sample_given_attrs(const JointModel& model, const PartialAttributes& y,
                                       Rng& rng)
{
  auto factors = detail::joint_factors(model, ContinuousMask{}, y);
  const auto ring = model.ring();
  if (detail::log_ring_ratio(ring, factors) == -std::numeric_limits<double>::infinity())
    throw null_condition_error("observed attributes have zero probability");
  std::vector<bool> free(model.ring_size(), false);
  for (std::size_t k = 0; k < model.latent_dims(); ++k)
    free[model.position_of(k)] = true;
  std::vector<double> z(model.latent_dims(), 0.0);
  detail::sample_chain(ring, factors, free, [&](std::size_t pos, std::span<const double> probs) {
    const std::size_t k = model.order()[pos];
    z[k] = detail::draw_mixture(probs, model.means()[k], model.stds()[k], rng);
    return detail::gaussian_factor(model.means()[k], model.stds()[k], z[k]);
  });
  return z;
}

inline std::vector<double> sample_given_attrs(const JointModel& model, const PartialAttributes& y,
                                              std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  return sample_given_attrs(model, y, rng);
}

/**
 * The latent marginal p(z) as a plain TripModel: each attribute's summed
 * core is folded into the latent core preceding it on the ring. Requires
 * the latents to appear in increasing order around the ring (as produced by
 * make_permutation).
 */
inline TripModel embedded_trip(const JointModel& model)
{
  const std::size_t n = model.ring_size();
  const std::size_t d = model.latent_dims();
  const std::size_t start = model.position_of(0);
  std::vector<CoreTensor> cores;
  cores.reserve(d);
  std::size_t expected = 0;
  for (std::size_t step = 0; step < n;) {
    const std::size_t v = model.order()[(start + step) % n];
    if (v != expected)
      throw argument_error("latents are not in ring order; cannot fold attributes");
    std::vector<Matrix> slices = model.latent_cores()[v].abs_slices();
    ++step;
    for (; step < n && !model.is_latent(model.order()[(start + step) % n]); ++step) {
      const Matrix& summed = model.core_of(model.order()[(start + step) % n]).summed();
      for (auto& s : slices)
        s = s * summed;
    }
    cores.emplace_back(std::move(slices));
    ++expected;
  }
  return TripModel(CoreSet(std::move(cores)), model.means(), model.stds());
}

/// Uniform random interleaving of d latents and c attributes; each group
/// keeps its own relative order.
inline std::vector<std::size_t> make_permutation(std::size_t d, std::size_t c, std::uint64_t seed)
{
  std::vector<char> is_attr(d + c, 0);
  std::fill(is_attr.begin() + static_cast<std::ptrdiff_t>(d), is_attr.end(), 1);
  std::mt19937_64 rng(seed);
  std::shuffle(is_attr.begin(), is_attr.end(), rng);
  std::vector<std::size_t> order(d + c);
  std::size_t next_latent = 0, next_attr = d;
  for (std::size_t p = 0; p < d + c; ++p)
    order[p] = is_attr[p] ? next_attr++ : next_latent++;
  return order;
}

} // namespace trip
