#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "trip/core_tensor.hpp"
#include "trip/joint_model.hpp"
#include "trip/trip_model.hpp"

// Model files: JSON with version tag "trip-v1". Core payloads are nested
// arrays [category][row][col]; doubles are written in shortest round-trip
// form so load(save(m)) reproduces every parameter bit for bit.
namespace trip::io {

using json = nlohmann::json;
using AnyModel = std::variant<CoreSet, TripModel, JointModel>;

inline constexpr const char* format_version = "trip-v1";

namespace detail {

inline json core_to_json(const CoreTensor& core)
{
  json slices = json::array();
  for (std::size_t s = 0; s < core.categories(); ++s) {
    json rows = json::array();
    for (std::size_t r = 0; r < core.rows(); ++r) {
      json row = json::array();
      for (std::size_t c = 0; c < core.cols(); ++c)
        row.push_back(core.value(s, r, c));
      rows.push_back(std::move(row));
    }
    slices.push_back(std::move(rows));
  }
  return slices;
}

inline void require(bool ok, const std::string& what)
{
  if (!ok)
    throw format_error(what);
}

inline CoreTensor core_from_json(const json& j, std::size_t categories, std::size_t rows,
                                 const std::string& label)
{
  require(j.is_array() && j.size() == categories,
          label + ": expected " + std::to_string(categories) + " slices");
  std::size_t cols = 0;
  std::vector<double> values;
  for (const auto& slice : j) {
    require(slice.is_array() && slice.size() == rows,
            label + ": expected " + std::to_string(rows) + " rows per slice");
    for (const auto& row : slice) {
      require(row.is_array() && !row.empty(), label + ": rows must be non-empty arrays");
      if (cols == 0)
        cols = row.size();
      require(row.size() == cols, label + ": ragged rows");
      for (const auto& v : row) {
        require(v.is_number(), label + ": payload entries must be numbers");
        values.push_back(v.get<double>());
      }
    }
  }
  return CoreTensor(categories, rows, cols, values);
}

inline json dims_json(const std::vector<CoreTensor>& cores)
{
  json dims = json::array();
  for (const auto& c : cores)
    dims.push_back({{"N", c.categories()}, {"m", c.rows()}});
  return dims;
}

inline std::vector<CoreTensor> cores_from_json(const json& doc, const char* dims_key,
                                               const char* cores_key)
{
  const json& dims = doc.at(dims_key);
  const json& payload = doc.at(cores_key);
  require(dims.is_array() && payload.is_array() && dims.size() == payload.size(),
          std::string(cores_key) + ": payload length does not match " + dims_key);
  std::vector<CoreTensor> cores;
  for (std::size_t k = 0; k < dims.size(); ++k)
    cores.push_back(core_from_json(payload[k], dims[k].at("N").get<std::size_t>(),
                                   dims[k].at("m").get<std::size_t>(),
                                   std::string(cores_key) + "[" + std::to_string(k) + "]"));
  return cores;
}

inline std::vector<std::vector<double>> table_from_json(const json& j,
                                                        const std::vector<CoreTensor>& cores,
                                                        const char* key)
{
  require(j.is_array() && j.size() == cores.size(),
          std::string(key) + ": expected one entry per dimension");
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < cores.size(); ++k) {
    require(j[k].is_array() && j[k].size() == cores[k].categories(),
            std::string(key) + "[" + std::to_string(k) + "]: wrong length");
    out.push_back(j[k].get<std::vector<double>>());
  }
  return out;
}

} // namespace detail

inline json to_json(const AnyModel& model)
{
  json doc;
  doc["version"] = format_version;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, CoreSet>) {
          doc["kind"] = "discrete";
          doc["dims"] = detail::dims_json(m.cores());
          json cores = json::array();
          for (const auto& c : m.cores())
            cores.push_back(detail::core_to_json(c));
          doc["cores"] = std::move(cores);
        } else if constexpr (std::is_same_v<T, TripModel>) {
          doc["kind"] = "continuous";
          doc["dims"] = detail::dims_json(m.cores().cores());
          json cores = json::array();
          for (const auto& c : m.cores().cores())
            cores.push_back(detail::core_to_json(c));
          doc["cores"] = std::move(cores);
          doc["means"] = m.means();
          doc["stds"] = m.stds();
        } else {
          doc["kind"] = "joint";
          doc["dims"] = detail::dims_json(m.latent_cores());
          json cores = json::array();
          for (const auto& c : m.latent_cores())
            cores.push_back(detail::core_to_json(c));
          doc["cores"] = std::move(cores);
          doc["means"] = m.means();
          doc["stds"] = m.stds();
          json attrs = json::array(), attr_cores = json::array();
          for (std::size_t a = 0; a < m.attribute_count(); ++a) {
            attrs.push_back({{"name", m.attributes()[a].name},
                             {"N", m.attributes()[a].cardinality},
                             {"m", m.attribute_cores()[a].rows()}});
            attr_cores.push_back(detail::core_to_json(m.attribute_cores()[a]));
          }
          doc["attributes"] = std::move(attrs);
          doc["attribute_cores"] = std::move(attr_cores);
          doc["permutation"] = m.order();
        }
      },
      model);
  return doc;
}

inline AnyModel from_json(const json& doc)
{
  try {
    detail::require(doc.is_object(), "model file must be a JSON object");
    detail::require(doc.value("version", std::string()) == format_version,
                    std::string("unsupported model version; expected ") + format_version);
    const std::string kind = doc.at("kind").get<std::string>();
    auto cores = detail::cores_from_json(doc, "dims", "cores");
    if (kind == "discrete")
      return CoreSet(std::move(cores));
    auto means = detail::table_from_json(doc.at("means"), cores, "means");
    auto stds = detail::table_from_json(doc.at("stds"), cores, "stds");
    if (kind == "continuous")
      return TripModel(CoreSet(std::move(cores)), std::move(means), std::move(stds));
    detail::require(kind == "joint", "unknown model kind '" + kind + "'");
    auto attr_cores = detail::cores_from_json(doc, "attributes", "attribute_cores");
    std::vector<AttributeSpec> attrs;
    for (const auto& a : doc.at("attributes"))
      attrs.push_back({a.at("name").get<std::string>(), a.at("N").get<std::size_t>()});
    return JointModel(std::move(cores), std::move(means), std::move(stds), std::move(attr_cores),
                      std::move(attrs), doc.at("permutation").get<std::vector<std::size_t>>());
  } catch (const json::exception& e) {
    throw format_error(std::string("malformed model file: ") + e.what());
  } catch (const argument_error& e) {
    throw format_error(std::string("inconsistent model file: ") + e.what());
  }
}

inline void save_model(const AnyModel& model, std::ostream& out)
{
  out << to_json(model).dump(1) << '\n';
}

inline void save_model(const AnyModel& model, const std::string& path)
{
  std::ofstream out(path);
  if (!out)
    throw error("cannot open '" + path + "' for writing");
  save_model(model, out);
}

inline AnyModel load_model(std::istream& in)
{
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw format_error(std::string("model file is not valid JSON: ") + e.what());
  }
  return from_json(doc);
}

inline AnyModel load_model(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw format_error("cannot open model file '" + path + "'");
  return load_model(in);
}

} // namespace trip::io
