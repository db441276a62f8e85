#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "csv.hpp"
#include "trip/io.hpp"
#include "trip/trip.hpp"

namespace trip::cli {
namespace {

// Wrong flags or values that do not fit the model's schema.
class usage_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::set<std::size_t> parse_index_set(const std::string& text)
{
  std::set<std::size_t> out;
  if (trim(text).empty())
    return out;
  for (const auto& tok : split(text)) {
    try {
      out.insert(parse_index(tok, 0));
    } catch (const data_error&) {
      throw usage_error("'" + tok + "' is not a valid index");
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_assignments(const std::string& text)
{
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& tok : split(text)) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw usage_error("expected name=value, got '" + tok + "'");
    out.emplace_back(trim(tok.substr(0, eq)), trim(tok.substr(eq + 1)));
  }
  return out;
}

std::size_t parse_value(const std::string& text)
{
  try {
    return parse_index(text, 0);
  } catch (const data_error&) {
    throw usage_error("'" + text + "' is not a valid value");
  }
}

void write_row(std::ostream& out, std::span<const double> z)
{
  for (std::size_t k = 0; k < z.size(); ++k)
    out << (k ? "," : "") << format_real(z[k]);
  out << '\n';
}

void write_row(std::ostream& out, std::span<const std::size_t> r)
{
  for (std::size_t k = 0; k < r.size(); ++k)
    out << (k ? "," : "") << r[k];
  out << '\n';
}

// ---------------------------------------------------------------- fit

struct FitOptions {
  std::string data;
  std::size_t dims = 0;
  std::size_t components = 2;
  std::size_t core_size = 2;
  int epochs = 100;
  std::size_t batch_size = 128;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  std::string out;
  std::string attr_cols;
  std::string missing_token = "?";
  bool header = false;
  int reinit_period = 0;
};

int cmd_fit(const FitOptions& o, std::ostream& out)
{
  const auto rows = read_csv(o.data, o.header);
  if (rows.empty())
    throw data_error("no data rows");

  std::vector<AttributeSpec> attrs;
  std::vector<bool> explicit_card;
  for (const auto& tok : (trim(o.attr_cols).empty() ? std::vector<std::string>{}
                                                      : split(o.attr_cols))) {
    const auto colon = tok.find(':');
    AttributeSpec a{trim(tok.substr(0, colon)), 0};
    if (a.name.empty())
      throw usage_error("attribute names must be non-empty");
    if (colon != std::string::npos)
      a.cardinality = parse_value(tok.substr(colon + 1));
    explicit_card.push_back(colon != std::string::npos);
    attrs.push_back(a);
  }
  const std::size_t d = o.dims, c = attrs.size();
  if (d == 0)
    throw usage_error("--dims must be at least 1");
  if (rows.front().fields.size() != d + c)
    throw data_error("line " + std::to_string(rows.front().line) + ": expected " +
                     std::to_string(d + c) + " columns (" + std::to_string(d) +
                     " latent + " + std::to_string(c) + " attribute)");

  std::vector<std::vector<double>> latents;
  std::vector<std::vector<std::optional<std::size_t>>> values;
  for (const auto& row : rows) {
    std::vector<double> z(d);
    for (std::size_t k = 0; k < d; ++k)
      z[k] = parse_real(row.fields[k], row.line);
    latents.push_back(std::move(z));
    std::vector<std::optional<std::size_t>> y(c);
    for (std::size_t a = 0; a < c; ++a) {
      const auto& f = row.fields[d + a];
      if (f == o.missing_token)
        continue;
      y[a] = parse_index(f, row.line);
      if (explicit_card[a] && *y[a] >= attrs[a].cardinality)
        throw data_error("line " + std::to_string(row.line) + ": value " + f +
                         " out of range for attribute '" + attrs[a].name + "'");
    }
    values.push_back(std::move(y));
  }
  for (std::size_t a = 0; a < c; ++a) {
    if (explicit_card[a])
      continue;
    std::size_t card = 0;
    for (const auto& y : values)
      if (y[a])
        card = std::max(card, *y[a] + 1);
    attrs[a].cardinality = std::max<std::size_t>(card, 2);
  }

  FitConfig cfg;
  cfg.learning_rate = o.lr;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.seed = o.seed;
  cfg.reinit_period_epochs = o.reinit_period;
  const auto report = [&](int epoch, double nll) { out << epoch << ',' << format_real(nll) << '\n'; };

  if (c == 0) {
    auto fit = fit_mle(latents, o.components, o.core_size, cfg, report);
    io::save_model(fit.model, o.out);
  } else {
    const auto order = make_permutation(d, c, o.seed);
    auto fit = fit_joint(latents, values, attrs, o.components, o.core_size, order, cfg, report);
    io::save_model(fit.model, o.out);
  }
  return exit_ok;
}

// ---------------------------------------------------------------- sample

struct SampleOptions {
  std::string model;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  std::string given;
  std::string resample_dims;
  std::string from;
};

int cmd_sample(const SampleOptions& o, std::ostream& out)
{
  const auto model = io::load_model(o.model);
  std::mt19937_64 rng(o.seed);
  const bool resample = !o.resample_dims.empty() || !o.from.empty();
  if (resample && (o.resample_dims.empty() || o.from.empty()))
    throw usage_error("--resample-dims and --from must be given together");
  if (resample && !o.given.empty())
    throw usage_error("--given cannot be combined with --resample-dims");

  if (const auto* cores = std::get_if<CoreSet>(&model)) {
    if (resample)
      throw usage_error("--resample-dims applies to continuous models only");
    AssignmentMask given;
    for (const auto& [name, value] : parse_assignments(o.given)) {
      const std::size_t k = parse_value(name);
      if (k >= cores->dims())
        throw usage_error("unknown variable '" + name + "'");
      const std::size_t v = parse_value(value);
      if (v >= cores->categories(k))
        throw usage_error("value " + value + " out of range for variable " + name);
      given.observe(k, v);
    }
    for (std::size_t i = 0; i < o.n; ++i)
      write_row(out, std::span<const std::size_t>(sample(*cores, given, rng)));
    return exit_ok;
  }

  // Continuous and joint models.
  std::optional<TripModel> trip_model;
  const JointModel* joint = std::get_if<JointModel>(&model);
  if (const auto* t = std::get_if<TripModel>(&model))
    trip_model = *t;

  if (resample) {
    if (joint)
      trip_model = embedded_trip(*joint);
    const auto dims = parse_index_set(o.resample_dims);
    const auto fields = split(o.from);
    if (fields.size() != trip_model->dims())
      throw usage_error("--from needs " + std::to_string(trip_model->dims()) + " values");
    std::vector<double> z;
    for (const auto& f : fields) {
      try {
        z.push_back(parse_real(f, 0));
      } catch (const data_error&) {
        throw usage_error("--from value '" + f + "' is not a finite number");
      }
    }
    for (std::size_t k : dims)
      if (k >= trip_model->dims())
        throw usage_error("resample dimension " + std::to_string(k) + " out of range");
    // Successive hops: each row is resampled from the previous one.
    for (std::size_t i = 0; i < o.n; ++i) {
      z = conditional_resample(*trip_model, z, dims, rng);
      write_row(out, std::span<const double>(z));
    }
    return exit_ok;
  }

  if (!joint) {
    if (!o.given.empty())
      throw usage_error("--given needs a joint model with attributes");
    for (std::size_t i = 0; i < o.n; ++i)
      write_row(out, std::span<const double>(sample(*trip_model, rng)));
    return exit_ok;
  }

  PartialAttributes y;
  for (const auto& [name, value] : parse_assignments(o.given)) {
    const auto a = joint->attribute_index(name);
    if (!a)
      throw usage_error("unknown attribute '" + name + "'");
    const std::size_t v = parse_value(value);
    if (v >= joint->attributes()[*a].cardinality)
      throw usage_error("value " + value + " out of range for attribute '" + name + "'");
    y.observe(*a, v);
  }
  for (std::size_t i = 0; i < o.n; ++i)
    write_row(out, std::span<const double>(sample_given_attrs(*joint, y, rng)));
  return exit_ok;
}

// ---------------------------------------------------------------- logprob

struct LogprobOptions {
  std::string model;
  std::string data;
  std::string marginal_dims;
  std::string missing_token = "?";
  bool header = false;
};

int cmd_logprob(const LogprobOptions& o, std::ostream& out)
{
  const auto model = io::load_model(o.model);
  const auto rows = read_csv(o.data, o.header);
  if (rows.empty())
    throw data_error("no data rows");
  const auto marginal = parse_index_set(o.marginal_dims);

  const std::size_t width = std::visit(
      [](const auto& m) -> std::size_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, JointModel>)
          return m.ring_size();
        else if constexpr (std::is_same_v<T, TripModel>)
          return m.dims();
        else
          return m.dims();
      },
      model);
  for (std::size_t k : marginal)
    if (k >= width)
      throw usage_error("marginal dimension " + std::to_string(k) + " out of range");
  if (rows.front().fields.size() != width)
    throw data_error("line " + std::to_string(rows.front().line) + ": expected " +
                     std::to_string(width) + " columns");

  std::vector<double> logps;
  for (const auto& row : rows) {
    double lp = 0.0;
    if (const auto* cores = std::get_if<CoreSet>(&model)) {
      AssignmentMask mask;
      for (std::size_t k = 0; k < width; ++k)
        if (!marginal.count(k)) {
          const std::size_t v = parse_index(row.fields[k], row.line);
          if (v >= cores->categories(k))
            throw data_error("line " + std::to_string(row.line) + ": value out of range");
          mask.observe(k, v);
        }
      lp = log_marginal(*cores, mask);
    } else {
      const JointModel* joint = std::get_if<JointModel>(&model);
      const std::size_t d = joint ? joint->latent_dims() : std::get<TripModel>(model).dims();
      ContinuousMask z;
      for (std::size_t k = 0; k < d; ++k)
        if (!marginal.count(k))
          z.observe(k, parse_real(row.fields[k], row.line));
      if (!joint) {
        lp = log_density(std::get<TripModel>(model), z);
      } else {
        PartialAttributes y;
        for (std::size_t a = 0; a < joint->attribute_count(); ++a) {
          const auto& f = row.fields[d + a];
          if (marginal.count(d + a) || f == o.missing_token)
            continue;
          const std::size_t v = parse_index(f, row.line);
          if (v >= joint->attributes()[a].cardinality)
            throw data_error("line " + std::to_string(row.line) + ": value out of range");
          y.observe(a, v);
        }
        lp = log_joint(*joint, z, y);
      }
    }
    logps.push_back(lp);
  }
  out << "row,logp\n";
  double sum = 0.0;
  for (std::size_t i = 0; i < logps.size(); ++i) {
    out << i << ',' << format_real(logps[i]) << '\n';
    sum += logps[i];
  }
  out << "mean," << format_real(sum / static_cast<double>(logps.size())) << '\n';
  return exit_ok;
}

// ---------------------------------------------------------------- inspect

void print_cores(std::ostream& out, const std::vector<CoreTensor>& cores, const char* label)
{
  for (std::size_t k = 0; k < cores.size(); ++k)
    out << "  " << label << ' ' << k << ": N=" << cores[k].categories()
        << " m=" << cores[k].rows() << 'x' << cores[k].cols() << '\n';
}

int cmd_inspect(const std::string& path, std::ostream& out)
{
  const auto model = io::load_model(path);
  std::size_t params = 0;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, CoreSet>) {
          out << "kind: discrete\nvariables: " << m.dims() << '\n';
          print_cores(out, m.cores(), "variable");
          for (const auto& c : m.cores())
            params += c.size();
        } else if constexpr (std::is_same_v<T, TripModel>) {
          out << "kind: continuous\ndimensions: " << m.dims() << '\n';
          print_cores(out, m.cores().cores(), "dimension");
          params = param_stats(m).param_count;
        } else {
          out << "kind: joint\ndimensions: " << m.latent_dims()
              << "\nattributes: " << m.attribute_count() << '\n';
          print_cores(out, m.latent_cores(), "dimension");
          for (std::size_t a = 0; a < m.attribute_count(); ++a)
            out << "  attribute " << a << " '" << m.attributes()[a].name
                << "': cardinality=" << m.attributes()[a].cardinality
                << " m=" << m.attribute_cores()[a].rows() << 'x'
                << m.attribute_cores()[a].cols() << '\n';
          out << "ring order:";
          for (std::size_t v : m.order())
            out << ' ' << (m.is_latent(v) ? "z" + std::to_string(v)
                                          : m.attributes()[v - m.latent_dims()].name);
          out << '\n';
          for (const auto& c : m.latent_cores())
            params += c.size() + 2 * c.categories();
          for (const auto& c : m.attribute_cores())
            params += c.size();
        }
      },
      model);
  ParamStats st{params, 8 * params};
  char mb[32];
  std::snprintf(mb, sizeof mb, "%.2g", st.megabytes());
  out << "parameters: " << st.param_count << '\n'
      << "memory: " << st.memory_bytes << " bytes (" << mb << " MB)\n";
  return exit_ok;
}

// ---------------------------------------------------------------- verify

struct Checker {
  std::ostream& out;
  bool ok = true;

  void report(const std::string& name, double worst, double tol)
  {
    const bool pass = worst <= tol;
    ok = ok && pass;
    out << (pass ? "ok   " : "FAIL ") << name << ": max error " << format_real(worst)
        << " (tolerance " << format_real(tol) << ")\n";
  }
};

// |p_fast / p_oracle - 1| from the two log-probabilities.
double log_rel_error(double fast, double slow)
{
  if (std::isinf(fast) && std::isinf(slow) && fast < 0 && slow < 0)
    return 0.0;
  return std::abs(std::expm1(fast - slow));
}

double grad_rel_error(std::span<const double> a, std::span<const double> b)
{
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) /
                                std::max({std::abs(a[i]), std::abs(b[i]), 1e-3}));
  return worst;
}

void verify_discrete(const CoreSet& cores, Checker& chk)
{
  const auto dense = oracle::densify(cores);
  std::mt19937_64 rng(0);
  double worst = 0.0;
  for (std::size_t k = 0; k < cores.dims(); ++k)
    for (std::size_t v = 0; v < cores.categories(k); ++v) {
      AssignmentMask m;
      m.observe(k, v);
      worst = std::max(worst, log_rel_error(log_marginal(cores, m),
                                            std::log(oracle::dense_marginal(dense, m))));
    }
  std::bernoulli_distribution coin(0.5);
  double worst_cond = 0.0;
  for (int t = 0; t < 20; ++t) {
    AssignmentMask observed, given;
    for (std::size_t k = 0; k < cores.dims(); ++k) {
      std::uniform_int_distribution<std::size_t> val(0, cores.categories(k) - 1);
      if (coin(rng))
        observed.observe(k, val(rng));
      else if (coin(rng))
        given.observe(k, val(rng));
    }
    worst = std::max(worst, log_rel_error(log_marginal(cores, observed),
                                          std::log(oracle::dense_marginal(dense, observed))));
    const double pg = oracle::dense_marginal(dense, given);
    if (pg > 0.0)
      worst_cond = std::max(worst_cond,
                            log_rel_error(log_conditional(cores, observed, given),
                                          std::log(oracle::dense_conditional(dense, observed,
                                                                             given))));
  }
  chk.report("marginals vs enumeration", worst, 1e-10);
  chk.report("conditionals vs enumeration", worst_cond, 1e-10);
}

void verify_continuous(const TripModel& model, Checker& chk)
{
  const auto modes = oracle::enumerate_modes(model);
  std::mt19937_64 rng(0);
  std::bernoulli_distribution coin(0.5);
  double worst = 0.0, worst_w = 0.0, worst_g = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto z = sample(model, rng);
    worst = std::max(worst, log_rel_error(log_density(model, z),
                                          oracle::dense_log_density(modes,
                                                                    ContinuousMask::full(z))));
    ContinuousMask mask;
    for (std::size_t k = 0; k < z.size(); ++k)
      if (coin(rng))
        mask.observe(k, z[k]);
    worst = std::max(worst, log_rel_error(log_density(model, mask),
                                          oracle::dense_log_density(modes, mask)));
    for (std::size_t k = 0; k < z.size(); ++k) {
      const auto prefix = std::span<const double>(z).first(k);
      const auto fast = conditional_mixture_weights(model, k, prefix);
      const auto slow = oracle::dense_mixture_weights(modes, k, prefix);
      for (std::size_t s = 0; s < fast.size(); ++s)
        worst_w = std::max(worst_w, std::abs(fast[s] - slow[s]));
    }
    if (t < 3) {
      const auto g = grad_log_density(model, z).grad.flatten();
      std::vector<double> means_flat;
      for (const auto& m : model.means())
        means_flat.insert(means_flat.end(), m.begin(), m.end());
      const auto f = [&](std::span<const double> mu) {
        auto means = model.means();
        std::size_t i = 0;
        for (auto& row : means)
          for (auto& x : row)
            x = mu[i++];
        return log_density(TripModel(model.cores(), means, model.stds()), z);
      };
      const auto numeric = oracle::numeric_grad(f, means_flat);
      std::size_t offset = 0;
      for (const auto& c : model.cores().cores())
        offset += c.size();
      worst_g = std::max(worst_g, grad_rel_error(std::span<const double>(g).subspan(
                                                     offset, means_flat.size()),
                                                 numeric));
    }
  }
  chk.report("densities vs mode enumeration", worst, 1e-10);
  chk.report("conditional mixture weights", worst_w, 1e-10);
  chk.report("mean gradients vs finite differences", worst_g, 1e-5);
}

void verify_joint(const JointModel& model, Checker& chk)
{
  oracle::dense_size(model.ring()); // refuse oversized models before sampling
  std::mt19937_64 rng(0);
  std::bernoulli_distribution coin(0.5);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto z = sample_given_attrs(model, PartialAttributes{}, rng);
    ContinuousMask zm;
    for (std::size_t k = 0; k < z.size(); ++k)
      if (t % 2 == 0 || coin(rng))
        zm.observe(k, z[k]);
    PartialAttributes y;
    for (std::size_t a = 0; a < model.attribute_count(); ++a)
      if (coin(rng)) {
        std::uniform_int_distribution<std::size_t> val(0, model.attributes()[a].cardinality - 1);
        y.observe(a, val(rng));
      }
    worst = std::max(worst, log_rel_error(log_joint(model, zm, y),
                                          oracle::dense_log_joint(model, zm, y)));
  }
  chk.report("joint log-probabilities vs enumeration", worst, 1e-10);
}

int cmd_verify(const std::string& path, std::ostream& out, std::ostream& err)
{
  const auto model = io::load_model(path);
  Checker chk{out};
  try {
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, CoreSet>)
            verify_discrete(m, chk);
          else if constexpr (std::is_same_v<T, TripModel>)
            verify_continuous(m, chk);
          else
            verify_joint(m, chk);
        },
        model);
  } catch (const size_cap_error& e) {
    err << "verify refused: " << e.what() << '\n';
    return exit_verify_refused;
  }
  out << (chk.ok ? "verification passed\n" : "verification FAILED\n");
  return chk.ok ? exit_ok : exit_verify_failed;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Tensor-ring distributions: fit, sample, score, inspect and verify models"};
  app.require_subcommand(1);

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a continuous (or joint) model to CSV data");
  fit_cmd->add_option("--data", fit.data, "CSV file, one row per point")->required();
  fit_cmd->add_option("--dims", fit.dims, "Number of latent (numeric) columns")->required();
  fit_cmd->add_option("--components", fit.components, "Gaussians per dimension")
      ->capture_default_str();
  fit_cmd->add_option("--core-size", fit.core_size, "Core size m")->capture_default_str();
  fit_cmd->add_option("--epochs", fit.epochs)->capture_default_str();
  fit_cmd->add_option("--batch-size", fit.batch_size)->capture_default_str();
  fit_cmd->add_option("--lr", fit.lr, "Learning rate")->capture_default_str();
  fit_cmd->add_option("--seed", fit.seed)->capture_default_str();
  fit_cmd->add_option("--out", fit.out, "Output model file")->required();
  fit_cmd->add_option("--attr-cols", fit.attr_cols,
                      "Trailing attribute columns as name[:cardinality],...");
  fit_cmd->add_option("--missing-token", fit.missing_token, "Marks a missing attribute")
      ->capture_default_str();
  fit_cmd->add_option("--reinit-period", fit.reinit_period,
                      "Re-initialize after epoch 1 and every this many epochs (0 = never)")
      ->capture_default_str();
  fit_cmd->add_flag("--header", fit.header, "First CSV line is a header");

  SampleOptions smp;
  auto* sample_cmd = app.add_subcommand("sample", "Draw samples as CSV");
  sample_cmd->add_option("--model", smp.model)->required();
  sample_cmd->add_option("-n", smp.n, "Number of rows")->required();
  sample_cmd->add_option("--seed", smp.seed)->required();
  sample_cmd->add_option("--given", smp.given, "Conditions as name=value,...");
  sample_cmd->add_option("--resample-dims", smp.resample_dims,
                         "Dimensions to redraw given the rest, e.g. 0,3");
  sample_cmd->add_option("--from", smp.from, "Starting point as a CSV row");

  LogprobOptions lp;
  auto* logprob_cmd = app.add_subcommand("logprob", "Per-row log-probabilities and their mean");
  logprob_cmd->add_option("--model", lp.model)->required();
  logprob_cmd->add_option("--data", lp.data)->required();
  logprob_cmd->add_option("--marginal-dims", lp.marginal_dims, "Columns to marginalize");
  logprob_cmd->add_option("--missing-token", lp.missing_token)->capture_default_str();
  logprob_cmd->add_flag("--header", lp.header, "First CSV line is a header");

  std::string inspect_model;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize a model file");
  inspect_cmd->add_option("--model", inspect_model)->required();

  std::string verify_model;
  auto* verify_cmd = app.add_subcommand("verify", "Cross-check a small model against enumeration");
  verify_cmd->add_option("--model", verify_model)->required();

  std::vector<const char*> argv;
  for (const auto& a : args)
    argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*fit_cmd)
      return cmd_fit(fit, out);
    if (*sample_cmd)
      return cmd_sample(smp, out);
    if (*logprob_cmd)
      return cmd_logprob(lp, out);
    if (*inspect_cmd)
      return cmd_inspect(inspect_model, out);
    if (*verify_cmd)
      return cmd_verify(verify_model, out, err);
  } catch (const usage_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const divergence_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_divergence;
  } catch (const data_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_data;
  } catch (const trip::error& e) {
    err << "error: " << e.what() << '\n';
    return exit_data;
  }
  return exit_usage;
}

} // namespace trip::cli
