#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "csv.hpp"
#include "test_util.hpp"
#include "trip/io.hpp"

using namespace trip;
using namespace trip::testing;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args)
{
  args.insert(args.begin(), "trip");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
  void SetUp() override
  {
    dir_ = fs::temp_directory_path() /
           ("trip_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const
  {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  std::string write_model(const std::string& name, const io::AnyModel& model) const
  {
    io::save_model(model, path(name));
    return path(name);
  }

  std::string benchmark_csv(std::size_t n, bool with_label) const
  {
    Rng rng(1);
    std::ostringstream csv;
    for (const auto& z : FourModes{}.draw(rng, n)) {
      csv << cli::format_real(z[0]) << ',' << cli::format_real(z[1]);
      if (with_label)
        csv << ',' << (z[1] > 0 ? "1" : "0");
      csv << '\n';
    }
    return write(with_label ? "labelled.csv" : "bench.csv", csv.str());
  }

  fs::path dir_;
};

std::string slurp(const std::string& p)
{
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <class T>
bool bit_equal(const std::vector<T>& a, const std::vector<T>& b)
{
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

std::vector<double> all_params(const io::AnyModel& m)
{
  std::vector<double> out;
  const auto add_cores = [&](const std::vector<CoreTensor>& cores) {
    for (const auto& c : cores) {
      const auto f = c.flat();
      out.insert(out.end(), f.begin(), f.end());
    }
  };
  const auto add_table = [&](const std::vector<std::vector<double>>& t) {
    for (const auto& row : t)
      out.insert(out.end(), row.begin(), row.end());
  };
  std::visit(
      [&](const auto& model) {
        using T = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<T, CoreSet>) {
          add_cores(model.cores());
        } else if constexpr (std::is_same_v<T, TripModel>) {
          add_cores(model.cores().cores());
          add_table(model.means());
          add_table(model.stds());
        } else {
          add_cores(model.latent_cores());
          add_cores(model.attribute_cores());
          add_table(model.means());
          add_table(model.stds());
        }
      },
      m);
  return out;
}

} // namespace

TEST(ModelFile, RoundTripIsBitExact)
{
  Rng rng(2);
  std::uniform_real_distribution<double> tiny(-1e-300, 1e-300);
  std::vector<io::AnyModel> models{
      random_cores(rng, Shape{{3, 2, 4}, {2, 3, 1}}),
      random_trip(rng, 3, 3, 2),
      random_joint(rng, 2, 2, 3, {2, 4}, make_permutation(2, 2, 4)),
  };
  // Awkward values: subnormals, negative zero, long mantissas.
  std::vector<double> odd{5e-324, -0.0, 1.0 / 3.0, -tiny(rng), 1.7976931348623157e308, 0.1};
  models.push_back(CoreSet({CoreTensor(6, 1, 1, odd)}));
  for (const auto& m : models) {
    std::stringstream a;
    io::save_model(m, a);
    const auto loaded = io::load_model(a);
    EXPECT_EQ(loaded.index(), m.index());
    EXPECT_TRUE(bit_equal(all_params(loaded), all_params(m)));
    std::stringstream b;
    io::save_model(loaded, b);
    EXPECT_EQ(a.str(), b.str());
  }
  const auto joint = std::get<JointModel>(io::from_json(io::to_json(models[2])));
  EXPECT_EQ(joint.order(), std::get<JointModel>(models[2]).order());
  EXPECT_EQ(joint.attributes(), std::get<JointModel>(models[2]).attributes());
}

TEST(ModelFile, RejectsMalformedFiles)
{
  Rng rng(3);
  auto doc = io::to_json(random_trip(rng, 2, 2, 2));
  auto bad_version = doc;
  bad_version["version"] = "trip-v0";
  EXPECT_THROW(io::from_json(bad_version), format_error);
  auto short_payload = doc;
  short_payload["cores"][1][0][0].erase(0);
  EXPECT_THROW(io::from_json(short_payload), format_error);
  auto bad_std = doc;
  bad_std["stds"][0][0] = -1.0;
  EXPECT_THROW(io::from_json(bad_std), format_error);
  auto missing = doc;
  missing.erase("means");
  EXPECT_THROW(io::from_json(missing), format_error);
  std::stringstream garbage("{not json");
  EXPECT_THROW(io::load_model(garbage), format_error);
}

TEST_F(CliTest, FitPrintsEpochLinesAndWritesModel)
{
  const auto data = benchmark_csv(600, false);
  const auto r = run_cli({"fit", "--data", data, "--dims", "2", "--epochs", "4", "--seed", "3",
                          "--out", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    ++count;
    const auto comma = line.find(',');
    ASSERT_NE(comma, std::string::npos);
    EXPECT_EQ(std::stoi(line.substr(0, comma)), count);
    EXPECT_TRUE(std::isfinite(std::stod(line.substr(comma + 1))));
  }
  EXPECT_EQ(count, 4);
  EXPECT_TRUE(std::holds_alternative<TripModel>(io::load_model(path("m.json"))));
}

TEST_F(CliTest, FitIsDeterministic)
{
  const auto data = benchmark_csv(300, false);
  const std::vector<std::string> base{"fit", "--data", data, "--dims", "2", "--epochs", "3"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", path("a.json")});
  b.insert(b.end(), {"--out", path("b.json")});
  EXPECT_EQ(run_cli(a).out, run_cli(b).out);
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
}

TEST_F(CliTest, FitDataErrors)
{
  const auto empty = write("empty.csv", "\n\n");
  auto r = run_cli({"fit", "--data", empty, "--dims", "1", "--out", path("m.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no data rows"), std::string::npos);

  const auto ragged = write("ragged.csv", "1,2\n3,4\n5\n");
  r = run_cli({"fit", "--data", ragged, "--dims", "2", "--out", path("m.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 3"), std::string::npos);

  const auto nan = write("nan.csv", "1,2\nnan,4\n");
  r = run_cli({"fit", "--data", nan, "--dims", "2", "--out", path("m.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos);

  const auto text = write("text.csv", "a,b\n1,2\n");
  r = run_cli({"fit", "--data", text, "--dims", "2", "--out", path("m.json")});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"fit", "--data", text, "--dims", "2", "--header", "--epochs", "1", "--out",
               path("m.json")});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(CliTest, FitDivergenceExitCode)
{
  const auto data = benchmark_csv(200, false);
  const auto r = run_cli({"fit", "--data", data, "--dims", "2", "--lr", "1000", "--epochs", "50",
                          "--batch-size", "200", "--out", path("m.json")});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(CliTest, UsageErrors)
{
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"fit", "--dims", "2"}).code, 1);
  EXPECT_EQ(run_cli({"sample", "--model", "x.json", "-n", "3"}).code, 1); // seed is mandatory
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(CliTest, SamplingIsReproducibleByteForByte)
{
  Rng rng(4);
  const auto cont = write_model("c.json", random_trip(rng, 3, 2, 2));
  const auto disc = write_model("d.json", random_cores(rng, Shape{{3, 3}, {2, 2}}));
  for (const auto& m : {cont, disc}) {
    const auto a = run_cli({"sample", "--model", m, "-n", "25", "--seed", "17"});
    const auto b = run_cli({"sample", "--model", m, "-n", "25", "--seed", "17"});
    const auto c = run_cli({"sample", "--model", m, "-n", "25", "--seed", "18"});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    EXPECT_NE(a.out, c.out);
    EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 25);
  }
}

TEST_F(CliTest, SampleMatchesLibrary)
{
  Rng rng(5);
  const auto model = random_trip(rng, 2, 2, 2);
  const auto m = write_model("c.json", model);
  const auto r = run_cli({"sample", "--model", m, "-n", "2", "--seed", "9"});
  Rng draw(9);
  std::ostringstream expected;
  for (int i = 0; i < 2; ++i) {
    const auto z = sample(model, draw);
    expected << cli::format_real(z[0]) << ',' << cli::format_real(z[1]) << '\n';
  }
  EXPECT_EQ(r.out, expected.str());
}

TEST_F(CliTest, SampleGivenAndErrors)
{
  Rng rng(6);
  const auto joint = random_joint(rng, 2, 2, 2, {3}, {0, 2, 1});
  auto named = JointModel(joint.latent_cores(), joint.means(), joint.stds(),
                          joint.attribute_cores(), {{"colour", 3}}, joint.order());
  const auto m = write_model("j.json", named);
  auto r = run_cli({"sample", "--model", m, "-n", "3", "--seed", "1", "--given", "colour=2"});
  EXPECT_EQ(r.code, 0) << r.err;
  Rng draw(1);
  PartialAttributes y;
  y.observe(0, 2);
  const auto z = sample_given_attrs(named, y, draw);
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')),
            cli::format_real(z[0]) + "," + cli::format_real(z[1]));

  r = run_cli({"sample", "--model", m, "-n", "1", "--seed", "1", "--given", "size=1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown attribute"), std::string::npos);
  r = run_cli({"sample", "--model", m, "-n", "1", "--seed", "1", "--given", "colour=3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("out of range"), std::string::npos);

  const auto disc = write_model("d.json", random_cores(rng, Shape{{2, 3}, {2, 2}}));
  r = run_cli({"sample", "--model", disc, "-n", "5", "--seed", "1", "--given", "1=2"});
  EXPECT_EQ(r.code, 0) << r.err;
  std::istringstream rows(r.out);
  std::string row;
  while (std::getline(rows, row))
    EXPECT_EQ(row.substr(row.find(',') + 1), "2");
  EXPECT_EQ(run_cli({"sample", "--model", disc, "-n", "1", "--seed", "1", "--given", "1=3"}).code,
            1);
}

TEST_F(CliTest, ResampleKeepsOtherDimensions)
{
  Rng rng(7);
  const auto m = write_model("c.json", random_trip(rng, 3, 2, 2));
  const auto r = run_cli({"sample", "--model", m, "-n", "4", "--seed", "2", "--resample-dims",
                          "1", "--from", "0.5,0.25,-1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream rows(r.out);
  std::string row;
  while (std::getline(rows, row)) {
    EXPECT_EQ(row.substr(0, row.find(',')), "0.5");
    EXPECT_EQ(row.substr(row.rfind(',') + 1), "-1");
  }
  EXPECT_EQ(run_cli({"sample", "--model", m, "-n", "1", "--seed", "2", "--resample-dims", "3",
                     "--from", "0,0,0"})
                .code,
            1);
  EXPECT_EQ(run_cli({"sample", "--model", m, "-n", "1", "--seed", "2", "--resample-dims", "0",
                     "--from", "0,0"})
                .code,
            1);
}

TEST_F(CliTest, LogprobRowsAndMean)
{
  Rng rng(8);
  const auto model = random_trip(rng, 2, 2, 2);
  const auto m = write_model("c.json", model);
  const auto data = write("pts.csv", "0.1,0.2\n-1,2\n3,0.5\n");
  auto r = run_cli({"logprob", "--model", m, "--data", data});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "row,logp");
  std::vector<double> vals;
  double mean = 0.0;
  while (std::getline(lines, line)) {
    const auto comma = line.find(',');
    const double v = std::stod(line.substr(comma + 1));
    if (line.substr(0, comma) == "mean")
      mean = v;
    else
      vals.push_back(v);
  }
  ASSERT_EQ(vals.size(), 3u);
  const double z0[] = {0.1, 0.2};
  EXPECT_EQ(vals[0], log_density(model, z0));
  EXPECT_NEAR(mean, (vals[0] + vals[1] + vals[2]) / 3, 1e-12);

  r = run_cli({"logprob", "--model", m, "--data", data, "--marginal-dims", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream marg(r.out);
  std::getline(marg, line);
  std::getline(marg, line);
  EXPECT_EQ(std::stod(line.substr(line.find(',') + 1)),
            log_density(model, ContinuousMask{}.observe(0, 0.1)));
}

TEST_F(CliTest, LogprobDiscreteAndJoint)
{
  Rng rng(9);
  const auto cores = random_cores(rng, Shape{{2, 3}, {2, 1}});
  const auto d = write_model("d.json", cores);
  auto r = run_cli({"logprob", "--model", d, "--data", write("r.csv", "1,2\n0,0\n")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::size_t full[] = {1, 2};
  EXPECT_NE(r.out.find("0," + cli::format_real(log_marginal(cores, AssignmentMask::full(full)))),
            std::string::npos);

  const auto joint = random_joint(rng, 2, 2, 2, {2}, {0, 2, 1});
  const auto j = write_model("j.json", joint);
  r = run_cli({"logprob", "--model", j, "--data", write("jz.csv", "0.1,0.2,?\n0.1,0.2,1\n")});
  ASSERT_EQ(r.code, 0) << r.err;
  const double z[] = {0.1, 0.2};
  EXPECT_NE(r.out.find("0," + cli::format_real(log_joint(joint, ContinuousMask::full(z), {}))),
            std::string::npos);
  EXPECT_NE(r.out.find("1," + cli::format_real(log_joint(joint, ContinuousMask::full(z),
                                                         PartialAttributes{}.observe(0, 1)))),
            std::string::npos);
}

TEST_F(CliTest, InspectReportsMemoryTable)
{
  const char* expected[] = {"0.023 MB", "0.78 MB", "3.1 MB"};
  const std::size_t sizes[] = {1, 10, 20};
  for (int i = 0; i < 3; ++i) {
    std::vector<CoreTensor> cores;
    for (int k = 0; k < 100; ++k)
      cores.emplace_back(std::vector<Matrix>(10, Matrix::Ones(sizes[i], sizes[i])));
    const TripModel model(CoreSet(std::move(cores)),
                          std::vector<std::vector<double>>(100, std::vector<double>(10, 0.0)),
                          std::vector<std::vector<double>>(100, std::vector<double>(10, 1.0)));
    const auto r = run_cli({"inspect", "--model", write_model("big.json", model)});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find(expected[i]), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("dimensions: 100"), std::string::npos);
  }
}

TEST_F(CliTest, InspectJointShowsSchema)
{
  Rng rng(10);
  const auto m = write_model("j.json", random_joint(rng, 2, 2, 2, {3}, {0, 2, 1}));
  const auto r = run_cli({"inspect", "--model", m});
  EXPECT_NE(r.out.find("'a0': cardinality=3"), std::string::npos);
  EXPECT_NE(r.out.find("ring order: z0 a0 z1"), std::string::npos);
}

TEST_F(CliTest, VerifySmallModels)
{
  Rng rng(11);
  for (int t = 0; t < 5; ++t) {
    const auto d = write_model("d.json", random_cores(rng, random_shape(rng, 5, 4, 3)));
    const auto c = write_model("c.json", random_trip(rng, random_shape(rng, 4, 3, 3)));
    const auto j = write_model("j.json", random_joint(rng, 2, 2, 2, {2, 3},
                                                      make_permutation(2, 2, t)));
    for (const auto& m : {d, c, j}) {
      const auto r = run_cli({"verify", "--model", m});
      EXPECT_EQ(r.code, 0) << r.out << r.err;
      EXPECT_NE(r.out.find("verification passed"), std::string::npos);
    }
  }
}

TEST_F(CliTest, VerifyRefusesOversizedModels)
{
  Rng rng(12);
  std::vector<CoreTensor> cores;
  for (int k = 0; k < 8; ++k)
    cores.push_back(random_core(rng, 10, 1, 1));
  const auto r = run_cli({"verify", "--model", write_model("big.json", CoreSet(cores))});
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("refused"), std::string::npos);
}

TEST_F(CliTest, CorruptedPayloadIsALoadError)
{
  Rng rng(13);
  auto doc = io::to_json(random_trip(rng, 2, 2, 2));
  doc["cores"][0].erase(1);
  const auto m = write("bad.json", doc.dump());
  for (const char* cmd : {"verify", "inspect"}) {
    const auto r = run_cli({cmd, "--model", m});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("slices"), std::string::npos) << r.err;
  }
}

TEST_F(CliTest, FitWithAttributeColumns)
{
  const auto data = benchmark_csv(800, true);
  auto r = run_cli({"fit", "--data", data, "--dims", "2", "--attr-cols", "up:2", "--epochs", "5",
                    "--lr", "0.01", "--out", path("j.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto model = std::get<JointModel>(io::load_model(path("j.json")));
  EXPECT_EQ(model.attributes(), (std::vector<AttributeSpec>{{"up", 2}}));
  r = run_cli({"sample", "--model", path("j.json"), "-n", "2", "--seed", "4", "--given", "up=1"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(run_cli({"verify", "--model", path("j.json")}).code, 0);

  const auto bad = write("bad_attr.csv", "0,0,2\n1,1,0\n");
  r = run_cli({"fit", "--data", bad, "--dims", "2", "--attr-cols", "up:2", "--out",
               path("x.json")});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, AllMissingAttributeColumnMatchesPlainFit)
{
  Rng rng(14);
  std::ostringstream with_attr, plain, test_plain, test_attr;
  for (const auto& z : FourModes{}.draw(rng, 2000)) {
    plain << cli::format_real(z[0]) << ',' << cli::format_real(z[1]) << '\n';
    with_attr << cli::format_real(z[0]) << ',' << cli::format_real(z[1]) << ",?\n";
  }
  for (const auto& z : FourModes{}.draw(rng, 2000)) {
    test_plain << cli::format_real(z[0]) << ',' << cli::format_real(z[1]) << '\n';
    test_attr << cli::format_real(z[0]) << ',' << cli::format_real(z[1]) << ",?\n";
  }
  const std::vector<std::string> common{"--dims", "2", "--epochs", "40", "--lr", "0.01",
                                        "--batch-size", "256"};
  auto a = std::vector<std::string>{"fit", "--data", write("p.csv", plain.str()), "--out",
                                    path("p.json")};
  auto b = std::vector<std::string>{"fit", "--data", write("a.csv", with_attr.str()),
                                    "--attr-cols", "lbl:2", "--out", path("a.json")};
  a.insert(a.end(), common.begin(), common.end());
  b.insert(b.end(), common.begin(), common.end());
  ASSERT_EQ(run_cli(a).code, 0);
  ASSERT_EQ(run_cli(b).code, 0);
  const auto mean_of = [&](const std::string& model, const std::string& data) {
    const auto out = run_cli({"logprob", "--model", model, "--data", data}).out;
    return std::stod(out.substr(out.rfind(',') + 1));
  };
  EXPECT_NEAR(mean_of(path("a.json"), write("ta.csv", test_attr.str())),
              mean_of(path("p.json"), write("tp.csv", test_plain.str())), 0.05);
}
