#include "tnerm/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>

using namespace tnerm;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

const std::string kData = TNERM_DATA_DIR;
const std::string kCropArgs = " --data " + kData +
                              "/crop_bhf.csv --area county --response corn_hectares"
                              " --covariates logit_corn_share,logit_soybeans_share --transform dpl --bounds 0,250";

std::filesystem::path scratch() {
  auto p = std::filesystem::temp_directory_path() / ("tnerm_cli_" + std::to_string(::getpid()));
  std::filesystem::create_directories(p);
  return p;
}

Run run(const std::string& args) {
  const auto err_path = scratch() / "stderr.txt";
  const std::string cmd = std::string(TNERM_CLI) + " " + args + " 2>" + err_path.string();
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_file(err_path.string());
  return r;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("fit on the crop fixture") {
  const auto r = run("fit" + kCropArgs);
  REQUIRE(r.code == 0);
  const auto env = envelope_from_json(r.out);
  CHECK(env.fit.params.lambda == doctest::Approx(0.372303).epsilon(1e-5));
  REQUIRE(env.areas.size() == 12);
  CHECK(env.areas[10].area_id == "Kossuth");
  CHECK(env.areas[10].teblup == doctest::Approx(119.556).epsilon(1e-5));
  CHECK(env.provenance.input_sha256 == sha256_hex(read_file(kData + "/crop_bhf.csv")));
  CHECK(r.err.empty());
}

TEST_CASE("rescaled response gives the same TEBLUPs in raw units") {
  const auto a = envelope_from_json(run("fit" + kCropArgs).out);
  const std::string scaled = " --data " + kData +
                             "/crop_bhf.csv --area county --response corn_hectares"
                             " --covariates logit_corn_share,logit_soybeans_share --transform dpl --bounds 0,1"
                             " --response-divisor 250";
  const auto r = run("fit" + scaled);
  REQUIRE(r.code == 0);
  const auto b = envelope_from_json(r.out);
  for (std::size_t i = 0; i < 12; ++i) CHECK(b.areas[i].teblup == doctest::Approx(a.areas[i].teblup).epsilon(1e-8));
}

TEST_CASE("interval --kind naive matches the library") {
  const auto r = run("interval --kind naive --alpha 0.1" + kCropArgs);
  REQUIRE(r.code == 0);
  const auto env = envelope_from_json(r.out);
  CsvSchema schema{"county", "corn_hectares", {"logit_corn_share", "logit_soybeans_share"}};
  const auto d = load_csv(kData + "/crop_bhf.csv", schema);
  const auto f = fit(d, TransformSpec::dual_power_logistic(0.0, 250.0));
  const auto want = naive_intervals(f, 0.1);
  for (std::size_t i = 0; i < 12; ++i) {
    REQUIRE(env.areas[i].intervals.size() == 1);
    CHECK(env.areas[i].intervals[0].lower == doctest::Approx(want[i].lower).epsilon(1e-12));
    CHECK(env.areas[i].intervals[0].upper == doctest::Approx(want[i].upper).epsilon(1e-12));
  }
  CHECK_FALSE(env.bootstrap.has_value());
}

TEST_CASE("bootstrap intervals are reproducible and thread invariant") {
  const std::string args = "interval --kind unconditional,conditional --bootstrap 60 --seed 17" + kCropArgs;
  const auto a = run(args + " --threads 1");
  const auto b = run(args + " --threads 1");
  const auto c = run(args + " --threads 3");
  REQUIRE(a.code == 0);
  REQUIRE(c.code == 0);
  CHECK(a.out == b.out);
  const auto ea = envelope_from_json(a.out), ec = envelope_from_json(c.out);
  for (std::size_t i = 0; i < 12; ++i) {
    REQUIRE(ea.areas[i].intervals.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(ea.areas[i].intervals[k].lower == ec.areas[i].intervals[k].lower);
      CHECK(ea.areas[i].intervals[k].upper == ec.areas[i].intervals[k].upper);
    }
  }
  CHECK(ea.provenance.seed == 17);
  CHECK(ea.bootstrap->B == 60);
}

TEST_CASE("CSV output") {
  const auto r = run("interval --kind naive --format csv" + kCropArgs);
  REQUIRE(r.code == 0);
  const auto rows = parse_csv_records(r.out);
  REQUIRE(rows.size() == 13);
  CHECK(rows[0][4] == "naive_lower");
}

TEST_CASE("predict from a saved fit") {
  const auto dir = scratch();
  const auto fit_path = (dir / "fit.json").string();
  REQUIRE(run("fit --out " + fit_path + kCropArgs).code == 0);
  const auto r = run("predict --fit " + fit_path);
  REQUIRE(r.code == 0);
  const auto env = envelope_from_json(r.out);
  const auto orig = envelope_from_json(read_file(fit_path));
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(env.areas[i].teblup == orig.areas[i].teblup);
    CHECK(env.areas[i].sample_mean == orig.areas[i].sample_mean);
  }
}

TEST_CASE("exit codes and error reports") {
  auto r = run("fit --bogus-flag" + kCropArgs);
  CHECK(r.code == 2);
  CHECK(nlohmann::json::parse(r.err)["error"]["kind"] == "usage");

  CHECK(run("").code == 2);
  CHECK(run("fit --estimator mom" + kCropArgs).code == 2);

  // 250 lies on the upper bound
  const auto dir = scratch();
  const auto bad = (dir / "bad.csv").string();
  write_file_atomic(bad, "county,y,x\nA,10,1\nA,20,2\nB,30,3\nB,250,4\nC,5,1\nC,6,2\n");
  r = run("fit --data " + bad + " --area county --response y --covariates x --transform dpl --bounds 0,250");
  CHECK(r.code == 3);
  const auto err = nlohmann::json::parse(r.err)["error"];
  CHECK(err["exit_code"] == 3);
  CHECK(err["message"].get<std::string>().find("row 5") != std::string::npos);
  CHECK(r.out.empty());

  r = run("fit --lambda-max 0.05" + kCropArgs);
  CHECK(r.code == 4);
  CHECK(nlohmann::json::parse(r.err)["error"]["kind"] == "convergence");
}

TEST_CASE("a failed run leaves no output file") {
  const auto dir = scratch();
  const auto out = dir / "never.json";
  std::filesystem::remove(out);
  const auto r = run("fit --lambda-max 0.05 --out " + out.string() + kCropArgs);
  CHECK(r.code == 4);
  CHECK_FALSE(std::filesystem::exists(out));
  for (const auto& e : std::filesystem::directory_iterator(dir))
    CHECK(e.path().filename().string().find(".tmp.") == std::string::npos);
}

TEST_CASE("simulate writes a study table") {
  const auto r = run("simulate --scenario " + kData + "/scenarios/coverage_dp.cfg --R 2 --B 50 --format csv");
  REQUIRE(r.code == 0);
  const auto rows = parse_csv_records(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0][1] == "cp_naive");
  CHECK(rows[0][5] == "cp_boot");
  CHECK(rows[3][0] == "1");
  CHECK(run("simulate --scenario " + kData + "/scenarios/coverage_dp.cfg --R 0").code == 2);
  std::filesystem::remove_all(scratch());
}

}  // TEST_SUITE
