#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "popmix/cli.hpp"

using namespace popmix;
using namespace popmix::cli;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "popmix_unit";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove(p);
  std::filesystem::remove(csv_path_for(p.string()));
  return p.string();
}

RunConfig small_config(const std::string& out) {
  RunConfig c;
  c.method = Method::MeanField;
  c.n = {2, 3};
  c.d = {1.0, 2.0, 2.5};
  c.output = out;
  return c;
}

}  // namespace

TEST_CASE("grid parsing") {
  CHECK(parse_real_grid("2.5") == std::vector<double>{2.5});
  CHECK(parse_real_grid("1,2,3") == std::vector<double>{1, 2, 3});
  const auto g = parse_real_grid("0.5:1.0:0.1");
  REQUIRE(g.size() == 6);
  CHECK(g.back() == doctest::Approx(1.0));
  CHECK(parse_int_grid("10,25,50,100") == std::vector<std::int64_t>{10, 25, 50, 100});
  CHECK(parse_int_grid("2:8:2") == std::vector<std::int64_t>{2, 4, 6, 8});
  CHECK_THROWS_AS(parse_real_grid(""), ConfigError);
  CHECK_THROWS_AS(parse_real_grid("1:0:0.1"), ConfigError);
  CHECK_THROWS_AS(parse_int_grid("x"), ConfigError);
}

TEST_CASE("config parsing and validation") {
  const auto c = config_from_json(json::parse(R"({
    "method": "qmcw", "seed": 9,
    "system": {"n": "2:4:1", "d": [1.0, 2.0]},
    "drive": {"omega": 0.02},
    "qmcw": {"max_exc": [1, 2], "n_traj": 10}
  })"));
  CHECK(c.method == Method::Qmcw);
  CHECK(c.n == std::vector<std::int64_t>{2, 3, 4});
  CHECK(c.max_exc == std::vector<int>{1, 2});
  CHECK(c.omega == 0.02);
  CHECK(c.delta == 0.0);
  CHECK(c.seed == 9);
  CHECK(c.grid_size() == 12);

  const auto log_grid = config_from_json(json::parse(
      R"({"method": "identical-atom", "system": {"n": {"log10_start": 0, "log10_stop": 9, "count": 10}}})"));
  REQUIRE(log_grid.n.size() == 10);
  CHECK(log_grid.n.back() == 1000000000);

  CHECK_THROWS_AS(config_from_json(json::parse(R"({"sytem": {}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"drive": {"omegaa": 1}})")), ConfigError);
  try {
    config_from_json(json::parse(R"({"drive": {"omega": "fast"}})"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("drive.omega") != std::string::npos);
  }
  RunConfig bad;
  bad.n.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.d = {-1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.method = Method::Exact;
  bad.n = {4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(parse_method("bogus"), ConfigError);
  const RunConfig defaults;
  CHECK(defaults.omega == 0.01);
  CHECK(defaults.n_traj == 2400);
}

TEST_CASE("config hash") {
  RunConfig a, b;
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.output = "elsewhere.jsonl";
  CHECK(a.hash() == b.hash());
  b.seed = 2;
  CHECK(a.hash() != b.hash());
  const auto round = config_from_json(a.to_json());
  CHECK(round.hash() == a.hash());
}

TEST_CASE("grid expansion order and sub-seeds") {
  RunConfig c;
  c.method = Method::Qmcw;
  c.n = {2, 3};
  c.d = {1.0, 2.0};
  c.max_exc = {1, 2};
  const auto g = expand_grid(c);
  REQUIRE(g.size() == 8);
  CHECK(g[0].n == 2);
  CHECK(g[0].d == 1.0);
  CHECK(g[0].max_exc == 1);
  CHECK(g[1].max_exc == 2);
  CHECK(g[2].d == 2.0);
  CHECK(g[4].n == 3);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(g[i].index == i);
    CHECK(g[i].seed == derive_seed(c.seed, i));
  }
}

TEST_CASE("run writes a header, records in grid order and a CSV") {
  const auto out = temp_path("run.jsonl");
  auto c = small_config(out);
  std::ostringstream log;
  const auto s = run(c, false, log);
  CHECK(s.computed == 6);
  CHECK(s.flagged == 0);
  std::ifstream is(out);
  std::string line;
  std::getline(is, line);
  const auto header = json::parse(line);
  CHECK(header.at("type") == "header");
  CHECK(header.at("config_hash") == c.hash());
  CHECK(header.at("config") == c.to_json());
  CHECK(header.contains("version"));
  std::size_t idx = 0;
  while (std::getline(is, line)) {
    const auto r = json::parse(line);
    CHECK(r.at("index") == idx);
    ++idx;
  }
  CHECK(idx == 6);
  const auto csv = slurp(csv_path_for(out));
  CHECK(csv.rfind("index,method,n,d", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("resume is idempotent and refuses a different config") {
  const auto out = temp_path("resume.jsonl");
  auto c = small_config(out);
  std::ostringstream log;
  run(c, false, log);
  const auto whole = slurp(out);

  // Simulate an interruption: keep the header, two records and half a line.
  std::istringstream in(whole);
  std::string l, partial;
  for (int i = 0; i < 3 && std::getline(in, l); ++i) partial += l + '\n';
  std::getline(in, l);
  partial += l.substr(0, l.size() / 2);
  {
    std::ofstream os(out, std::ios::trunc);
    os << partial;
  }
  const auto s = run(c, true, log);
  CHECK(s.skipped == 2);
  CHECK(s.computed == 4);
  CHECK(slurp(out) == whole);

  const auto again = run(c, true, log);
  CHECK(again.computed == 0);
  CHECK(slurp(out) == whole);

  auto other = c;
  other.seed = 99;
  CHECK_THROWS_AS(run(other, true, log), ResumeMismatch);
  CHECK(slurp(out) == whole);
}

TEST_CASE("command-line grids reach the records") {
  const auto out = temp_path("exact.jsonl");
  RunConfig c;
  c.method = Method::Exact;
  c.n = {2};
  c.d = {2.0};
  c.output = out;
  std::ostringstream log;
  run(c, false, log);
  std::ifstream is(out);
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  const auto r = json::parse(line);
  CHECK(r.at("method") == "exact");
  CHECK(r.at("p1").get<double>() == doctest::Approx(0.003598977).epsilon(1e-6));
}
