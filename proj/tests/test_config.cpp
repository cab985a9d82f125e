#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "intuit/config.hpp"

using namespace intuit;

TEST_CASE("defaults validate and serialize completely") {
  RunConfig c;
  REQUIRE_NOTHROW(c.validate());
  std::string s = serialize_config(c);
  // every listed key parses back to an identical config
  RunConfig back;
  std::stringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) apply_config_line(back, line);
  REQUIRE(serialize_config(back) == s);
  REQUIRE(config_hash(back) == config_hash(c));
}

TEST_CASE("file round trip with comments and overrides") {
  {
    std::ofstream f("cfg_test.conf");
    f << "# pilot settings\n";
    f << "hyper.lr = 0.003\n";
    f << "world.num_classes = 5   # wider label space\n";
    f << "\n";
    f << "sampler.max_trace_tokens = 48\n";
  }
  RunConfig c = load_config("cfg_test.conf");
  REQUIRE(c.hyper.lr == 0.003);
  REQUIRE(c.world.num_classes == 5);
  REQUIRE(c.sampler.max_trace_tokens == 48);
  // untouched keys keep defaults
  REQUIRE(c.hyper.K == 8);
  std::remove("cfg_test.conf");

  apply_config_line(c, "hyper.group_size = 4");
  REQUIRE(c.hyper.K == 4);
  REQUIRE_THROWS_AS(apply_config_line(c, "no.such.key = 1"), ParameterError);
  REQUIRE_THROWS_AS(apply_config_line(c, "just words"), ParameterError);
}

TEST_CASE("hash covers semantics but not output paths") {
  RunConfig a, b;
  REQUIRE(config_hash(a) == config_hash(b));
  b.paths.report_dir = "elsewhere";
  REQUIRE(config_hash(a) == config_hash(b));
  b.hyper.tau = 2.0;
  REQUIRE(config_hash(a) != config_hash(b));
  REQUIRE(config_hash_hex(a).size() == 16);
}

TEST_CASE("template lists round trip") {
  RunConfig c;
  apply_config_line(c, "world.train_templates = 0,1");
  apply_config_line(c, "world.eval_templates = 2,3,4");
  REQUIRE(c.world.train_templates == std::vector<int>{0, 1});
  REQUIRE(c.world.eval_templates == std::vector<int>{2, 3, 4});
  std::string s = serialize_config(c);
  REQUIRE(s.find("world.eval_templates = 2,3,4") != std::string::npos);
}

TEST_CASE("invalid configs are rejected before running") {
  RunConfig c;
  c.splits.eval = 0;
  REQUIRE_THROWS_AS(c.validate(), ParameterError);
  c = RunConfig{};
  c.world.num_classes = 1;
  REQUIRE_THROWS_AS(c.validate(), ParameterError);
  c = RunConfig{};
  c.rewards.w_format = 0.9;
  REQUIRE_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("manifest names the hash and seed") {
  RunConfig c;
  c.hyper.seed = 17;
  nlohmann::json m = run_manifest("cold-start", c);
  REQUIRE(m["stage"] == "cold-start");
  REQUIRE(m["config_hash"] == config_hash_hex(c));
  REQUIRE(m["seed"] == 17);
  REQUIRE(m.contains("revision"));
}
