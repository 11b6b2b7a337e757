#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <string>

#include "doctest.h"
#include "relureduce/config.hpp"
#include "relureduce/errors.hpp"

using namespace relureduce;

TEST_CASE("an empty document yields the defaults") {
  auto cfg = config_from_json("{}");
  CHECK(cfg.arch.family.empty());  // the CLI requires an explicit family
  CHECK(cfg.train.lr0 == 0.1);
  CHECK(cfg.train.epochs == 120);
  CHECK(cfg.kd.temperature == 4.0);
  CHECK(cfg.w == 0.07);
  CHECK(cfg.parity == "keep-odd");
  CHECK(cfg.ladder.size() == 3);
  CHECK(cfg.data.source == "synthetic-blobs");
  CHECK(cfg.io.out_dir == ".");
  CHECK(cfg.threads == 1);
  CHECK(config_to_json(cfg) == config_to_json(RunConfig{}));
}

TEST_CASE("emission round-trips byte-identically") {
  RunConfig cfg;
  cfg.arch = {.family = "mobilenetv1", .input = 16, .channels = 3, .classes = 7,
              .strip_residuals = true, .alpha = 0.25, .rho = 0.5};
  cfg.train.lr0 = 0.05;
  cfg.train.epochs = 3;
  cfg.train.schedule = "cosine";
  cfg.train.seed = 42;
  cfg.train.augment = true;
  cfg.kd = {.enabled = true, .temperature = 2.5, .hard_weight = 0.8};
  cfg.w = 0.1;
  cfg.ladder = {{0.25, 1.0}};
  cfg.parity = "keep-even";
  cfg.latency_points = {{1.0, 0.5}, {2.0, 0.9}};
  cfg.cull_override = {"S2", "S1"};
  cfg.data = {.source = "cifar10-binary", .data_dir = "/tmp/d", .classes = 10,
              .resolution = 32, .channels = 3, .train_samples = 100,
              .test_samples = 50, .seed = 3, .normalize = false};
  cfg.io.out_dir = "out";
  cfg.io.measurements_csv = "m.csv";
  cfg.threads = 2;

  const std::string text = config_to_json(cfg);
  auto back = config_from_json(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.arch.family == "mobilenetv1");
  CHECK(back.arch.alpha == 0.25);
  CHECK(back.train.seed == 42);
  CHECK(back.kd.hard_weight == 0.8);
  CHECK(back.ladder == cfg.ladder);
  CHECK(back.latency_points == cfg.latency_points);
  CHECK(back.cull_override == cfg.cull_override);
  CHECK(back.data.train_samples == 100);
  CHECK(back.io.measurements_csv == "m.csv");
  CHECK(back.threads == 2);
}

TEST_CASE("partial sections override only their keys") {
  auto cfg = config_from_json(R"({"train": {"epochs": 3}, "pipeline": {"w": 0.2}})");
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.lr0 == 0.1);
  CHECK(cfg.w == 0.2);
  CHECK(cfg.parity == "keep-odd");
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), config_error);
  CHECK_THROWS_AS(config_from_json(R"({"arch": {"flavor": "x"}})"), config_error);
  CHECK_THROWS_AS(config_from_json(R"({"pipeline": {"dataset": {"sources": "y"}}})"),
                  config_error);
  CHECK_THROWS_AS(config_from_json(R"({"io": {"outdir": "z"}})"), config_error);
}

TEST_CASE("malformed documents and types are config errors") {
  CHECK_THROWS_AS(config_from_json("not json"), config_error);
  CHECK_THROWS_AS(config_from_json(R"({"train": {"epochs": "many"}})"), config_error);
  CHECK_THROWS_AS(config_from_json(R"({"train": 5})"), config_error);
  CHECK_THROWS_AS(config_from_json(R"({"pipeline": {"ladder": [[0.5]]}})"), config_error);
  CHECK_THROWS_AS(config_from_json(R"({"pipeline": {"ladder": 3}})"), config_error);
  CHECK_THROWS_AS(config_from_json(R"({"threads": 0})"), config_error);
}

TEST_CASE("pipeline config assembles from the run config") {
  RunConfig cfg;
  cfg.arch.family = "resnet10";
  cfg.w = 0.09;
  cfg.parity = "keep-even";
  cfg.ladder = {{0.5, 0.5}};
  cfg.cull_override = {"S1"};
  cfg.latency_points = {{1.0, 1.0}, {2.0, 2.0}};
  auto p = pipeline_config(cfg);
  CHECK(p.arch.family == "resnet10");
  CHECK(p.w == 0.09);
  CHECK(p.parity == "keep-even");
  CHECK(p.ladder == cfg.ladder);
  CHECK(p.cull_override == cfg.cull_override);
  CHECK(p.latency_points == cfg.latency_points);
}
