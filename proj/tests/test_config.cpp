#include <string>

#include "doctest.h"
#include "fedsim/config.hpp"
#include "fedsim/error.hpp"

using namespace fedsim;

namespace {

const char* kMinimal = R"({
  "data": {"partition": {"kind": "iid", "clients": 20}},
  "federation": {"clients_per_round": 5}
})";

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parse_config: minimal config gets the defaults") {
  const RunConfig c = parse_config(kMinimal);
  CHECK(c.data.partition.clients == 20);
  CHECK(c.federation.clients_per_round == 5);
  CHECK(c.federation.max_rounds == 100);
  CHECK(c.federation.client_steps == 1);
  CHECK(c.federation.client_optimizer == SgdConfig{});
  CHECK(std::holds_alternative<AdamConfig>(c.federation.server_optimizer));
  CHECK(std::holds_alternative<UniformStrategy>(c.strategy));
  CHECK(std::holds_alternative<SyntheticSource>(c.data.source));
  CHECK(c.label == "uniform");
  CHECK(c.deterministic);
  CHECK(c.federation.deterministic);
  CHECK_FALSE(c.eval.target.has_value());
  CHECK_FALSE(c.federation.early_stop.has_value());
  CHECK(c.model.hidden == std::vector<std::size_t>{32});
  CHECK(c.architecture(20, 10).layer_dims == std::vector<std::size_t>{20, 32, 10});
}

TEST_CASE("parse_config: N > K names both fields") {
  const auto msg = error_of(R"({
    "data": {"partition": {"kind": "iid", "clients": 4}},
    "federation": {"clients_per_round": 5}
  })");
  CHECK(msg.find("federation.clients_per_round") != std::string::npos);
  CHECK(msg.find("data.partition.clients") != std::string::npos);
}

TEST_CASE("parse_config: semantic errors name the field") {
  CHECK(error_of(R"({"data": {}, "federation": {"clients_per_round": 1, "colour": 3}})")
            .find("federation.colour") != std::string::npos);
  CHECK(error_of(R"({"data": {}, "federation": {}})").find("federation.clients_per_round") !=
        std::string::npos);
  CHECK(error_of(R"({"federation": {"clients_per_round": 1}})").find("data") != std::string::npos);
  CHECK(error_of(R"({"data": {}, "federation": {"clients_per_round": -1}})")
            .find("federation.clients_per_round") != std::string::npos);
  CHECK(error_of(R"({"data": {}, "federation": {"clients_per_round": 1},
                     "strategy": {"kind": "softmax", "beta": "hot"}})")
            .find("strategy.beta") != std::string::npos);
  CHECK(error_of(R"({"data": {}, "federation": {"clients_per_round": 1},
                     "strategy": {"kind": "greedy"}})")
            .find("greedy") != std::string::npos);
  CHECK_THROWS_AS(parse_config(R"({"data": {}, "federation": {"clients_per_round": 1}, "x": 1})"),
                  ConfigError);
}

TEST_CASE("parse_config: syntax errors carry a location") {
  try {
    parse_config("{\n  \"data\": {,\n}");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("parse_config: full config") {
  const RunConfig c = parse_config(R"({
    "label": "rl-b5",
    "data": {
      "source": {"kind": "synthetic", "classes": 4, "dims": 8, "examples": 400},
      "validation_fraction": 0.2,
      "rehearsal_fraction": 0.05,
      "partition": {"kind": "label_skew", "clients": 10, "concentration": 0.5},
      "noise": {"noisy_client_fraction": 0.2, "label_flip_prob": 0.5}
    },
    "model": {"hidden": [16, 8], "activation": "tanh"},
    "federation": {
      "clients_per_round": 4, "max_rounds": 30, "client_steps": 2, "client_batch_size": 16,
      "client_optimizer": {"learning_rate": 0.05, "momentum": 0.5},
      "server_optimizer": {"kind": "sgd"},
      "rehearsal": {"steps": 2, "batch_size": 8, "learning_rate": 0.001},
      "size_weighting": true, "workers": 3, "seed": 99
    },
    "strategy": {"kind": "rl", "beta": 5, "threshold": 0.01, "reward": 2,
                 "learning_rate": 0.0005, "exploration": 0.5, "replay_capacity": 50, "minibatch": 8},
    "eval": {"metric": "val_loss", "target": 0.4},
    "output_dir": "runs/x",
    "deterministic": false
  })");
  CHECK(c.label == "rl-b5");
  CHECK(c.data.partition.kind == PartitionSpec::Kind::kLabelSkew);
  CHECK(c.data.noise.label_flip_prob == 0.5);
  CHECK(c.model.activation == Activation::kTanh);
  CHECK(std::get<SgdConfig>(c.federation.server_optimizer).learning_rate == 1.0);
  CHECK(c.federation.rehearsal == RehearsalConfig{2, 8, 0.001});
  CHECK(c.federation.workers == 3);
  CHECK_FALSE(c.federation.deterministic);
  const auto& rl = std::get<RlStrategy>(c.strategy);
  CHECK(rl.beta == 5.0);
  CHECK(rl.policy == RewardPolicy{0.01, 2.0});
  CHECK(rl.agent.optimizer.learning_rate == 0.0005);
  CHECK(rl.agent.replay_capacity == 50);
  REQUIRE(c.federation.early_stop.has_value());
  CHECK(c.federation.early_stop->metric == StopMetric::kValLoss);
  CHECK(c.federation.early_stop->target == 0.4);
}

TEST_CASE("serialize_config round trip") {
  for (const char* text : {kMinimal, R"({
      "data": {"source": {"kind": "csv", "path": "a.csv"},
               "partition": {"kind": "grouped"}},
      "federation": {"clients_per_round": 2, "server_optimizer": {"kind": "adam", "learning_rate": 0.01}},
      "strategy": {"kind": "softmax", "beta": 10},
      "eval": {"target": 0.9, "early_stop": false}
    })"}) {
    const RunConfig c = parse_config(text);
    const std::string s = serialize_config(c);
    const RunConfig again = parse_config(s);
    CHECK(again == c);
    CHECK(serialize_config(again) == s);
  }
}
