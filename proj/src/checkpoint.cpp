#include "fedsim/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "fedsim/error.hpp"
#include "json.hpp"

namespace fedsim {

using nlohmann::json;

namespace {

constexpr const char* kServerFormat = "fedsim-checkpoint";
constexpr const char* kAgentFormat = "fedsim-agent-checkpoint";

json arch_to_json(const Architecture& arch) {
  return {{"layer_dims", arch.layer_dims}, {"activation", to_string(arch.activation)}};
}

Architecture arch_from_json(const json& j) {
  Architecture arch{j.at("layer_dims").get<std::vector<std::size_t>>(),
                    activation_from_string(j.at("activation").get<std::string>())};
  arch.validate();
  return arch;
}

json adam_to_json(const AdamConfig& cfg, const AdamState& st) {
  return {{"learning_rate", cfg.learning_rate},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"epsilon", cfg.epsilon},
          {"t", st.t},
          {"m", st.m.values},
          {"v", st.v.values}};
}

AdamState adam_state_from_json(const json& j) {
  return AdamState{ParameterVector(j.at("m").get<std::vector<double>>()),
                   ParameterVector(j.at("v").get<std::vector<double>>()),
                   j.at("t").get<std::uint64_t>()};
}

AdamConfig adam_config_from_json(const json& j) {
  return AdamConfig{j.at("learning_rate").get<double>(), j.at("beta1").get<double>(),
                    j.at("beta2").get<double>(), j.at("epsilon").get<double>()};
}

json optimizer_to_json(const ServerOptimizer& opt) {
  json j = std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ServerOptimizer::Sgd>) {
          return {{"kind", "sgd"},
                  {"learning_rate", s.cfg.learning_rate},
                  {"momentum", s.cfg.momentum},
                  {"velocity", s.velocity ? json(s.velocity->values) : json(nullptr)}};
        } else {
          json a = adam_to_json(s.cfg, s.state);
          a["kind"] = "adam";
          return a;
        }
      },
      opt.impl());
  j["steps"] = opt.steps_taken();
  return j;
}

ServerOptimizer optimizer_from_json(const json& j, std::size_t num_params) {
  const auto kind = j.at("kind").get<std::string>();
  ServerOptimizer opt;
  if (kind == "sgd") {
    opt = ServerOptimizer::sgd(
        SgdConfig{j.at("learning_rate").get<double>(), j.at("momentum").get<double>()});
    if (!j.at("velocity").is_null()) {
      auto& s = std::get<ServerOptimizer::Sgd>(opt.impl());
      s.velocity = ParameterVector(j.at("velocity").get<std::vector<double>>());
      if (s.velocity->size() != num_params) throw LengthError("checkpoint velocity length");
    }
  } else if (kind == "adam") {
    opt = ServerOptimizer::adam(adam_config_from_json(j), num_params);
    auto& s = std::get<ServerOptimizer::Adam>(opt.impl());
    s.state = adam_state_from_json(j);
    if (s.state.m.size() != num_params || s.state.v.size() != num_params) {
      throw LengthError("checkpoint adam moment length");
    }
  } else {
    throw ParseError("unknown server optimizer kind '" + kind + "'");
  }
  opt.set_steps_taken(j.at("steps").get<std::uint64_t>());
  return opt;
}

json parse_container(const std::string& text, const char* format) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != format) {
    throw ParseError(std::string("checkpoint: expected format '") + format + "'");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version");
  }
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text << '\n';
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string serialize_checkpoint(const ServerState& state) {
  nlohmann::ordered_json j;
  j["format"] = kServerFormat;
  j["version"] = kCheckpointVersion;
  j["round"] = state.round;
  j["architecture"] = arch_to_json(state.architecture);
  j["global_params"] = state.global_params.values;
  j["server_optimizer"] = optimizer_to_json(state.optimizer);
  j["master_seed"] = state.master_seed;
  return j.dump();
}

ServerState deserialize_checkpoint(const std::string& text) {
  const json j = parse_container(text, kServerFormat);
  try {
    ServerState s;
    s.round = j.at("round").get<std::uint64_t>();
    s.architecture = arch_from_json(j.at("architecture"));
    s.global_params = ParameterVector(j.at("global_params").get<std::vector<double>>(),
                                      ParameterLayout::for_architecture(s.architecture));
    if (s.global_params.size() != s.architecture.parameter_count()) {
      throw LengthError("checkpoint parameter count does not match its architecture");
    }
    s.optimizer = optimizer_from_json(j.at("server_optimizer"), s.global_params.size());
    s.master_seed = j.at("master_seed").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ServerState& state) {
  write_text(path, serialize_checkpoint(state));
}

ServerState load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text(path));
}

std::string serialize_agent(const RlAgent& agent, std::uint64_t round) {
  nlohmann::ordered_json j;
  j["format"] = kAgentFormat;
  j["version"] = kCheckpointVersion;
  j["round"] = round;
  j["slots"] = agent.slots();
  j["architecture"] = arch_to_json(agent.network().architecture());
  j["params"] = to_params(agent.network()).values;
  j["optimizer"] = adam_to_json(agent.config().optimizer, agent.optimizer_state());
  return j.dump();
}

void restore_agent(RlAgent& agent, const std::string& text) {
  const json j = parse_container(text, kAgentFormat);
  try {
    if (j.at("slots").get<std::size_t>() != agent.slots()) {
      throw DimensionError("agent checkpoint was written for a different client count");
    }
    const auto arch = arch_from_json(j.at("architecture"));
    agent.restore(from_params(arch, ParameterVector(j.at("params").get<std::vector<double>>())),
                  adam_state_from_json(j.at("optimizer")));
  } catch (const json::exception& e) {
    throw ParseError(std::string("agent checkpoint: ") + e.what());
  }
}

void save_agent_checkpoint(const std::filesystem::path& path, const RlAgent& agent,
                           std::uint64_t round) {
  write_text(path, serialize_agent(agent, round));
}

}  // namespace fedsim
