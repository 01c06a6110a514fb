#pragma once

#include <filesystem>
#include <string>

#include "fedsim/dga.hpp"
#include "fedsim/server.hpp"

namespace fedsim {

inline constexpr int kCheckpointVersion = 1;

// Self-describing JSON container: format tag, version, round, architecture,
// global parameters, server optimizer state and master seed. Doubles are
// written in shortest round-trip form, so loading is lossless.
std::string serialize_checkpoint(const ServerState& state);
ServerState deserialize_checkpoint(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const ServerState& state);
ServerState load_checkpoint(const std::filesystem::path& path);

// Agent network and its optimizer state, same container format.
std::string serialize_agent(const RlAgent& agent, std::uint64_t round);
void restore_agent(RlAgent& agent, const std::string& text);

void save_agent_checkpoint(const std::filesystem::path& path, const RlAgent& agent,
                           std::uint64_t round);

}  // namespace fedsim
