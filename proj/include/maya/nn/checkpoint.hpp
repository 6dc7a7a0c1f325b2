#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "maya/nn/network.hpp"

namespace maya::nn {

// Layout: "MAYA", u32 version, u32 descriptor length, UTF-8 JSON descriptor
// {"layers": [...], "meta": {...}}, then every parameter tensor as
// little-endian float32 in parameter order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Network network;
  nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json spec_to_json(const LayerSpec& spec);
LayerSpec spec_from_json(const nlohmann::json& j);

void write_checkpoint(std::ostream& out, const Network& net, const nlohmann::json& meta);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Network& net, const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace maya::nn
