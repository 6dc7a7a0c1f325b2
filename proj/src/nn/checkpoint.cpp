#include "maya/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "maya/detail/le_io.hpp"

namespace maya::nn {

using nlohmann::json;

json spec_to_json(const LayerSpec& s) {
  json j = {{"kind", std::string(to_string(s.kind))}, {"name", s.name}};
  switch (s.kind) {
    case LayerKind::conv:
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = std::string(to_string(s.padding));
      j["in"] = s.in_channels;
      j["out"] = s.out_channels;
      j["relu"] = s.relu;
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = std::string(to_string(s.padding));
      break;
    case LayerKind::inception:
      j["in"] = s.in_channels;
      j["branches"] = {{"1x1", s.inception.one_by_one},       {"3x3_reduce", s.inception.reduce3},
                       {"3x3", s.inception.three_by_three},   {"5x5_reduce", s.inception.reduce5},
                       {"5x5", s.inception.five_by_five},     {"pool_proj", s.inception.pool_proj}};
      break;
    case LayerKind::fully_connected:
      j["in"] = s.in_channels;
      j["out"] = s.out_channels;
      j["relu"] = s.relu;
      break;
    case LayerKind::l2norm: break;
  }
  return j;
}

LayerSpec spec_from_json(const json& j) {
  try {
    const LayerKind kind = layer_kind_from_string(j.at("kind").get<std::string>());
    const auto name = j.at("name").get<std::string>();
    switch (kind) {
      case LayerKind::conv:
        return LayerSpec::conv(name, j.at("kernel"), j.at("stride"), j.at("in"), j.at("out"), j.at("relu"),
                               padding_from_string(j.at("padding").get<std::string>()));
      case LayerKind::maxpool:
        return LayerSpec::maxpool(name, j.at("kernel"), j.at("stride"),
                                  padding_from_string(j.at("padding").get<std::string>()));
      case LayerKind::avgpool:
        return LayerSpec::avgpool(name, j.at("kernel"), j.at("stride"),
                                  padding_from_string(j.at("padding").get<std::string>()));
      case LayerKind::inception: {
        const json& b = j.at("branches");
        InceptionSpec s{b.at("1x1"), b.at("3x3_reduce"), b.at("3x3"), b.at("5x5_reduce"), b.at("5x5"),
                        b.at("pool_proj")};
        return LayerSpec::make_inception(name, j.at("in"), s);
      }
      case LayerKind::fully_connected:
        return LayerSpec::fully_connected(name, j.at("in"), j.at("out"), j.at("relu"));
      case LayerKind::l2norm: return LayerSpec::l2norm(name);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad layer descriptor: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("bad layer descriptor: ") + e.what());
  }
  throw CheckpointError("bad layer descriptor");
}

void write_checkpoint(std::ostream& out, const Network& net, const json& meta) {
  json layers = json::array();
  for (const auto& s : net.specs()) layers.push_back(spec_to_json(s));
  const std::string descriptor = json{{"layers", layers}, {"meta", meta}}.dump();

  out.write("MAYA", 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(descriptor.size()));
  out.write(descriptor.data(), static_cast<std::streamsize>(descriptor.size()));
  for (const Tensor* p : net.parameters()) {
    for (double v : p->data()) detail::write_f32(out, static_cast<float>(v));
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  try {
    detail::expect_magic(in, "MAYA");
    const std::uint32_t version = detail::read_u32(in);
    if (version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t length = detail::read_u32(in);
    std::string descriptor(length, '\0');
    in.read(descriptor.data(), length);
    if (static_cast<std::uint32_t>(in.gcount()) != length) throw CheckpointError("truncated descriptor");

    const json doc = json::parse(descriptor);
    Checkpoint ck;
    for (const auto& l : doc.at("layers")) ck.network.add(spec_from_json(l));
    ck.meta = doc.value("meta", json::object());
    for (Tensor* p : ck.network.parameters()) {
      for (double& v : p->data()) v = detail::read_f32(in);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after parameters");
    return ck;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, net, meta);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace maya::nn
