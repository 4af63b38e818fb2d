#include "ctlgan/checkpoint.hpp"

#include "ctlgan/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace ctlgan {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'T', 'L', 'G', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

std::string dtype_tag(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw InvalidArgument("checkpoint supports f32, f64 and i64 tensors only");
  }
}

torch::Dtype dtype_from_tag(const std::string& tag) {
  if (tag == "f32") return torch::kFloat32;
  if (tag == "f64") return torch::kFloat64;
  if (tag == "i64") return torch::kInt64;
  throw InvalidData("unknown tensor dtype tag '" + tag + "'");
}

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw InvalidData("truncated checkpoint");
  return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["kind"] = checkpoint.kind;
  header["metadata"] = checkpoint.metadata;
  header["tensors"] = nlohmann::json::array();

  std::vector<torch::Tensor> payload;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : checkpoint.tensors) {
    auto t = tensor.detach().contiguous().cpu();
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_tag(t.scalar_type())},
                                 {"shape", t.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(std::move(t));
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open checkpoint for writing: " + path.string());
  const auto text = header.dump();
  os.write(kMagic.data(), kMagic.size());
  write_pod<uint32_t>(os, kCheckpointVersion);
  write_pod<uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : payload) {
    os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
  }
  if (!os) throw ConfigError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw InvalidData("not a ctlgan checkpoint: " + path.string());
  }
  const auto version = read_pod<uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw InvalidData("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = read_pod<uint64_t>(is);
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len))) throw InvalidData("truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidData(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint out;
  out.kind = header.at("kind").get<std::string>();
  out.metadata = header.value("metadata", nlohmann::json::object());
  const auto data_start = is.tellg();
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from_tag(entry.at("dtype"))));
    const auto nbytes = entry.at("nbytes").get<uint64_t>();
    if (nbytes != static_cast<uint64_t>(t.numel()) * t.element_size()) throw InvalidData("tensor size mismatch");
    is.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    if (!is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes))) {
      throw InvalidData("truncated tensor payload");
    }
    out.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"resolution", c.resolution},         {"latent_dim", c.latent_dim},
          {"channels", c.channels},             {"image_channels", c.image_channels},
          {"mapping_layers", c.mapping_layers}, {"identity_mapping", c.identity_mapping}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.channels = j.value("channels", c.channels);
  c.image_channels = j.value("image_channels", c.image_channels);
  c.mapping_layers = j.value("mapping_layers", c.mapping_layers);
  c.identity_mapping = j.value("identity_mapping", c.identity_mapping);
  return c;
}

Checkpoint generator_checkpoint(const Generator& generator) {
  Checkpoint ckpt;
  ckpt.kind = "generator";
  ckpt.metadata = {{"config", to_json(generator.config())},
                   {"resolution", generator.resolution()},
                   {"n", generator.layers()},
                   {"mapping_frozen", generator.mapping_frozen()}};
  ckpt.tensors = generator.named_tensors();
  return ckpt;
}

Generator generator_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "generator") throw InvalidData("checkpoint kind is '" + ckpt.kind + "', expected 'generator'");
  const auto config = generator_config_from_json(ckpt.metadata.at("config"));
  Generator g(config, 0);
  if (ckpt.metadata.value("n", g.layers()) != g.layers()) throw InvalidData("checkpoint layer count is inconsistent");
  if (!ckpt.tensors.empty() && ckpt.tensors.begin()->second.scalar_type() == torch::kFloat64) g.to(torch::kFloat64);
  g.load_named_tensors(ckpt.tensors);
  g.set_mapping_frozen(ckpt.metadata.value("mapping_frozen", false));
  return g;
}

void save_generator(const std::filesystem::path& path, const Generator& generator) {
  write_checkpoint(path, generator_checkpoint(generator));
}

Generator load_generator(const std::filesystem::path& path) { return generator_from_checkpoint(read_checkpoint(path)); }

}  // namespace ctlgan
