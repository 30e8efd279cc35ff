#include "paramixer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace paramixer {

namespace {

constexpr char kMagic[8] = {'P', 'M', 'X', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "paramixer-checkpoint";
  manifest["version"] = 1;
  manifest["metadata"] = checkpoint.metadata;
  manifest["tensors"] = nlohmann::ordered_json::array();
  std::string payload;
  for (const auto& t : checkpoint.tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = t.name;
    entry["shape"] = {t.value.rows(), t.value.cols()};
    entry["offset"] = payload.size();
    manifest["tensors"].push_back(entry);
    for (Eigen::Index i = 0; i < t.value.size(); ++i) put_u64(payload, std::bit_cast<std::uint64_t>(t.value.data()[i]));
  }
  const std::string text = manifest.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const std::uint64_t manifest_len = get_u64(bytes, 8);
  if (manifest_len > bytes.size() - 16) throw CheckpointError("truncated checkpoint manifest");
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  if (manifest.value("version", 0) != 1) throw CheckpointError("unsupported checkpoint version");
  const std::size_t payload_start = 16 + manifest_len;
  Checkpoint out;
  out.metadata = manifest.at("metadata");
  for (const auto& entry : manifest.at("tensors")) {
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = static_cast<std::size_t>(rows * cols);
    if (rows < 0 || cols < 0 || payload_start + offset + 8 * count > bytes.size())
      throw CheckpointError("tensor '" + entry.at("name").get<std::string>() + "' exceeds the payload");
    NamedTensor t{entry.at("name").get<std::string>(), Array2d(rows, cols)};
    for (std::size_t i = 0; i < count; ++i)
      t.value.data()[i] = std::bit_cast<double>(get_u64(bytes, payload_start + offset + 8 * i));
    out.tensors.push_back(std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw CheckpointError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << file.rdbuf();
  return decode_checkpoint(buf.str());
}

Checkpoint model_checkpoint(const ModelConfig& config, const ModelParams<double>& params,
                            nlohmann::ordered_json extra) {
  Checkpoint ck;
  ck.metadata = std::move(extra);
  ck.metadata["config"] = to_json(config);
  params.for_each_param([&](const std::string& name, const Array2d& t) { ck.tensors.push_back({name, t}); });
  return ck;
}

RestoredModel restore_model(const Checkpoint& checkpoint) {
  if (!checkpoint.metadata.contains("config")) throw CheckpointError("checkpoint carries no model config");
  RestoredModel out;
  try {
    out.config = model_config_from_json(checkpoint.metadata.at("config"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  out.params = init_model<double>(out.config, 0);
  std::size_t i = 0;
  out.params.for_each_param([&](const std::string& name, Array2d& t) {
    if (i >= checkpoint.tensors.size()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    const auto& src = checkpoint.tensors[i++];
    if (src.name != name || src.value.rows() != t.rows() || src.value.cols() != t.cols())
      throw CheckpointError("checkpoint tensor '" + src.name + "' does not match expected '" + name + "' " +
                            shape_string(t.rows(), t.cols()));
    t = src.value;
  });
  if (i != checkpoint.tensors.size()) throw CheckpointError("checkpoint has unexpected extra tensors");
  return out;
}

}  // namespace paramixer
