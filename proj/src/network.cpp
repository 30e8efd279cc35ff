#include "paramixer/network.hpp"

namespace paramixer {

ProtocolSpec ModelConfig::resolved_protocol() const {
  ProtocolSpec spec = protocol;
  spec.seq_len = seq_len;
  return spec.resolved();
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw NumericsError("invalid model config: " + msg); };
  if (seq_len < 2) fail("sequence length must be >= 2");
  if (blocks < 0) fail("block count must be >= 0");
  if (width < 1 || hidden < 1) fail("widths must be positive");
  if (task == TaskKind::classification && classes < 2) fail("classification needs at least 2 classes");
  if (input_mode == InputMode::token && vocab < 1) fail("token input needs a vocabulary");
  if (pooling == Pooling::cls) {
    if (input_mode == InputMode::real_pair) fail("CLS pooling is not available for real-valued pair input");
    if (vocab < 2) fail("CLS pooling needs a reserved CLS symbol in the vocabulary");
  }
  resolved_protocol();
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  const auto proto = c.resolved_protocol();
  nlohmann::ordered_json j;
  j["task"] = c.task == TaskKind::regression ? "regression" : "classification";
  j["classes"] = c.classes;
  j["seq_len"] = c.seq_len;
  j["blocks"] = c.blocks;
  j["width"] = c.width;
  j["hidden"] = c.hidden;
  j["vocab"] = c.vocab;
  j["pooling"] = c.pooling == Pooling::flat ? "FLAT" : "CLS";
  j["use_pos_embed"] = c.use_pos_embed;
  j["input_mode"] = c.input_mode == InputMode::token ? "token" : "real_pair";
  j["protocol"] = to_string(proto.kind);
  j["links"] = proto.links;
  j["factors"] = proto.factors;
  j["factors_from_input"] = c.factors_from_input;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.task = j.at("task").get<std::string>() == "regression" ? TaskKind::regression : TaskKind::classification;
  c.classes = j.at("classes").get<std::int64_t>();
  c.seq_len = j.at("seq_len").get<std::int64_t>();
  c.blocks = j.at("blocks").get<std::int64_t>();
  c.width = j.at("width").get<std::int64_t>();
  c.hidden = j.at("hidden").get<std::int64_t>();
  c.vocab = j.at("vocab").get<std::int64_t>();
  c.pooling = j.at("pooling").get<std::string>() == "CLS" ? Pooling::cls : Pooling::flat;
  c.use_pos_embed = j.at("use_pos_embed").get<bool>();
  c.input_mode = j.at("input_mode").get<std::string>() == "token" ? InputMode::token : InputMode::real_pair;
  c.protocol.kind = parse_protocol_kind(j.at("protocol").get<std::string>());
  c.protocol.links = j.at("links").get<std::int64_t>();
  c.protocol.factors = j.at("factors").get<std::int64_t>();
  c.protocol.seq_len = c.seq_len;
  c.factors_from_input = j.at("factors_from_input").get<bool>();
  c.validate();
  return c;
}

FlopEstimate count_flops_estimate(const ModelConfig& config) {
  config.validate();
  const auto spec = config.resolved_protocol();
  const std::int64_t n = config.seq_len;
  const std::int64_t d = config.width;
  const std::int64_t h = config.hidden;
  FlopEstimate e;
  e.stored_entries_per_block = stored_entries(spec);
  e.mixing_multiplies = config.blocks * spec.factors * n * spec.links * d;
  const std::int64_t per_block_mlp = spec.factors * n * (d * h + h * spec.links) + n * (d * h + h * d);
  e.mlp_multiplies = config.blocks * per_block_mlp;
  e.head_multiplies = (config.pooling == Pooling::flat ? n * d : d) * config.outputs();
  return e;
}

}  // namespace paramixer
