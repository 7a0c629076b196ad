// SPDX-License-Identifier: Apache-2.0
#include "smad/runconfig.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "smad/errors.hpp"

namespace smad {

namespace {

using nlohmann::json;
using Handler = std::function<void(const json&, const std::string&)>;

std::size_t as_size(const json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !v.is_number_integer()) {
    throw ConfigError(path + ": expected a non-negative integer");
  }
  const auto x = v.get<long long>();
  if (x < 0) throw ConfigError(path + ": expected a non-negative integer");
  return static_cast<std::size_t>(x);
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  return static_cast<std::uint64_t>(as_size(v, path));
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
  return v.get<bool>();
}

std::string as_str(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + ": expected a string");
  return v.get<std::string>();
}

void apply_object(const json& j, const std::string& path,
                  const std::map<std::string, Handler>& handlers) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    auto it = handlers.find(key);
    if (it == handlers.end()) {
      throw ConfigError(path + "." + key + ": unknown key");
    }
    it->second(value, path + "." + key);
  }
}

void apply_data(const json& j, RunConfig& cfg) {
  apply_object(j, "$.data",
               {{"seed", [&](const json& v, const std::string& p) { cfg.data.seed = as_u64(v, p); }},
                {"n_utterances", [&](const json& v, const std::string& p) { cfg.data.n_utterances = as_size(v, p); }},
                {"vocab_size", [&](const json& v, const std::string& p) { cfg.data.vocab_size = as_size(v, p); }},
                {"min_len", [&](const json& v, const std::string& p) { cfg.data.min_len = as_size(v, p); }},
                {"max_len", [&](const json& v, const std::string& p) { cfg.data.max_len = as_size(v, p); }},
                {"feature_dim", [&](const json& v, const std::string& p) { cfg.data.feature_dim = as_size(v, p); }},
                {"noise", [&](const json& v, const std::string& p) { cfg.data.noise = as_double(v, p); }},
                {"dir", [&](const json& v, const std::string& p) { cfg.data_dir = as_str(v, p); }}});
}

void apply_model(const json& j, RunConfig& cfg) {
  ModelConfig& m = cfg.model;
  apply_object(
      j, "$.model",
      {{"variant", [&](const json& v, const std::string& p) { m.variant = variant_from_string(as_str(v, p)); }},
       {"n_enc_layers", [&](const json& v, const std::string& p) { m.n_enc_layers = as_size(v, p); }},
       {"n_dec_layers", [&](const json& v, const std::string& p) { m.n_dec_layers = as_size(v, p); }},
       {"d_model", [&](const json& v, const std::string& p) { m.d_model = as_size(v, p); }},
       {"d_ff", [&](const json& v, const std::string& p) { m.d_ff = as_size(v, p); }},
       {"n_heads", [&](const json& v, const std::string& p) { m.n_heads = as_size(v, p); }},
       {"vocab_size", [&](const json& v, const std::string& p) { m.vocab_size = as_size(v, p); }},
       {"feature_dim", [&](const json& v, const std::string& p) { m.feature_dim = as_size(v, p); }},
       {"lambda_ctc", [&](const json& v, const std::string& p) { m.lambda_ctc = as_double(v, p); }},
       {"ctc_placement", [&](const json& v, const std::string& p) { m.ctc_placement = placement_from_string(as_str(v, p)); }},
       {"label_smoothing", [&](const json& v, const std::string& p) { m.label_smoothing = as_double(v, p); }},
       {"dropout", [&](const json& v, const std::string& p) { m.dropout = as_double(v, p); }},
       {"tie_embedding", [&](const json& v, const std::string& p) { m.tie_embedding = as_bool(v, p); }},
       {"seed", [&](const json& v, const std::string& p) { m.seed = as_u64(v, p); }}});
}

void apply_spec_augment(const json& j, SpecMaskConfig& s,
                        const std::string& path) {
  apply_object(j, path,
               {{"n_time_masks", [&](const json& v, const std::string& p) { s.n_time_masks = as_size(v, p); }},
                {"n_freq_masks", [&](const json& v, const std::string& p) { s.n_freq_masks = as_size(v, p); }},
                {"max_time_width", [&](const json& v, const std::string& p) { s.max_time_width = as_size(v, p); }},
                {"max_freq_width", [&](const json& v, const std::string& p) { s.max_freq_width = as_size(v, p); }}});
}

void apply_optim(const json& j, RunConfig& cfg) {
  TrainerOptions& o = cfg.optim;
  apply_object(
      j, "$.optim",
      {{"max_steps", [&](const json& v, const std::string& p) { o.max_steps = as_size(v, p); }},
       {"batch_size", [&](const json& v, const std::string& p) { o.batch_size = as_size(v, p); }},
       {"eval_interval", [&](const json& v, const std::string& p) { o.eval_interval = as_size(v, p); }},
       {"warmup_steps", [&](const json& v, const std::string& p) { o.warmup_steps = as_size(v, p); }},
       {"lr_scale", [&](const json& v, const std::string& p) { o.lr_scale = as_double(v, p); }},
       {"grad_clip", [&](const json& v, const std::string& p) { o.grad_clip = as_double(v, p); }},
       {"select_by_cer", [&](const json& v, const std::string& p) { o.select_by_cer = as_bool(v, p); }},
       {"decode_max_len", [&](const json& v, const std::string& p) { o.decode_max_len = as_size(v, p); }},
       {"beta1", [&](const json& v, const std::string& p) { o.beta1 = as_double(v, p); }},
       {"beta2", [&](const json& v, const std::string& p) { o.beta2 = as_double(v, p); }},
       {"epsilon", [&](const json& v, const std::string& p) { o.epsilon = as_double(v, p); }},
       {"shuffle_seed", [&](const json& v, const std::string& p) { o.shuffle_seed = as_u64(v, p); }},
       {"spec_augment", [&](const json& v, const std::string&) { apply_spec_augment(v, o.spec_augment, "$.optim.spec_augment"); }}});
}

void apply_decode(const json& j, RunConfig& cfg) {
  DecodeOptions& d = cfg.decode;
  apply_object(j, "$.decode",
               {{"beam_width", [&](const json& v, const std::string& p) { d.beam_width = as_size(v, p); }},
                {"max_len", [&](const json& v, const std::string& p) { d.max_len = as_size(v, p); }},
                {"length_penalty", [&](const json& v, const std::string& p) { d.length_penalty = as_double(v, p); }}});
}

void apply_preset(RunConfig& cfg, const std::string& preset) {
  if (preset == "desk") return;  // struct defaults
  if (preset == "paper") {
    cfg.model.n_enc_layers = 12;
    cfg.model.n_dec_layers = 6;
    cfg.model.d_model = 256;
    cfg.model.d_ff = 2048;
    cfg.model.n_heads = 4;
    cfg.optim.warmup_steps = 25000;
    return;
  }
  throw ConfigError("$.preset: unknown preset '" + preset +
                    "' (expected desk or paper)");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (model.vocab_size != data.vocab_size) {
    throw ConfigError("$.model.vocab_size (" + std::to_string(model.vocab_size) +
                      ") must match $.data.vocab_size (" +
                      std::to_string(data.vocab_size) + ")");
  }
  if (model.feature_dim != data.feature_dim) {
    throw ConfigError("$.model.feature_dim must match $.data.feature_dim");
  }
  if (optim.max_steps == 0) throw ConfigError("$.optim.max_steps must be >= 1");
  if (optim.batch_size == 0) throw ConfigError("$.optim.batch_size must be >= 1");
  if (optim.eval_interval == 0) {
    throw ConfigError("$.optim.eval_interval must be >= 1");
  }
  if (decode.beam_width == 0) throw ConfigError("$.decode.beam_width must be >= 1");
  if (decode.max_len == 0) throw ConfigError("$.decode.max_len must be >= 1");
  if (data.min_len < 1 || data.max_len < data.min_len) {
    throw ConfigError("$.data: invalid length range");
  }
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["run_dir"] = cfg.run_dir.string();
  j["data"] = {{"dir", cfg.data_dir.string()},
               {"seed", cfg.data.seed},
               {"n_utterances", cfg.data.n_utterances},
               {"vocab_size", cfg.data.vocab_size},
               {"min_len", cfg.data.min_len},
               {"max_len", cfg.data.max_len},
               {"feature_dim", cfg.data.feature_dim},
               {"noise", cfg.data.noise}};
  j["model"] = {{"variant", to_string(cfg.model.variant)},
                {"n_enc_layers", cfg.model.n_enc_layers},
                {"n_dec_layers", cfg.model.n_dec_layers},
                {"d_model", cfg.model.d_model},
                {"d_ff", cfg.model.d_ff},
                {"n_heads", cfg.model.n_heads},
                {"vocab_size", cfg.model.vocab_size},
                {"feature_dim", cfg.model.feature_dim},
                {"lambda_ctc", cfg.model.lambda_ctc},
                {"ctc_placement", to_string(cfg.model.ctc_placement)},
                {"label_smoothing", cfg.model.label_smoothing},
                {"dropout", cfg.model.dropout},
                {"tie_embedding", cfg.model.tie_embedding},
                {"seed", cfg.model.seed}};
  j["optim"] = {{"max_steps", cfg.optim.max_steps},
                {"batch_size", cfg.optim.batch_size},
                {"eval_interval", cfg.optim.eval_interval},
                {"warmup_steps", cfg.optim.warmup_steps},
                {"lr_scale", cfg.optim.lr_scale},
                {"grad_clip", cfg.optim.grad_clip},
                {"select_by_cer", cfg.optim.select_by_cer},
                {"decode_max_len", cfg.optim.decode_max_len},
                {"beta1", cfg.optim.beta1},
                {"beta2", cfg.optim.beta2},
                {"epsilon", cfg.optim.epsilon},
                {"shuffle_seed", cfg.optim.shuffle_seed},
                {"spec_augment",
                 {{"n_time_masks", cfg.optim.spec_augment.n_time_masks},
                  {"n_freq_masks", cfg.optim.spec_augment.n_freq_masks},
                  {"max_time_width", cfg.optim.spec_augment.max_time_width},
                  {"max_freq_width", cfg.optim.spec_augment.max_freq_width}}}};
  j["decode"] = {{"beam_width", cfg.decode.beam_width},
                 {"max_len", cfg.decode.max_len},
                 {"length_penalty", cfg.decode.length_penalty}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (!j.is_object()) throw ConfigError("$: config must be a JSON object");
  if (j.contains("preset")) {
    cfg.preset = as_str(j.at("preset"), "$.preset");
  }
  apply_preset(cfg, cfg.preset);
  apply_object(j, "$",
               {{"preset", [](const json&, const std::string&) {}},
                {"run_dir", [&](const json& v, const std::string& p) { cfg.run_dir = as_str(v, p); }},
                {"data", [&](const json& v, const std::string&) { apply_data(v, cfg); }},
                {"model", [&](const json& v, const std::string&) { apply_model(v, cfg); }},
                {"optim", [&](const json& v, const std::string&) { apply_optim(v, cfg); }},
                {"decode", [&](const json& v, const std::string&) { apply_decode(v, cfg); }}});
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw DataError("config: cannot open " + file.string());
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config: parse error in " + file.string() + ": " +
                        e.what());
    }
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw UsageError("--set expects section.key=value, got '" + ov + "'");
    }
    const std::string path = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // plain string
    }
    json* cursor = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot - start);
      if (key.empty()) throw UsageError("--set: empty key in '" + ov + "'");
      if (dot == std::string::npos) {
        (*cursor)[key] = parsed;
        break;
      }
      cursor = &(*cursor)[key];
      start = dot + 1;
    }
  }
  RunConfig cfg = run_config_from_json(j);
  cfg.model = cfg.model.normalized();
  cfg.validate();
  return cfg;
}

}  // namespace smad
