#include "pbd/runconfig.hpp"

#include <fstream>
#include <set>

namespace pbd {

void RunConfig::validate() const {
  if (precision != "f32" && precision != "f64")
    throw config_error("precision must be \"f32\" or \"f64\", got \"" + precision + "\"");
  if (steps == 0) throw config_error("steps must be positive");
  if (batch_size == 0) throw config_error("batch_size must be positive");
  if (warmup == 0) throw config_error("warmup must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw config_error("label_smoothing must lie in [0,1)");
  if (clip_norm < 0.0) throw config_error("clip_norm must be non-negative");
  for (double b : {beta1, beta2})
    if (b < 0.0 || b >= 1.0) throw config_error("adam betas must lie in [0,1)");
  if (adam_eps <= 0.0) throw config_error("adam_eps must be positive");
  // Model shape checks run later, once vocab_size is known.
  if (model.d_model == 0 || model.n_heads == 0 || model.d_model % model.n_heads != 0)
    throw config_error("d_model " + std::to_string(model.d_model) + " not divisible by n_heads " +
                       std::to_string(model.n_heads));
  if (model.dropout_rate < 0.0 || model.dropout_rate >= 1.0)
    throw config_error("dropout must lie in [0,1)");
}

RunConfig run_config_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw config_error("run config must be a JSON object");
  static const std::set<std::string> known = {
      "train_tsv", "eval_tsv", "alphabet", "d_model", "n_heads", "n_layers", "d_ff", "max_len",
      "dropout", "use_pbd", "use_segment", "share_params", "tie_output_embedding",
      "learned_positions", "gelu_ff", "copy_from_layer_output", "segment_per_layer", "steps",
      "batch_size", "warmup", "clip_norm", "label_smoothing", "beta1", "beta2", "adam_eps",
      "data_seed", "init_seed", "precision", "checkpoint_path", "checkpoint_interval", "log_path"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw config_error("unknown config key '" + key + "'");

  RunConfig c;
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("train_tsv", c.train_tsv);
    get("eval_tsv", c.eval_tsv);
    get("alphabet", c.alphabet);
    get("d_model", c.model.d_model);
    get("n_heads", c.model.n_heads);
    get("n_layers", c.model.n_layers);
    get("d_ff", c.model.d_ff);
    get("max_len", c.model.max_len);
    get("dropout", c.model.dropout_rate);
    get("use_pbd", c.model.use_pbd);
    get("use_segment", c.model.use_segment);
    get("share_params", c.model.share_params);
    get("tie_output_embedding", c.model.tie_output_embedding);
    get("learned_positions", c.model.learned_positions);
    get("gelu_ff", c.model.gelu_ff);
    get("copy_from_layer_output", c.model.copy_from_layer_output);
    get("segment_per_layer", c.model.segment_per_layer);
    get("steps", c.steps);
    get("batch_size", c.batch_size);
    get("warmup", c.warmup);
    get("clip_norm", c.clip_norm);
    get("label_smoothing", c.label_smoothing);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("data_seed", c.data_seed);
    get("init_seed", c.init_seed);
    get("precision", c.precision);
    get("checkpoint_path", c.checkpoint_path);
    get("checkpoint_interval", c.checkpoint_interval);
    get("log_path", c.log_path);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["train_tsv"] = c.train_tsv;
  j["eval_tsv"] = c.eval_tsv;
  j["alphabet"] = c.alphabet;
  j["d_model"] = c.model.d_model;
  j["n_heads"] = c.model.n_heads;
  j["n_layers"] = c.model.n_layers;
  j["d_ff"] = c.model.d_ff;
  j["max_len"] = c.model.max_len;
  j["dropout"] = c.model.dropout_rate;
  j["use_pbd"] = c.model.use_pbd;
  j["use_segment"] = c.model.use_segment;
  j["share_params"] = c.model.share_params;
  j["tie_output_embedding"] = c.model.tie_output_embedding;
  j["learned_positions"] = c.model.learned_positions;
  j["gelu_ff"] = c.model.gelu_ff;
  j["copy_from_layer_output"] = c.model.copy_from_layer_output;
  j["segment_per_layer"] = c.model.segment_per_layer;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["warmup"] = c.warmup;
  j["clip_norm"] = c.clip_norm;
  j["label_smoothing"] = c.label_smoothing;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["data_seed"] = c.data_seed;
  j["init_seed"] = c.init_seed;
  j["precision"] = c.precision;
  j["checkpoint_path"] = c.checkpoint_path;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["log_path"] = c.log_path;
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace pbd
