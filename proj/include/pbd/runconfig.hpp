#pragma once

#include <string>

#include "json.hpp"
#include "pbd/model.hpp"

namespace pbd {

// Flat JSON run description shared by the train/eval subcommands. Unknown
// keys are rejected so typos fail loudly instead of silently using defaults.
struct RunConfig {
  std::string train_tsv;
  std::string eval_tsv;
  std::string alphabet;  // empty: derive the vocabulary from the training data

  ModelConfig model;  // vocab_size is filled in from the alphabet at run time

  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  std::size_t warmup = 400;
  double clip_norm = 0.0;
  double label_smoothing = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  std::uint64_t data_seed = 1;
  std::uint64_t init_seed = 1;
  std::string precision = "f32";  // or "f64"

  std::string checkpoint_path;
  std::size_t checkpoint_interval = 0;  // 0: write only the final checkpoint
  std::string log_path;                 // step TSV log; empty logs to stdout

  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::string& path);

}  // namespace pbd
