#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skipnet/trainer.hpp"

namespace skipnet {

// Everything a CLI run can configure, gathered from a flat key=value file
// plus `--key value` overrides. Schema (defaults in parentheses):
//
//   model.input_size        (128)   square input extent
//   model.in_channels       (1)
//   model.channels          (16,32,64,128)  comma list, one width per block
//   model.sal_ratio         (4)
//   model.sal_dilation      (2)
//   model.dropout_rate      (0.25)
//   model.classifier_hidden (128)
//   model.num_classes       (3)
//   train.epochs            (32)
//   train.batch_size        (32)
//   train.learning_rate     (0.001)
//   train.optimizer         (adam)  adam | sgd
//   train.momentum          (0.0)   sgd only
//   train.patience          (15)    epochs without val improvement; 0 = off
//   data.manifest           ("")    path,label,patient_id CSV
//   data.train_fraction     (0.70)
//   data.val_fraction       (0.15)
//   data.test_fraction      (0.15)
//   data.split_seed         (42)    patient-shuffle seed for the split
//   eval.split              (test)  train | val | test
//   synth.n_per_class       (200)
//   synth.size              (128)
//   gradcheck.blocks        (2)     reduced model depth, 1-4
//   gradcheck.step          (1e-5)  central-difference perturbation
//   gradcheck.threshold     (1e-4)
//   gradcheck.corrupt       (false) test fixture: break one gradient
//   seed                    (42)    weight init, batch order, dropout, synth
//   out                     (out)   output directory
//   threads                 (1)
//
// Unknown keys are rejected. Values never contain '='; '#' starts a comment.
struct RunConfig {
  TrainConfig train;  // model hyperparameters live in train.model

  std::string manifest;
  double train_fraction = 0.70;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t split_seed = 42;

  std::string eval_split = "test";

  std::size_t synth_n_per_class = 200;
  std::size_t synth_size = 128;

  std::size_t gradcheck_blocks = 2;
  double gradcheck_step = 1e-5;
  double gradcheck_threshold = 1e-4;
  bool gradcheck_corrupt = false;

  std::string out_dir = "out";
  std::size_t threads = 1;

  void validate() const;
};

// Lists every key the schema accepts, in documentation order.
std::vector<std::string> config_keys();

// Sets one key on the config. Unknown key or unparsable value throws
// ConfigError; `context` (e.g. "line 7" or "--train.epochs") names the
// source in the message.
void apply_config_value(RunConfig& config, const std::string& key,
                        const std::string& value, const std::string& context);

// Parses a key=value file into `config` (later keys win). Throws ConfigError
// with the offending line number; IoError if the file cannot be read.
void load_config_file(RunConfig& config, const std::string& path);

}  // namespace skipnet
