#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "skipnet/checkpoint.hpp"
#include "skipnet/config.hpp"
#include "skipnet/dataset.hpp"
#include "skipnet/gradcheck.hpp"
#include "skipnet/metrics.hpp"
#include "skipnet/model.hpp"
#include "skipnet/parallel.hpp"
#include "skipnet/synthetic.hpp"
#include "skipnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace skipnet;

namespace {

int usage(std::ostream& os) {
  os << "usage: skipnet <command> [args] [--config PATH] [--key value]...\n"
        "\n"
        "commands:\n"
        "  train                        train on data.manifest, write\n"
        "                               checkpoint + metrics + summary to out\n"
        "  eval <checkpoint>            metrics for one split of data.manifest\n"
        "  predict <checkpoint> <image> class probabilities for one image\n"
        "  attention <checkpoint> <image>\n"
        "                               write sal_<i>.png attention maps to out\n"
        "  gradcheck                    finite-difference check of a reduced\n"
        "                               model; exit 1 on threshold breach\n"
        "  synth                        generate the synthetic dataset in out\n"
        "\n"
        "shorthand flags: --seed N, --out DIR, --threads N. Any config key\n"
        "can be overridden with --<key> <value>; see include/skipnet/\n"
        "config.hpp for the schema. Exit codes: 0 success, 1 failed check,\n"
        "2 usage/config/data error.\n";
  return 2;
}

struct Cli {
  std::string command;
  std::vector<std::string> positional;
  RunConfig config;
};

// Two passes: --config applies first so every other flag, whatever its
// position, overrides the file.
Cli parse_cli(int argc, char** argv) {
  Cli cli;
  if (argc < 2) throw UsageError("missing command");
  cli.command = argv[1];
  std::vector<std::pair<std::string, std::string>> overrides;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) {
      cli.positional.push_back(std::move(arg));
      continue;
    }
    std::string key = arg.substr(2);
    if (i + 1 >= argc) throw UsageError("flag --" + key + " needs a value");
    std::string value = argv[++i];
    if (key == "config") {
      load_config_file(cli.config, value);
    } else {
      overrides.emplace_back(std::move(key), std::move(value));
    }
  }
  for (const auto& [key, value] : overrides) {
    apply_config_value(cli.config, key, value, "--" + key);
  }
  return cli;
}

const char* class_display_name(std::size_t index, std::size_t num_classes) {
  if (num_classes == kLabelNames.size()) return kLabelNames[index];
  static std::string scratch;
  scratch = "class_" + std::to_string(index);
  return scratch.c_str();
}

void print_eval_block(std::ostream& os, const EvalStats& stats,
                      std::size_t num_classes) {
  os << "loss=" << std::fixed << std::setprecision(6) << stats.loss << '\n';
  os << "accuracy=" << stats.accuracy << '\n';
  const auto per_class = stats.confusion.per_class_accuracy();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    os << "accuracy_" << class_display_name(c, num_classes) << '='
       << per_class[c] << '\n';
  }
  for (std::size_t i = 0; i < num_classes; ++i) {
    for (std::size_t j = 0; j < num_classes; ++j) {
      os << "confusion_" << i << '_' << j << '=' << stats.confusion.at(i, j)
         << '\n';
    }
  }
}

LoadedDataset load_split_examples(const RunConfig& cfg,
                                  std::size_t input_size) {
  if (cfg.manifest.empty()) {
    throw ConfigError("data.manifest is required for this command");
  }
  DatasetManifest manifest = load_manifest(cfg.manifest);
  split_by_patient(manifest, cfg.train_fraction, cfg.val_fraction,
                   cfg.test_fraction, cfg.split_seed);
  return load_examples(manifest, input_size);
}

int cmd_train(const RunConfig& cfg) {
  auto data = load_split_examples(cfg, cfg.train.model.input_size);
  std::cerr << "train/val/test = " << data.train.size() << '/'
            << data.val.size() << '/' << data.test.size() << '\n';

  SkipNet<float> model(cfg.train.model, cfg.train.seed);
  Optimizer<float> optimizer(cfg.train.optimizer_config());
  TrainResult<float> result =
      train(model, optimizer, data.train, data.val, cfg.train, &std::cerr);

  restore_state(model, result.best_model_state);
  Optimizer<float> best_optimizer(cfg.train.optimizer_config());
  best_optimizer.set_step_count(result.best_optimizer_step);
  for (const auto& [key, tensor] : result.best_optimizer_state) {
    best_optimizer.restore_state(key, tensor);
  }

  fs::create_directories(cfg.out_dir);
  const std::string ckpt_path =
      (fs::path(cfg.out_dir) / "checkpoint.skpn").string();
  const std::string metrics_path =
      (fs::path(cfg.out_dir) / "metrics.csv").string();
  const std::string summary_path =
      (fs::path(cfg.out_dir) / "summary.txt").string();

  save_checkpoint(ckpt_path, model, best_optimizer);
  write_metrics_csv(metrics_path, result.history, result.best_confusion,
                    result.best_epoch);

  const EvalStats test = evaluate(model, data.test, cfg.train.batch_size);

  std::ostringstream summary;
  summary << "best_epoch=" << result.best_epoch << '\n';
  summary << "best_val_accuracy=" << std::fixed << std::setprecision(6)
          << result.best_val_accuracy << '\n';
  summary << "stopped_early=" << (result.stopped_early ? 1 : 0) << '\n';
  summary << "test_samples=" << data.test.size() << '\n';
  summary << "test_";  // the block below starts with loss=
  {
    std::ostringstream block;
    print_eval_block(block, test, cfg.train.model.num_classes);
    std::string text = block.str();
    // Prefix every metric line with test_ so keys are unambiguous.
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
      out += text[i];
      if (text[i] == '\n' && i + 1 < text.size()) out += "test_";
    }
    summary << out;
  }

  std::ofstream sf(summary_path, std::ios::binary);
  if (!sf) throw IoError("cannot write summary '" + summary_path + "'");
  sf << summary.str();
  sf.close();

  std::cout << "checkpoint=" << ckpt_path << '\n'
            << "metrics=" << metrics_path << '\n'
            << "summary=" << summary_path << '\n'
            << summary.str();
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::vector<std::string>& args) {
  if (args.size() != 1) throw UsageError("eval needs one checkpoint path");
  auto loaded = load_checkpoint<float>(args[0]);
  auto data = load_split_examples(cfg, loaded.config.input_size);
  const auto& examples = cfg.eval_split == "train"  ? data.train
                         : cfg.eval_split == "val" ? data.val
                                                    : data.test;
  if (examples.empty()) {
    throw UsageError("split '" + cfg.eval_split + "' is empty");
  }
  const EvalStats stats =
      evaluate(loaded.model, examples, cfg.train.batch_size);
  std::cout << "split=" << cfg.eval_split << '\n'
            << "samples=" << examples.size() << '\n';
  print_eval_block(std::cout, stats, loaded.config.num_classes);
  return 0;
}

int cmd_predict(const RunConfig&, const std::vector<std::string>& args) {
  if (args.size() != 2) {
    throw UsageError("predict needs a checkpoint path and an image path");
  }
  auto loaded = load_checkpoint<float>(args[0]);
  const Image image = read_image(args[1]);
  const Tensor<float> plane = preprocess(image, loaded.config.input_size);
  Tensor<float> batch({1, loaded.config.in_channels,
                       loaded.config.input_size, loaded.config.input_size});
  if (batch.size() != plane.size()) {
    throw ConfigError("predict supports single-channel models");
  }
  std::copy(plane.data(), plane.data() + plane.size(), batch.data());

  const Tensor<float> logits = loaded.model.logits(batch);
  const std::size_t k = loaded.config.num_classes;
  double max_logit = logits[0];
  for (std::size_t c = 1; c < k; ++c) {
    max_logit = std::max(max_logit, static_cast<double>(logits[c]));
  }
  std::vector<double> probs(k);
  double denom = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    probs[c] = std::exp(static_cast<double>(logits[c]) - max_logit);
    denom += probs[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 0; c < k; ++c) {
    probs[c] /= denom;
    if (probs[c] > probs[best]) best = c;
  }
  std::cout << "prediction=" << class_display_name(best, k) << '\n'
            << std::fixed << std::setprecision(9);
  for (std::size_t c = 0; c < k; ++c) {
    std::cout << "prob_" << class_display_name(c, k) << '=' << probs[c]
              << '\n';
  }
  return 0;
}

int cmd_attention(const RunConfig& cfg, const std::vector<std::string>& args) {
  if (args.size() != 2) {
    throw UsageError("attention needs a checkpoint path and an image path");
  }
  auto loaded = load_checkpoint<float>(args[0]);
  const Image image = read_image(args[1]);
  const Tensor<float> plane = preprocess(image, loaded.config.input_size);
  Tensor<float> batch({1, loaded.config.in_channels,
                       loaded.config.input_size, loaded.config.input_size});
  if (batch.size() != plane.size()) {
    throw ConfigError("attention supports single-channel models");
  }
  std::copy(plane.data(), plane.data() + plane.size(), batch.data());

  std::vector<Tensor<float>> maps;
  ForwardOptions<float> opts;
  opts.attention_maps = &maps;
  loaded.model.logits(batch, opts);

  fs::create_directories(cfg.out_dir);
  std::cout << "maps=" << maps.size() << '\n';
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Tensor<float>& map = maps[i];
    const std::size_t h = map.extent(map.rank() - 2);
    const std::size_t w = map.extent(map.rank() - 1);
    std::vector<std::uint8_t> pixels(h * w);
    for (std::size_t p = 0; p < pixels.size(); ++p) {
      // Round half up: attention values are in (0,1), so away-from-zero
      // rounding is half-up here (sigmoid(0) = 0.5 -> 128).
      pixels[p] = static_cast<std::uint8_t>(
          std::lround(static_cast<double>(map[p]) * 255.0));
    }
    const std::string path =
        (fs::path(cfg.out_dir) / ("sal_" + std::to_string(i) + ".png"))
            .string();
    write_png(path, pixels, w, h);
    std::cout << "sal_" << i << '=' << path << '\n';
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  ModelConfig reduced;
  reduced.input_size = 32;
  const std::vector<std::size_t> plan = {4, 8, 16, 32};
  reduced.channels.assign(plan.begin(), plan.begin() + cfg.gradcheck_blocks);
  reduced.classifier_hidden = 32;
  SkipNet<double> model(reduced, cfg.train.seed);

  Rng rng = Rng(cfg.train.seed).fork(777);
  Tensor<double> input({2, 1, reduced.input_size, reduced.input_size});
  for (auto& v : input) v = rng.uniform(0.0, 1.0);
  std::vector<std::size_t> labels = {rng.uniform_int(3), rng.uniform_int(3)};

  GradCheckOptions opts;
  opts.step = cfg.gradcheck_step;
  opts.threshold = cfg.gradcheck_threshold;
  opts.corrupt_backward = cfg.gradcheck_corrupt;
  const GradCheckReport report = gradcheck(model, input, labels, opts);

  std::cout << std::scientific << std::setprecision(3);
  for (const auto& entry : report.entries) {
    std::cout << entry.name << '=' << entry.max_rel_err;
    if (entry.unmeasurable > 0) {
      std::cout << " unmeasurable=" << entry.unmeasurable;
    }
    std::cout << '\n';
  }
  std::cout << "step=" << report.step << '\n'
            << "max_rel_err=" << report.max_rel_err << '\n'
            << "threshold=" << report.threshold << '\n'
            << "passed=" << (report.passed ? 1 : 0) << '\n';
  return report.passed ? 0 : 1;
}

int cmd_synth(const RunConfig& cfg) {
  SyntheticOptions options;
  options.n_per_class = cfg.synth_n_per_class;
  options.size = cfg.synth_size;
  options.seed = cfg.train.seed;
  const std::string manifest = generate_synthetic(cfg.out_dir, options);
  std::cout << "manifest=" << manifest << '\n'
            << "samples=" << options.n_per_class * 3 << '\n';
  return 0;
}

int dispatch(int argc, char** argv) {
  Cli cli = parse_cli(argc, argv);
  // Validate the whole configuration before any command runs: an invalid
  // config must cause zero filesystem writes.
  cli.config.validate();
  set_num_threads(cli.config.threads);

  if (cli.command == "train") return cmd_train(cli.config);
  if (cli.command == "eval") return cmd_eval(cli.config, cli.positional);
  if (cli.command == "predict") {
    return cmd_predict(cli.config, cli.positional);
  }
  if (cli.command == "attention") {
    return cmd_attention(cli.config, cli.positional);
  }
  if (cli.command == "gradcheck") return cmd_gradcheck(cli.config);
  if (cli.command == "synth") return cmd_synth(cli.config);
  if (cli.command == "help" || cli.command == "--help" ||
      cli.command == "-h") {
    usage(std::cout);
    return 0;
  }
  throw UsageError("unknown command '" + cli.command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;  // a failed run, not a usage problem
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    return usage(std::cerr);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
