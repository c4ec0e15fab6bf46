#include "skipnet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "skipnet/error.hpp"

namespace skipnet {

namespace {

[[noreturn]] void bad(const std::string& context, const std::string& why) {
  throw ConfigError(context + ": " + why);
}

std::uint64_t parse_u64(const std::string& v, const std::string& ctx) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    bad(ctx, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& v, const std::string& ctx) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    bad(ctx, "expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& ctx) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(ctx, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_channels(const std::string& v,
                                        const std::string& ctx) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_u64(item, ctx));
  }
  if (out.empty()) bad(ctx, "expected a comma-separated list of widths");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& value,
                                  const std::string& ctx)>;

const std::vector<std::pair<std::string, Setter>>& schema() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"model.input_size",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.model.input_size = parse_u64(v, x);
       }},
      {"model.in_channels",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.model.in_channels = parse_u64(v, x);
       }},
      {"model.channels",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.model.channels = parse_channels(v, x);
       }},
      {"model.sal_ratio",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.model.sal_ratio = parse_u64(v, x);
       }},
      {"model.sal_dilation",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.model.sal_dilation = parse_u64(v, x);
       }},
      {"model.dropout_rate",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.model.dropout_rate = parse_double(v, x);
       }},
      {"model.classifier_hidden",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.model.classifier_hidden = parse_u64(v, x);
       }},
      {"model.num_classes",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.model.num_classes = parse_u64(v, x);
       }},
      {"train.epochs",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.epochs = parse_u64(v, x);
       }},
      {"train.batch_size",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.batch_size = parse_u64(v, x);
       }},
      {"train.learning_rate",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.learning_rate = parse_double(v, x);
       }},
      {"train.optimizer",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         try {
           c.train.optimizer = parse_optimizer_kind(v);
         } catch (const ConfigError& e) {
           bad(x, e.what());
         }
       }},
      {"train.momentum",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.momentum = parse_double(v, x);
       }},
      {"train.patience",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.patience = parse_u64(v, x);
       }},
      {"data.manifest",
       [](RunConfig& c, const std::string& v, const std::string&) {
         c.manifest = v;
       }},
      {"data.train_fraction",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train_fraction = parse_double(v, x);
       }},
      {"data.val_fraction",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.val_fraction = parse_double(v, x);
       }},
      {"data.test_fraction",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.test_fraction = parse_double(v, x);
       }},
      {"data.split_seed",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.split_seed = parse_u64(v, x);
       }},
      {"eval.split",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         if (v != "train" && v != "val" && v != "test") {
           bad(x, "eval.split must be train, val, or test");
         }
         c.eval_split = v;
       }},
      {"synth.n_per_class",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.synth_n_per_class = parse_u64(v, x);
       }},
      {"synth.size",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.synth_size = parse_u64(v, x);
       }},
      {"gradcheck.blocks",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.gradcheck_blocks = parse_u64(v, x);
       }},
      {"gradcheck.step",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.gradcheck_step = parse_double(v, x);
       }},
      {"gradcheck.threshold",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.gradcheck_threshold = parse_double(v, x);
       }},
      {"gradcheck.corrupt",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.gradcheck_corrupt = parse_bool(v, x);
       }},
      {"seed",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.train.seed = parse_u64(v, x);
       }},
      {"out",
       [](RunConfig& c, const std::string& v, const std::string&) {
         c.out_dir = v;
       }},
      {"threads",
       [](RunConfig& c, const std::string& v, const std::string& x) {
         c.threads = parse_u64(v, x);
       }},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, setter] : schema()) keys.push_back(key);
  return keys;
}

void apply_config_value(RunConfig& config, const std::string& key,
                        const std::string& value, const std::string& context) {
  for (const auto& [name, setter] : schema()) {
    if (name == key) {
      setter(config, value, context);
      return;
    }
  }
  bad(context, "unknown key '" + key + "'");
}

void load_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string context =
        "config '" + path + "' line " + std::to_string(line_no);
    if (eq == std::string::npos) {
      bad(context, "expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) bad(context, "empty key");
    apply_config_value(config, key, value, context);
  }
}

void RunConfig::validate() const {
  train.validate();
  const double sum = train_fraction + val_fraction + test_fraction;
  if (!(train_fraction > 0.0) || !(val_fraction > 0.0) ||
      !(test_fraction > 0.0) || std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be positive and sum to 1");
  }
  if (eval_split != "train" && eval_split != "val" && eval_split != "test") {
    throw ConfigError("eval.split must be train, val, or test");
  }
  if (synth_n_per_class == 0) {
    throw ConfigError("synth.n_per_class must be at least 1");
  }
  if (synth_size < 8) throw ConfigError("synth.size must be at least 8");
  if (gradcheck_blocks < 1 || gradcheck_blocks > 4) {
    throw ConfigError("gradcheck.blocks must lie in 1..4");
  }
  if (!(gradcheck_step > 0.0)) {
    throw ConfigError("gradcheck.step must be positive");
  }
  if (!(gradcheck_threshold > 0.0)) {
    throw ConfigError("gradcheck.threshold must be positive");
  }
  if (out_dir.empty()) throw ConfigError("out must name a directory");
  if (threads == 0) throw ConfigError("threads must be at least 1");
}

}  // namespace skipnet
