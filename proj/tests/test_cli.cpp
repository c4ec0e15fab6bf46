// End-to-end exercises of the skipnet binary: every command, the exit-code
// contract (0 ok / 1 failed check / 2 usage error), and cross-run
// determinism of the artifacts it writes. Each invocation is a real
// subprocess of the installed binary, not a library call.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "skipnet/image.hpp"

#ifndef SKIPNET_CLI_PATH
#error "SKIPNET_CLI_PATH must name the skipnet binary"
#endif

namespace fs = std::filesystem;

namespace {

const fs::path kScratch = fs::temp_directory_path() / "skipnet_cli_tests";

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out = kScratch / ("cmd_" + std::to_string(counter) + ".out");
  const fs::path err = kScratch / ("cmd_" + std::to_string(counter) + ".err");
  ++counter;
  const std::string cmd = std::string(SKIPNET_CLI_PATH) + " " + args + " > " +
                          out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// key=value lines from a command's stdout (first '=' splits; later lines
// with a repeated key win, which no command currently produces).
std::map<std::string, std::string> kv(const std::string& text) {
  std::map<std::string, std::string> m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

// Metrics CSV with the wall-clock column removed: the one field that may
// legitimately differ between identical runs.
std::string strip_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') {
      const auto comma = line.rfind(',');
      if (comma != std::string::npos) line.erase(comma);
    }
    out += line;
    out += '\n';
  }
  return out;
}

// One tiny dataset plus one trained run, built once and shared: 48 images
// (16 per class, 4 slices per patient) at 32x32, and a two-epoch train of a
// two-block model over them.
struct Env {
  fs::path data_dir;
  fs::path manifest;
  fs::path image;  // first image listed in the manifest
  fs::path run1;
  CmdResult synth;
  CmdResult train1;
  std::string train_flags;
};

const Env& env() {
  static const Env e = [] {
    Env v;
    fs::remove_all(kScratch);
    fs::create_directories(kScratch);
    v.data_dir = kScratch / "data";
    v.synth = run_cli("synth --out " + v.data_dir.string() +
                      " --synth.n_per_class 16 --synth.size 32 --seed 5");
    v.manifest = v.data_dir / "manifest.csv";
    std::ifstream mf(v.manifest);
    std::string header, first;
    std::getline(mf, header);
    std::getline(mf, first);
    v.image = v.data_dir / first.substr(0, first.find(','));
    v.train_flags = "--data.manifest " + v.manifest.string() +
                    " --model.input_size 32 --model.channels 4,8"
                    " --model.classifier_hidden 16 --train.epochs 2"
                    " --train.batch_size 4 --seed 7";
    v.run1 = kScratch / "run1";
    v.train1 =
        run_cli("train " + v.train_flags + " --out " + v.run1.string());
    return v;
  }();
  return e;
}

std::size_t csv_epoch_rows(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') ++rows;
  }
  return rows;
}

}  // namespace

TEST_CASE("synth generates a loadable dataset") {
  const Env& e = env();
  CHECK(e.synth.exit_code == 0);
  auto out = kv(e.synth.out);
  CHECK(out.at("manifest") == e.manifest.string());
  CHECK(out.at("samples") == "48");
  REQUIRE(fs::exists(e.manifest));
  REQUIRE(fs::exists(e.image));
  std::size_t pngs = 0;
  for (const auto& entry : fs::directory_iterator(e.data_dir / "images")) {
    pngs += entry.path().extension() == ".png";
  }
  CHECK(pngs == 48);
}

TEST_CASE("train writes checkpoint, metrics, and summary") {
  const Env& e = env();
  REQUIRE(e.train1.exit_code == 0);
  auto out = kv(e.train1.out);
  CHECK(fs::exists(out.at("checkpoint")));
  CHECK(fs::exists(out.at("metrics")));
  CHECK(fs::exists(out.at("summary")));
  CHECK(out.count("best_epoch") == 1);
  CHECK(out.count("test_accuracy") == 1);
  CHECK(out.count("test_loss") == 1);
  // Progress goes to stderr, results to stdout.
  CHECK(e.train1.err.find("epoch 2/2") != std::string::npos);
  CHECK(e.train1.out.find("epoch 2/2") == std::string::npos);

  const std::string csv = slurp(e.run1 / "metrics.csv");
  CHECK(csv.rfind("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n",
                  0) == 0);
  CHECK(csv_epoch_rows(csv) == 2);
  CHECK(csv.find("# per_class_accuracy=") != std::string::npos);

  const double acc = std::stod(out.at("test_accuracy"));
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("identical seeds reproduce artifacts byte for byte") {
  const Env& e = env();
  REQUIRE(e.train1.exit_code == 0);
  const fs::path run2 = kScratch / "run2";
  auto again = run_cli("train " + e.train_flags + " --out " + run2.string());
  REQUIRE(again.exit_code == 0);
  CHECK(slurp(run2 / "checkpoint.skpn") ==
        slurp(e.run1 / "checkpoint.skpn"));
  CHECK(strip_seconds(slurp(run2 / "metrics.csv")) ==
        strip_seconds(slurp(e.run1 / "metrics.csv")));
  CHECK(slurp(run2 / "summary.txt") == slurp(e.run1 / "summary.txt"));
}

TEST_CASE("eval reports metrics for the chosen split") {
  const Env& e = env();
  REQUIRE(e.train1.exit_code == 0);
  const std::string ckpt = (e.run1 / "checkpoint.skpn").string();
  const std::string data = " --data.manifest " + e.manifest.string();

  auto test_eval = run_cli("eval " + ckpt + data);
  REQUIRE(test_eval.exit_code == 0);
  auto out = kv(test_eval.out);
  CHECK(out.at("split") == "test");
  const std::size_t samples = std::stoul(out.at("samples"));
  CHECK(samples > 0);
  const double acc = std::stod(out.at("accuracy"));
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  std::size_t confusion_total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      confusion_total += std::stoul(out.at(
          "confusion_" + std::to_string(i) + "_" + std::to_string(j)));
    }
  }
  CHECK(confusion_total == samples);

  auto val_eval = run_cli("eval " + ckpt + data + " --eval.split val");
  REQUIRE(val_eval.exit_code == 0);
  CHECK(kv(val_eval.out).at("split") == "val");
}

TEST_CASE("predict emits a normalized distribution, repeatably") {
  const Env& e = env();
  REQUIRE(e.train1.exit_code == 0);
  const std::string ckpt = (e.run1 / "checkpoint.skpn").string();
  auto first = run_cli("predict " + ckpt + " " + e.image.string());
  REQUIRE(first.exit_code == 0);
  auto out = kv(first.out);
  double total = 0.0;
  std::size_t prob_lines = 0;
  for (const auto& [key, value] : out) {
    if (key.rfind("prob_", 0) == 0) {
      const double p = std::stod(value);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      total += p;
      ++prob_lines;
    }
  }
  CHECK(prob_lines == 3);
  CHECK(std::abs(total - 1.0) < 1e-6);
  CHECK(out.count("prob_" + out.at("prediction")) == 1);

  auto second = run_cli("predict " + ckpt + " " + e.image.string());
  CHECK(second.exit_code == 0);
  CHECK(second.out == first.out);
}

TEST_CASE("attention writes one decodable map per gate") {
  const Env& e = env();
  REQUIRE(e.train1.exit_code == 0);
  const fs::path maps_dir = kScratch / "maps";
  auto r = run_cli("attention " + (e.run1 / "checkpoint.skpn").string() +
                   " " + e.image.string() + " --out " + maps_dir.string());
  REQUIRE(r.exit_code == 0);
  auto out = kv(r.out);
  // Two block gates plus the gate ahead of the classifier.
  REQUIRE(out.at("maps") == "3");
  // Block gates see the pre-pool resolution; the final gate sits past the
  // blocks' pooling and the stride-2 downsample conv.
  const std::size_t expected_size[] = {32, 16, 4};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string path = out.at("sal_" + std::to_string(i));
    REQUIRE(fs::exists(path));
    const skipnet::Image png = skipnet::read_image(path);
    CHECK(png.width == expected_size[i]);
    CHECK(png.height == expected_size[i]);
    CHECK(png.max_value == 255);
  }
}

TEST_CASE("gradcheck passes by default and honors its knobs") {
  auto ok = run_cli("gradcheck");
  CHECK(ok.exit_code == 0);
  auto out = kv(ok.out);
  CHECK(out.at("passed") == "1");
  CHECK(out.at("step") == "1.000e-05");
  CHECK(std::stod(out.at("max_rel_err")) < 1e-4);

  // The shallowest model leans hardest on the scaled-down classifier init;
  // it must pass too, not just the default depth.
  auto shallow = run_cli("gradcheck --gradcheck.blocks 1");
  CHECK(shallow.exit_code == 0);

  auto corrupt = run_cli("gradcheck --gradcheck.corrupt true");
  CHECK(corrupt.exit_code == 1);
  CHECK(kv(corrupt.out).at("passed") == "0");

  auto strict = run_cli("gradcheck --gradcheck.threshold 1e-12");
  CHECK(strict.exit_code == 1);
}

TEST_CASE("config file applies beneath command-line flags") {
  const Env& e = env();
  REQUIRE(e.train1.exit_code == 0);
  const fs::path cfg_path = kScratch / "run.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "# tiny run\n"
        << "data.manifest = " << e.manifest.string() << "\n"
        << "model.input_size = 32\n"
        << "model.channels = 4,8\n"
        << "model.classifier_hidden = 16\n"
        << "train.epochs = 1\n"
        << "train.batch_size = 4\n"
        << "seed = 7\n";
  }
  const fs::path run_cfg = kScratch / "run_cfg";
  auto from_file = run_cli("train --config " + cfg_path.string() + " --out " +
                           run_cfg.string());
  REQUIRE(from_file.exit_code == 0);
  CHECK(csv_epoch_rows(slurp(run_cfg / "metrics.csv")) == 1);

  // A flag overrides the file no matter where it sits on the line.
  const fs::path run_flag = kScratch / "run_flag";
  auto overridden =
      run_cli("train --train.epochs 2 --config " + cfg_path.string() +
              " --out " + run_flag.string());
  REQUIRE(overridden.exit_code == 0);
  CHECK(csv_epoch_rows(slurp(run_flag / "metrics.csv")) == 2);
}

TEST_CASE("usage, config, and data errors exit 2 without writing") {
  const Env& e = env();
  const std::string ckpt = (e.run1 / "checkpoint.skpn").string();

  auto no_command = run_cli("");
  CHECK(no_command.exit_code == 2);

  auto unknown_command = run_cli("frobnicate");
  CHECK(unknown_command.exit_code == 2);
  CHECK(unknown_command.err.find("frobnicate") != std::string::npos);

  auto unknown_key = run_cli("gradcheck --no.such.key 1");
  CHECK(unknown_key.exit_code == 2);
  CHECK(unknown_key.err.find("no.such.key") != std::string::npos);

  auto bad_value = run_cli("gradcheck --train.epochs many");
  CHECK(bad_value.exit_code == 2);

  auto dangling_flag = run_cli("gradcheck --seed");
  CHECK(dangling_flag.exit_code == 2);

  const fs::path never = kScratch / "never";
  auto no_manifest = run_cli("train --out " + never.string());
  CHECK(no_manifest.exit_code == 2);
  CHECK_FALSE(fs::exists(never));

  auto missing_ckpt =
      run_cli("eval " + (kScratch / "nope.skpn").string() +
              " --data.manifest " + e.manifest.string());
  CHECK(missing_ckpt.exit_code == 2);

  const fs::path junk = kScratch / "junk.skpn";
  { std::ofstream(junk) << "this is not a checkpoint"; }
  auto bad_ckpt = run_cli("eval " + junk.string() + " --data.manifest " +
                          e.manifest.string());
  CHECK(bad_ckpt.exit_code == 2);

  auto missing_image =
      run_cli("predict " + ckpt + " " + (kScratch / "no.png").string());
  CHECK(missing_image.exit_code == 2);

  const fs::path bad_cfg = kScratch / "bad.cfg";
  { std::ofstream(bad_cfg) << "train.epochs\n"; }
  auto cfg_err = run_cli("gradcheck --config " + bad_cfg.string());
  CHECK(cfg_err.exit_code == 2);
  CHECK(cfg_err.err.find("line 1") != std::string::npos);
}

TEST_CASE("help exits zero") {
  auto r = run_cli("help");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("usage:") != std::string::npos);
}
