// End-to-end checks that shell out to the built CLI binary. The binary path is
// injected by the build as PBD_CLI_PATH.
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pbd/data.hpp"

using namespace pbd;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr, merged
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(PBD_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

const std::string& work_dir() {
  static const std::string dir = [] {
    std::string d = (std::filesystem::temp_directory_path() /
                     ("pbd_cli_test_" + std::to_string(::getpid())))
                        .string();
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("cli: mask dumps") {
  CliResult r = run_cli("mask --source-len 4 --target-len 3");
  CHECK(r.exit_code == 0);
  CHECK(r.output ==
        "0 1 1 1 | 1 0 0\n"
        "0 0 1 1 | 1 1 0\n"
        "0 0 0 1 | 1 1 1\n");

  r = run_cli("mask --mode causal --target-len 3");
  CHECK(r.exit_code == 0);
  CHECK(r.output ==
        "1 0 0\n"
        "1 1 0\n"
        "1 1 1\n");

  r = run_cli("mask --mode sideways");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "error: config:"));
}

TEST_CASE("cli: help and bad invocations") {
  CliResult r = run_cli("--help");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "train"));
  CHECK(contains(r.output, "synth"));
  CHECK(contains(r.output, "mask"));

  r = run_cli("");  // a subcommand is required
  CHECK(r.exit_code == 2);

  r = run_cli("frobnicate");
  CHECK(r.exit_code == 2);

  r = run_cli("train");  // missing required --config
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli: synth writes deterministic corpora") {
  const std::string d1 = work_dir() + "/synth_a";
  const std::string d2 = work_dir() + "/synth_b";
  const std::string d3 = work_dir() + "/synth_c";

  CliResult r = run_cli("synth --out " + d1 + " --train 200 --eval 50 --seed 9");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "wrote 200 pairs to " + d1 + "/train.tsv"));
  CHECK(contains(r.output, "wrote 50 pairs to " + d1 + "/eval.tsv"));

  CHECK(run_cli("synth --out " + d2 + " --train 200 --eval 50 --seed 9").exit_code == 0);
  CHECK(run_cli("synth --out " + d3 + " --train 200 --eval 50 --seed 10").exit_code == 0);

  CHECK(read_file(d1 + "/train.tsv") == read_file(d2 + "/train.tsv"));
  CHECK(read_file(d1 + "/eval.tsv") == read_file(d2 + "/eval.tsv"));
  CHECK(read_file(d1 + "/train.tsv") != read_file(d3 + "/train.tsv"));

  const std::vector<Example> examples = load_tsv(d1 + "/train.tsv");
  REQUIRE(examples.size() == 200);
  std::size_t changed = 0;
  for (const Example& ex : examples) {
    CHECK(!ex.source.empty());
    CHECK(!ex.target.empty());
    if (ex.source != ex.target) ++changed;
  }
  // Σp = 0.15 per character corrupts most words at least once.
  CHECK(changed > 80);

  // Zero probabilities leave every pair an identity mapping.
  const std::string d4 = work_dir() + "/synth_id";
  r = run_cli("synth --out " + d4 +
              " --train 64 --eval 16 --seed 3 --p-sub 0 --p-del 0 --p-ins 0 --p-swap 0");
  CHECK(r.exit_code == 0);
  for (const Example& ex : load_tsv(d4 + "/train.tsv")) CHECK(ex.source == ex.target);
}

TEST_CASE("cli: train, eval, decode, resume round trip") {
  const std::string dir = work_dir();
  const std::string data_dir = dir + "/synth_id";  // written by the synth case above
  if (!std::filesystem::exists(data_dir + "/train.tsv")) {
    REQUIRE(run_cli("synth --out " + data_dir +
                    " --train 64 --eval 16 --seed 3 --p-sub 0 --p-del 0 --p-ins 0 --p-swap 0")
                .exit_code == 0);
  }
  const std::string ckpt = dir + "/tiny.ckpt";
  const std::string log = dir + "/tiny.log";

  auto write_config = [&](const std::string& path, std::size_t steps) {
    std::ofstream out(path);
    out << "{\n"
        << "  \"train_tsv\": \"" << data_dir << "/train.tsv\",\n"
        << "  \"alphabet\": \"abcdefghijklmnopqrstuvwxyz\",\n"
        << "  \"d_model\": 16, \"n_heads\": 2, \"n_layers\": 1, \"d_ff\": 32, \"max_len\": 16,\n"
        << "  \"dropout\": 0.0, \"steps\": " << steps << ", \"batch_size\": 4, \"warmup\": 4,\n"
        << "  \"precision\": \"f64\",\n"
        << "  \"checkpoint_path\": \"" << ckpt << "\", \"log_path\": \"" << log << "\"\n"
        << "}\n";
  };
  const std::string cfg6 = dir + "/tiny6.json";
  write_config(cfg6, 6);

  CliResult r = run_cli("train --config " + cfg6);
  CHECK(r.exit_code == 0);
  REQUIRE(std::filesystem::exists(ckpt));
  std::vector<std::string> log_lines = lines_of(read_file(log));
  REQUIRE(log_lines.size() == 6);
  for (std::size_t i = 0; i < log_lines.size(); ++i) {
    // step<TAB>loss<TAB>lr
    std::istringstream in(log_lines[i]);
    std::size_t step = 0;
    double loss = 0.0, lr = 0.0;
    REQUIRE((in >> step >> loss >> lr));
    CHECK(step == i + 1);
    CHECK(loss > 0.0);
    CHECK(lr > 0.0);
  }

  // eval reports the three metric lines
  r = run_cli("eval --ckpt " + ckpt + " --data " + data_dir + "/eval.tsv --limit 8");
  CHECK(r.exit_code == 0);
  std::vector<std::string> metric_lines = lines_of(r.output);
  REQUIRE(metric_lines.size() == 3);
  CHECK(metric_lines[0] == "examples\t8");
  CHECK(metric_lines[1].rfind("exact_match\t0.", 0) == 0);
  CHECK(metric_lines[2].rfind("char_error_rate\t", 0) == 0);

  // decode emits one line per input, skipping blank input lines
  r = run_cli("decode --ckpt " + ckpt + " --input hello");
  CHECK(r.exit_code == 0);
  CHECK(lines_of(r.output).size() == 1);

  const std::string input_file = dir + "/inputs.txt";
  {
    std::ofstream out(input_file);
    out << "abc\n\ndef\n";
  }
  r = run_cli("decode --ckpt " + ckpt + " --input-file " + input_file);
  CHECK(r.exit_code == 0);
  CHECK(lines_of(r.output).size() == 2);

  r = run_cli("decode --ckpt " + ckpt);
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "decode needs --input or --input-file"));

  // resume continues the log and the step counter
  const std::string cfg10 = dir + "/tiny10.json";
  write_config(cfg10, 10);
  r = run_cli("train --config " + cfg10 + " --resume");
  CHECK(r.exit_code == 0);
  log_lines = lines_of(read_file(log));
  REQUIRE(log_lines.size() == 10);
  CHECK(log_lines[6].rfind("7\t", 0) == 0);
  CHECK(log_lines[9].rfind("10\t", 0) == 0);
}

TEST_CASE("cli: error reporting and exit codes") {
  const std::string dir = work_dir();

  CliResult r = run_cli("eval --ckpt " + dir + "/no_such.ckpt --data " + dir + "/no_such.tsv");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "error: data:"));

  r = run_cli("train --config " + dir + "/no_such.json");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "error: config:"));

  const std::string bad_cfg = dir + "/bad.json";
  {
    std::ofstream out(bad_cfg);
    out << "{\"steps\": 5, \"bogus\": 1}\n";
  }
  r = run_cli("train --config " + bad_cfg);
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "unknown config key 'bogus'"));

  const std::string missing_corpus_cfg = dir + "/missing_corpus.json";
  {
    std::ofstream out(missing_corpus_cfg);
    out << "{\"train_tsv\": \"" << dir << "/no_such.tsv\"}\n";
  }
  r = run_cli("train --config " + missing_corpus_cfg);
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "error: data:"));
}

TEST_CASE("cli: gradcheck") {
  const CliResult r = run_cli("gradcheck --layers 1 --d-ff 16 --src-len 3 --tgt-len 2");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "gradcheck passed"));
  const std::vector<std::string> lines = lines_of(r.output);
  REQUIRE(lines.size() >= 3);
  bool saw_max = false;
  for (const std::string& line : lines) saw_max = saw_max || line.rfind("max\t", 0) == 0;
  CHECK(saw_max);
}
