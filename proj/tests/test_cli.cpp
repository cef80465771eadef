#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = NAR_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("nar_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// small space so the pipeline stays fast
void write_config(const fs::path& to) {
  std::ofstream out(to);
  out << R"({
  "profile": "synth",
  "synth": {"nodes": 5, "max_edges": 5, "cells": 2},
  "model": {"layers": 1, "dim": 16, "heads": 2, "ffn_dim": 24, "dropout": 0.0},
  "train": {"batch_size": 20, "epochs": 2, "warmup": 10},
  "search": {"iterations": 4, "sample_size": 16, "top_k": 2, "constraint_reuse": 8},
  "data": {"train_fraction": 0.05, "validation_size": 40}
})";
}

}  // namespace

TEST_CASE("cli pipeline: synth, train, search, eval") {
  TempDir dir("pipeline");
  const fs::path config = dir.path / "config.json";
  write_config(config);
  const std::string base = "--config " + config.string() + " --seed 5 ";

  REQUIRE(run("synth " + base + "--out " + (dir.path / "space").string()) == 0);
  const fs::path records = dir.path / "space" / "synthetic.jsonl";
  REQUIRE(fs::exists(records));

  // identical seeds give identical bytes
  REQUIRE(run("synth " + base + "--out " + (dir.path / "space2").string()) == 0);
  CHECK(slurp(records) == slurp(dir.path / "space2" / "synthetic.jsonl"));

  REQUIRE(run("train " + base + "--records " + records.string() + " --out " + (dir.path / "model").string()) == 0);
  const fs::path ckpt = dir.path / "model" / "checkpoint.bin";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(dir.path / "model" / "train_log.jsonl"));
  CHECK(fs::exists(dir.path / "model" / "metrics.json"));
  CHECK(fs::exists(dir.path / "model" / "config_resolved.json"));
  CHECK(fs::exists(dir.path / "model" / "config_input.json"));
  CHECK(slurp(config) == slurp(dir.path / "model" / "config_input.json"));

  const std::string search_args = "search " + base + "--records " + records.string() + " --checkpoint " +
                                  ckpt.string() + " --mode statistics --repeats 2 --out ";
  REQUIRE(run(search_args + (dir.path / "searched").string()) == 0);
  CHECK(fs::exists(dir.path / "searched" / "report_0.jsonl"));
  CHECK(fs::exists(dir.path / "searched" / "report_1.jsonl"));
  CHECK(fs::exists(dir.path / "searched" / "search_summary.json"));

  // reports are reproducible byte for byte
  REQUIRE(run(search_args + (dir.path / "searched2").string()) == 0);
  CHECK(slurp(dir.path / "searched" / "report_0.jsonl") == slurp(dir.path / "searched2" / "report_0.jsonl"));
  CHECK(slurp(dir.path / "searched" / "search_summary.json") ==
        slurp(dir.path / "searched2" / "search_summary.json"));

  REQUIRE(run("eval " + base + "--records " + records.string() + " --checkpoint " + ckpt.string() + " --out " +
              (dir.path / "evaled").string()) == 0);
  const std::string metrics = slurp(dir.path / "evaled" / "metrics.json");
  CHECK(metrics.find("kendall_tau") != std::string::npos);
  const std::string scatter = slurp(dir.path / "evaled" / "scatter.csv");
  // header plus one row per record
  std::size_t lines = 0;
  for (char ch : scatter)
    if (ch == '\n') ++lines;
  CHECK(lines == 2592 + 1);
}

TEST_CASE("cli exit codes") {
  TempDir dir("exit_codes");

  SUBCASE("unknown config keys are a config error") {
    const fs::path config = dir.path / "bad.json";
    std::ofstream(config) << R"({"bogus": 1})";
    CHECK(run("synth --config " + config.string() + " --out " + (dir.path / "o").string()) == 2);
  }
  SUBCASE("oversized synthetic spec is a config error with the count") {
    const fs::path config = dir.path / "big.json";
    std::ofstream(config) << R"({"synth": {"nodes": 5, "max_edges": 5, "cells": 2, "max_structures": 10}})";
    CHECK(run("synth --config " + config.string() + " --out " + (dir.path / "o").string()) == 2);
  }
  SUBCASE("missing record file is a data error") {
    CHECK(run("train --records /tmp/definitely_missing.jsonl --out " + (dir.path / "o").string()) == 3);
  }
  SUBCASE("records without accuracy name the offender") {
    const fs::path records = dir.path / "noacc.jsonl";
    std::ofstream(records)
        << R"({"id":"bare","family":"synth","adjacency":[[0,1,0],[0,0,1],[0,0,0]],"ops":[1,2,5],)"
        << R"("cells":[{"flops":[1,1,1],"params":[1,1,1]}],"total_flops":3,"total_params":3})" << '\n';
    const fs::path config = dir.path / "tiny.json";
    std::ofstream(config) << R"({"synth": {"nodes": 3, "max_edges": 3, "cells": 1}})";
    CHECK(run("train --config " + config.string() + " --records " + records.string() + " --out " +
              (dir.path / "o").string()) == 3);
  }
  SUBCASE("bad flags are a config error") {
    CHECK(run("search --mode nonsense") == 2);
    CHECK(run("frobnicate") == 2);
  }
}
