#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "tcja/data.hpp"
#include "tcja/network.hpp"
#include "tcja/training.hpp"

namespace tcja {

namespace exit_code {
constexpr int kOk = 0;
constexpr int kConfig = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;
constexpr int kCheckpoint = 4;
constexpr int kNoTcja = 5;
}  // namespace exit_code

struct DataConfig {
  std::string source = "synthetic";  // synthetic | manifest
  // synthetic: samples [0, train) train, [train, train + test) test
  std::size_t train_samples = 400;
  std::size_t test_samples = 100;
  std::uint64_t seed = 1;
  double noise = 0.05;
  // manifest: either one manifest split 9:1, or explicit train/test
  std::string manifest;
  std::string train_manifest;
  std::string test_manifest;
};

struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "runs/default";

  void validate() const;
};

// JSON with unknown keys rejected (ConfigError). Relative data paths are
// resolved against base_dir.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully resolved config. The checkpoint copy leaves out output_dir so runs
// into different directories stay byte-identical.
std::string dump_run_config(const RunConfig& cfg, bool include_output_dir = true);

struct Datasets {
  std::vector<FrameSample> train, test;
};
Datasets load_datasets(const RunConfig& cfg);

// Full command line: train, eval, inspect-attention, bench, gen-synthetic.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tcja
