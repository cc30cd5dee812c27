// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sparseattn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitTraining = 4;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kSeedEnv = "SPARSEATTN_SEED";

struct TrainFlags {
  std::string config = "baseline";  // experiment name or JSON config file
  std::string data = "synthetic";   // "synthetic", a TSV file, or a directory of TSVs
  std::uint64_t seed = 7;
  std::size_t epochs = 5;
  std::filesystem::path out = "run";
  std::size_t synthetic_size = 2000;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t model_dim = 32;
  std::size_t ff_dim = 64;
  std::size_t max_len = 64;
  std::size_t vocab_size = 8000;
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t accum_steps = 1;
  std::size_t eval_every = 50;
};

struct FlopsFlags {
  long long n = 512;
  long long d = 768;
  long long ff_dim = 0;  // 0 means 4d
  std::filesystem::path out = ".";
};

struct AnalyzeFlags {
  std::vector<std::filesystem::path> runs;
  std::filesystem::path out = ".";
};

struct GenDataFlags {
  std::uint64_t seed = 7;
  std::size_t size = 2000;
  std::size_t vocab_size = 1000;
  std::size_t max_len = 64;
  std::filesystem::path out = "data";
};

int cmd_train(const TrainFlags& flags, std::ostream& out, std::ostream& err);
int cmd_flops(const FlopsFlags& flags, std::ostream& out, std::ostream& err);
int cmd_analyze(const AnalyzeFlags& flags, std::ostream& out, std::ostream& err);
int cmd_gen_data(const GenDataFlags& flags, std::ostream& out, std::ostream& err);

// Parses argv (argv[0] is the program name) and dispatches to a subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Seed default: SPARSEATTN_SEED when set and numeric, else 7.
std::optional<std::uint64_t> seed_from_env();

}  // namespace sparseattn::cli
