#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tomotx/common/image.hpp"

namespace tomotx::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "tomotx 0.1.0";

enum ExitCode { kOk = 0, kUnexpected = 1, kUsage = 2, kIo = 3, kNumeric = 4 };

int exit_code_for(const std::exception& e);

struct GenDataOptions {
  int side = 64;
  int angles = 60;
  int64_t n_train = 2000;
  int64_t n_eval = 200;
  uint64_t seed = 0;
  fs::path out;
};

struct TrainOptions {
  std::string task;
  fs::path data;
  std::optional<fs::path> base;
  std::optional<double> mask_ratio;
  std::optional<double> dose;
  int epochs = 40;
  int batch_size = 16;
  double lr = 1e-3;
  uint64_t seed = 0;
  bool no_freeze = false;
  // ctx only: also train from scratch and write the comparison.
  bool compare = false;
  int d_model = 64;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int d_ff = 128;
  int patch_side = 8;
  bool quiet = false;
  fs::path out;
};

struct InferOptions {
  std::string task;  // empty: taken from the checkpoint
  fs::path ckpt;
  fs::path input;
  // Applied to the input before inference. Without it, all-zero rows of the
  // input are treated as missing.
  std::optional<double> mask_ratio;
  std::string scheme = "random";
  std::optional<double> dose;
  uint64_t seed = 0;
  // 1-based decoder layer; head omitted means every head.
  std::optional<int> attention_layer;
  std::optional<int> attention_head;
  fs::path out;
};

struct EvalOptions {
  std::vector<fs::path> ckpts;
  fs::path data;
  std::string sweep = "mask";
  std::vector<double> values;
  std::string scheme = "uniform";
  std::vector<std::string> methods;  // empty: every available method
  uint64_t seed = 0;
  int max_samples = 0;  // 0: whole eval split
  int triptychs = 1;
  bool allow_dataset_mismatch = false;
  fs::path out;
};

void gen_data(const GenDataOptions& opt);
void train(const TrainOptions& opt);
void infer(const InferOptions& opt);
void eval(const EvalOptions& opt);

// Parses argv, runs one subcommand and maps failures to exit codes.
int run(int argc, const char* const* argv);

// 8-bit binary PGM, min-max scaled; constant images map to 0.
void write_pgm(const fs::path& path, const Image& image);
Image read_pgm(const fs::path& path);

}  // namespace tomotx::cli
