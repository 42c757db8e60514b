#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tcja/data.hpp"
#include "tcja/network.hpp"

namespace tcja {

enum class OptimizerKind { kAdam, kSgd };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::string precision = "float";  // float | double
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  bool augment = false;
  AugmentPolicy augment_policy;

  void validate() const;  // ConfigError on lr <= 0, batch_size == 0, bad precision
};

// Mean over steps, batch and classes of (s - g)^2. outputs: T x B x C (or
// T x C); target: B x C (or C), broadcast over T.
template <typename Real>
DiffTensor<Real> smse_loss(const DiffTensor<Real>& outputs, const Tensor<Real>& target);

// argmax over classes of the firing rate, lowest index on ties. outputs T x C.
template <typename Real>
std::size_t predict_label(const Tensor<Real>& outputs);
// outputs T x B x C -> one label per sample.
template <typename Real>
std::vector<std::size_t> predict_labels(const Tensor<Real>& outputs);

template <typename Real>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}
  // Throws GraphError if a parameter did not take part in the last backward.
  void step(std::vector<Parameter<Real>>& params);

  std::uint64_t steps() const { return t_; }
  std::map<std::string, Tensor<Real>>& first_moments() { return m_; }
  std::map<std::string, Tensor<Real>>& second_moments() { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  TrainConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Tensor<Real>> m_, v_;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double wall_seconds = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_count;
  std::vector<double> firing_rates;  // per LIF layer, mean over samples
  std::vector<std::size_t> predictions;
  std::vector<std::vector<double>> class_rates;  // per sample, per class
};

// Eval-mode pass over `samples` (no parameter mutation).
template <typename Real>
EvalResult evaluate(Network<Real>& net, const std::vector<FrameSample>& samples, std::size_t batch_size = 50);

// Everything needed to persist and restore a run.
struct TrainState {
  std::size_t epoch = 0;
  double best_acc = -1.0;
  std::mt19937_64 rng;
};

struct TrainOptions {
  std::filesystem::path output_dir;  // empty: keep nothing on disk
  std::string config_json;           // stored in checkpoints
  bool verbose = false;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_acc = 0.0;
  std::size_t best_epoch = 0;
};

// Runs cfg.epochs epochs of minibatch training. Writes metrics.csv,
// last.ckpt and best.ckpt under output_dir when set. Throws NumericError on a
// non-finite loss.
template <typename Real>
TrainResult train(Network<Real>& net, const std::vector<FrameSample>& train_set,
                  const std::vector<FrameSample>& test_set, const TrainConfig& cfg, const TrainOptions& options);

std::string metrics_csv(const std::vector<EpochMetrics>& history);

// Checkpoint file: "TCJACKPT", u16 version, u32-prefixed arch string, u32
// record count, then records of u16-prefixed name, u8 dtype, u8 rank, u32 dims
// and raw little-endian values.
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2, kU64 = 3 };

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::kU8;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

struct Checkpoint {
  std::uint16_t version = 1;
  std::string arch;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
  std::string text(const std::string& name) const;  // u8 record as string
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename Real>
Checkpoint make_checkpoint(const Network<Real>& net, Optimizer<Real>* opt, const TrainState& state,
                           const std::string& config_json);
// Copies parameter values (and optimizer/rng state when given) out of a
// checkpoint. Throws CheckpointError on arch, name, dtype or shape mismatch.
template <typename Real>
void restore_checkpoint(const Checkpoint& ckpt, Network<Real>& net, Optimizer<Real>* opt = nullptr,
                        TrainState* state = nullptr);

}  // namespace tcja
