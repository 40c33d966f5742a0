#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pdcvit/data.hpp"
#include "pdcvit/ops.hpp"
#include "pdcvit/vit.hpp"

namespace pdcvit {

struct TrainConfig {
  double lr = 3e-5;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 7;
  BranchSelector variant = BranchSelector::Both;
  std::string preset = "desk";
  std::size_t channels_per_branch = 16;
  std::size_t crop = 224;
  std::size_t threads = 1;
  std::string checkpoint_path;  // empty: keep in memory only

  void validate() const;
  ModelSpec model_spec(std::size_t num_classes) const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  ModelSpec spec;
  std::vector<std::string> classes;
  std::vector<NamedTensor> params;  // deep copies, model order
  AdamState optimizer;              // aligned with params
  std::string rng_state;
  std::size_t epoch = 0;
};

Checkpoint make_checkpoint(const PdcVitModel& model, const TrainConfig& config, const std::vector<std::string>& classes,
                           const AdamState& optimizer, const Rng& rng, std::size_t epoch);
PdcVitModel model_from_checkpoint(const Checkpoint& ckpt);

// Binary container: "PDCVITCK", u32 version, u64 metadata length + key=value
// text, u32 record count, then records of (u32 name length, name, u32 rank,
// u64 dims..., f64 values). Little-endian.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;  // lowest test loss
  std::vector<EpochStats> history;
};

// Called after each epoch; used for progress output.
using EpochCallback = std::function<void(const EpochStats&)>;

TrainResult train(const std::vector<ImageSample>& train_set, const std::vector<ImageSample>& test_set,
                  const std::vector<std::string>& classes, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});
TrainResult train(const DatasetManifest& manifest, const TrainConfig& config, const EpochCallback& on_epoch = {});

struct EvalReport {
  std::vector<std::string> classes;
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // rows true, cols predicted
  std::vector<double> fnr;
  std::vector<double> fpr;
  double mean_fnr = 0.0;
  double mean_fpr = 0.0;
  std::vector<EpochStats> history;

  std::string to_text() const;
  std::string to_json() const;
};

// One-vs-rest FNR_c = FN / (TP + FN), FPR_c = FP / (FP + TN); an empty
// denominator gives 0.
EvalReport report_from_confusion(const std::vector<std::vector<std::size_t>>& confusion,
                                 std::vector<std::string> classes = {});

std::vector<std::size_t> predict(const PdcVitModel& model, const std::vector<ImageSample>& samples,
                                 std::size_t threads = 1);
EvalReport evaluate(const PdcVitModel& model, const std::vector<ImageSample>& samples,
                    const std::vector<std::string>& classes, std::size_t threads = 1);
// Evaluates on the manifest's test split; class lists must match.
EvalReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest, std::size_t threads = 1);

// Mean cross-entropy and accuracy in eval mode.
std::pair<double, double> loss_and_accuracy(const PdcVitModel& model, const std::vector<ImageSample>& samples,
                                            std::size_t threads = 1);

// CSV with header label,f0,...,f{dim-1}; one row per test item.
void export_features(const Checkpoint& ckpt, const DatasetManifest& manifest, const std::filesystem::path& out,
                     std::size_t threads = 1);

// epoch,train_loss,test_loss,test_accuracy
std::string loss_history_csv(const std::vector<EpochStats>& history);

struct AblationRow {
  BranchSelector variant;
  std::size_t parameter_count = 0;
  EvalReport report;
};

// Trains and evaluates apdc, rpdc and pdc with identical config and seed.
std::vector<AblationRow> ablation_run(const std::vector<ImageSample>& train_set,
                                      const std::vector<ImageSample>& test_set,
                                      const std::vector<std::string>& classes, const TrainConfig& base,
                                      const EpochCallback& on_epoch = {});
std::vector<AblationRow> ablation_run(const DatasetManifest& manifest, const TrainConfig& base,
                                      const EpochCallback& on_epoch = {});
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace pdcvit
