#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentipipe/corpus.hpp"
#include "sentipipe/model.hpp"
#include "sentipipe/textproc.hpp"

namespace sentipipe {

enum class ClassWeighting { kNone, kBalanced };

std::string to_string(ClassWeighting mode);
ClassWeighting parse_weighting(const std::string& text);

struct TrainConfig {
  // Pretrained checkpoints are fine-tuned around 1e-5; randomly initialized
  // desk-scale models need a larger peak.
  double peak_lr = 1e-3;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double warmup_fraction = 0.1;
  ClassWeighting class_weighting = ClassWeighting::kNone;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double gradient_clip_norm = 1.0;  // <= 0 disables clipping
  NormalizeOptions normalize;

  void validate() const;
};

struct ClassWeights {
  std::vector<double> values;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> heldout_macro_f1;
  double lr_at_epoch_end = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> lr_trace;  // one entry per optimizer step
};

nlohmann::json to_json(const EpochRecord& record);
// One JSON object per line, one line per epoch.
std::string to_jsonl(const TrainHistory& history);

ClassWeights compute_class_weights(const DatasetStats& stats, ClassWeighting mode);

// Number of rising steps of the triangular schedule.
std::size_t warmup_steps(std::size_t total_steps, double warmup_fraction);

// Triangular schedule: 0 at step 0, peak_lr at warmup_steps(), 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_fraction);

struct CrossEntropy {
  double loss = 0.0;  // sum of per-example losses / sum of applied weights
  std::vector<double> per_example;
  double weight_sum = 0.0;
};

CrossEntropy weighted_cross_entropy(const Logits& logits, std::span<const std::size_t> gold,
                                    const ClassWeights& weights);

// d(batch loss)/d(logits) for weighted_cross_entropy.
Matrix weighted_cross_entropy_grad(const Logits& logits, std::span<const std::size_t> gold,
                                   const ClassWeights& weights);

struct TrainResult {
  Parameters params;
  TrainHistory history;
};

TrainResult train(const ModelConfig& config, const Parameters& params, const Dataset& ds,
                  const BpeModel& tokenizer, const TrainConfig& tc,
                  const Dataset* heldout = nullptr);

// Normalizes, encodes and pads texts for the model.
TokenBatch make_batch(const BpeModel& tokenizer, const NormalizeOptions& normalize,
                      const std::vector<std::string>& texts, std::size_t max_len);

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t coordinates_checked = 0;
};

// Central-difference check of the weighted cross-entropy gradient, with
// dropout and clipping off. Up to samples_per_tensor coordinates per tensor.
GradCheckResult grad_check(const ModelConfig& config, const Parameters& params,
                           const TokenBatch& batch, std::span<const std::size_t> gold,
                           const ClassWeights& weights, double eps,
                           std::size_t samples_per_tensor = 50, std::uint64_t seed = 0);

}  // namespace sentipipe
