#include "sentipipe/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sentipipe/error.hpp"
#include "sentipipe/eval.hpp"

namespace sentipipe {
namespace {

// Below this magnitude gradients are compared on an absolute scale.
constexpr double kGradCheckFloor = 1e-6;

void check_logit_shapes(const Logits& logits, std::span<const std::size_t> gold,
                        const ClassWeights& weights) {
  if (logits.rows != gold.size()) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(logits.rows) + " logit rows vs " +
                                               std::to_string(gold.size()) + " labels");
  }
  if (logits.cols != weights.values.size()) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(logits.cols) + " classes vs " +
                                               std::to_string(weights.values.size()) +
                                               " class weights");
  }
  for (const auto g : gold) {
    if (g >= logits.cols) throw Error(ErrorCode::kShapeMismatch, "gold label out of range");
  }
}

double log_softmax_at(std::span<const double> z, std::size_t index) {
  const double max = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - max);
  return z[index] - max - std::log(sum);
}

double batch_loss(const Parameters& params, const ModelConfig& config, const TokenBatch& batch,
                  std::span<const std::size_t> gold, const ClassWeights& weights) {
  return weighted_cross_entropy(forward(params, config, batch), gold, weights).loss;
}

void clip_global_norm(Parameters& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& t : grads.tensors) {
    for (double v : t.values) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (auto& t : grads.tensors) {
    for (double& v : t.values) v *= scale;
  }
}

std::vector<std::size_t> predict_indices(const Parameters& params, const ModelConfig& config,
                                         const std::vector<std::vector<TokenId>>& encoded) {
  std::vector<std::size_t> preds;
  preds.reserve(encoded.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < encoded.size(); start += kChunk) {
    const auto end = std::min(encoded.size(), start + kChunk);
    const std::vector<std::vector<TokenId>> chunk(encoded.begin() + start, encoded.begin() + end);
    const auto logits = forward(params, config, TokenBatch::from_sequences(chunk));
    for (std::size_t r = 0; r < logits.rows; ++r) {
      const auto row = logits.row(r);
      preds.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) -
                                               row.begin()));
    }
  }
  return preds;
}

}  // namespace

std::string to_string(ClassWeighting mode) {
  return mode == ClassWeighting::kNone ? "none" : "balanced";
}

ClassWeighting parse_weighting(const std::string& text) {
  if (text == "none") return ClassWeighting::kNone;
  if (text == "balanced") return ClassWeighting::kBalanced;
  throw Error(ErrorCode::kInvalidArgument, "unknown class weighting '" + text + "'");
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& reason) {
    throw Error(ErrorCode::kInvalidArgument, reason);
  };
  if (!(peak_lr > 0.0)) fail("peak_lr must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must lie in (0, 1)");
  normalize.validate();
}

nlohmann::json to_json(const EpochRecord& record) {
  nlohmann::json doc = {{"epoch", record.epoch},
                        {"mean_loss", record.mean_loss},
                        {"heldout_macro_f1", nullptr},
                        {"lr_at_epoch_end", record.lr_at_epoch_end}};
  if (record.heldout_macro_f1) doc["heldout_macro_f1"] = *record.heldout_macro_f1;
  return doc;
}

std::string to_jsonl(const TrainHistory& history) {
  std::string out;
  for (const auto& record : history.epochs) out += to_json(record).dump() + "\n";
  return out;
}

ClassWeights compute_class_weights(const DatasetStats& stats, ClassWeighting mode) {
  const auto k = stats.per_class.size();
  ClassWeights w{std::vector<double>(k, 1.0)};
  if (mode == ClassWeighting::kNone) return w;
  for (std::size_t c = 0; c < k; ++c) {
    if (stats.per_class[c] == 0) {
      throw Error(ErrorCode::kEmptyClass, "class " + std::to_string(c) + " has no examples");
    }
    w.values[c] = static_cast<double>(stats.total) /
                  (static_cast<double>(k) * static_cast<double>(stats.per_class[c]));
  }
  return w;
}

std::size_t warmup_steps(std::size_t total_steps, double warmup_fraction) {
  if (total_steps <= 1) return total_steps;
  // The small offset keeps products like 0.7 * 10 from rounding up a step.
  const auto raw = static_cast<std::size_t>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps) - 1e-9));
  return std::clamp<std::size_t>(raw, 1, total_steps - 1);
}

double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_fraction) {
  if (total_steps == 0 || step > total_steps) {
    throw Error(ErrorCode::kInvalidArgument, "lr_at requires 0 <= step <= total_steps, total >= 1");
  }
  if (step == 0 || step == total_steps) return 0.0;
  const auto warm = warmup_steps(total_steps, warmup_fraction);
  if (step == warm) return peak_lr;
  if (step < warm) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  }
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warm);
}

CrossEntropy weighted_cross_entropy(const Logits& logits, std::span<const std::size_t> gold,
                                    const ClassWeights& weights) {
  check_logit_shapes(logits, gold, weights);
  CrossEntropy ce;
  ce.per_example.resize(gold.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const double w = weights.values[gold[i]];
    ce.per_example[i] = -w * log_softmax_at(logits.row(i), gold[i]);
    sum += ce.per_example[i];
    ce.weight_sum += w;
  }
  ce.loss = ce.weight_sum > 0.0 ? sum / ce.weight_sum : 0.0;
  return ce;
}

Matrix weighted_cross_entropy_grad(const Logits& logits, std::span<const std::size_t> gold,
                                   const ClassWeights& weights) {
  check_logit_shapes(logits, gold, weights);
  double weight_sum = 0.0;
  for (const auto g : gold) weight_sum += weights.values[g];
  Matrix grad(logits.rows, logits.cols);
  if (weight_sum <= 0.0) return grad;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const double scale = weights.values[gold[i]] / weight_sum;
    auto row = grad.row(i);
    softmax_row(logits.row(i), row);
    row[gold[i]] -= 1.0;
    for (auto& v : row) v *= scale;
  }
  return grad;
}

TokenBatch make_batch(const BpeModel& tokenizer, const NormalizeOptions& normalize,
                      const std::vector<std::string>& texts, std::size_t max_len) {
  std::vector<std::vector<TokenId>> encoded;
  encoded.reserve(texts.size());
  for (const auto& text : texts) {
    encoded.push_back(encode(tokenizer, normalize_tweet(text, normalize), max_len));
  }
  return TokenBatch::from_sequences(encoded);
}

TrainResult train(const ModelConfig& config, const Parameters& params, const Dataset& ds,
                  const BpeModel& tokenizer, const TrainConfig& tc, const Dataset* heldout) {
  config.validate();
  tc.validate();
  if (ds.scheme().size() != config.num_classes) {
    throw Error(ErrorCode::kSchemeMismatch, "dataset has " + std::to_string(ds.scheme().size()) +
                                                " classes, model has " +
                                                std::to_string(config.num_classes));
  }
  if (heldout != nullptr && !(heldout->scheme() == ds.scheme())) {
    throw Error(ErrorCode::kSchemeMismatch, "held-out set uses a different label scheme");
  }
  if (tokenizer.vocab_size() != config.vocab_size) {
    throw Error(ErrorCode::kInvalidConfig, "tokenizer vocabulary size " +
                                               std::to_string(tokenizer.vocab_size()) +
                                               " does not match model vocab_size " +
                                               std::to_string(config.vocab_size));
  }
  TrainResult result{params, {}};
  if (tc.epochs == 0) return result;
  if (ds.empty()) throw Error(ErrorCode::kEmptyDataset, "cannot train on an empty dataset");

  const auto encode_all = [&](const Dataset& d) {
    std::vector<std::vector<TokenId>> out;
    out.reserve(d.size());
    for (const auto& ex : d.examples()) {
      out.push_back(encode(tokenizer, normalize_tweet(ex.text, tc.normalize), config.max_len));
    }
    return out;
  };
  const auto encoded = encode_all(ds);
  const auto gold = ds.labels();
  std::vector<std::vector<TokenId>> heldout_encoded;
  std::vector<std::size_t> heldout_gold;
  if (heldout != nullptr && !heldout->empty()) {
    heldout_encoded = encode_all(*heldout);
    heldout_gold = heldout->labels();
  }

  const auto weights = compute_class_weights(dataset_stats(ds), tc.class_weighting);
  const std::size_t n = ds.size();
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = tc.epochs * steps_per_epoch;

  auto& p = result.params;
  auto first_moment = p.zeros_like();
  auto second_moment = p.zeros_like();
  Rng shuffle_rng(tc.seed);
  Rng dropout_rng(tc.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const auto end = std::min(n, start + tc.batch_size);
      std::vector<std::vector<TokenId>> seqs;
      std::vector<std::size_t> batch_gold;
      for (std::size_t i = start; i < end; ++i) {
        seqs.push_back(encoded[order[i]]);
        batch_gold.push_back(gold[order[i]]);
      }
      const auto batch = TokenBatch::from_sequences(seqs);
      auto grads = p.zeros_like();
      {
        const TrainingPass pass(p, config, batch, &dropout_rng);
        loss_sum += weighted_cross_entropy(pass.logits(), batch_gold, weights).loss;
        pass.backward(weighted_cross_entropy_grad(pass.logits(), batch_gold, weights), grads);
      }
      clip_global_norm(grads, tc.gradient_clip_norm);

      ++step;
      lr = lr_at(step, total_steps, tc.peak_lr, tc.warmup_fraction);
      result.history.lr_trace.push_back(lr);
      const double bias1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(step));
      for (std::size_t t = 0; t < p.tensors.size(); ++t) {
        auto& values = p.tensors[t].values;
        auto& m = first_moment.tensors[t].values;
        auto& v = second_moment.tensors[t].values;
        const auto& g = grads.tensors[t].values;
        for (std::size_t i = 0; i < values.size(); ++i) {
          m[i] = tc.adam_beta1 * m[i] + (1.0 - tc.adam_beta1) * g[i];
          v[i] = tc.adam_beta2 * v[i] + (1.0 - tc.adam_beta2) * g[i] * g[i];
          values[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + tc.adam_eps);
        }
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = loss_sum / static_cast<double>(steps_per_epoch);
    record.lr_at_epoch_end = lr;
    if (!heldout_encoded.empty()) {
      const auto preds = predict_indices(p, config, heldout_encoded);
      record.heldout_macro_f1 = macro_f1(confusion(heldout_gold, preds, config.num_classes));
    }
    result.history.epochs.push_back(record);
  }
  return result;
}

GradCheckResult grad_check(const ModelConfig& config, const Parameters& params,
                           const TokenBatch& batch, std::span<const std::size_t> gold,
                           const ClassWeights& weights, double eps,
                           std::size_t samples_per_tensor, std::uint64_t seed) {
  auto analytic = params.zeros_like();
  {
    const TrainingPass pass(params, config, batch, nullptr);
    pass.backward(weighted_cross_entropy_grad(pass.logits(), gold, weights), analytic);
  }

  GradCheckResult result;
  Rng rng(seed);
  Parameters probe = params;
  for (std::size_t t = 0; t < probe.tensors.size(); ++t) {
    auto& values = probe.tensors[t].values;
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > samples_per_tensor) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(samples_per_tensor);
    }
    for (const auto i : coords) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = batch_loss(probe, config, batch, gold, weights);
      values[i] = original - eps;
      const double down = batch_loss(probe, config, batch, gold, weights);
      values[i] = original;

      const double numeric = (up - down) / (2.0 * eps);
      const double exact = analytic.tensors[t].values[i];
      const double abs_err = std::abs(numeric - exact);
      const double scale = std::max({std::abs(numeric), std::abs(exact), kGradCheckFloor});
      result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
      result.max_relative_error = std::max(result.max_relative_error, abs_err / scale);
      ++result.coordinates_checked;
    }
  }
  return result;
}

}  // namespace sentipipe
