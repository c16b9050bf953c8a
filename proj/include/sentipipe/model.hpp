#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentipipe/random.hpp"
#include "sentipipe/textproc.hpp"

namespace sentipipe {

enum class EncoderKind { kTransformer, kLinearBow };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder(const std::string& text);

struct ModelConfig {
  EncoderKind encoder = EncoderKind::kTransformer;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 3;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_layers = 2;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 64;
  double dropout_rate = 0.1;

  // Throws InvalidConfig.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

using Logits = Matrix;
using Probabilities = Matrix;

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  bool operator==(const Tensor&) const = default;
};

// Every trainable tensor of a model, in a fixed order determined by the
// config (see tensor_layout).
struct Parameters {
  std::vector<Tensor> tensors;

  std::size_t total_size() const;
  Parameters zeros_like() const;
  // Rounds every value to the nearest 32-bit float (the storage precision).
  void round_to_storage();
  bool operator==(const Parameters&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
};

std::vector<TensorSpec> tensor_layout(const ModelConfig& config);

Parameters init_model(const ModelConfig& config, std::uint64_t seed);

// Padded token-id matrix. mask[i] != 0 marks a real (non-pad) position.
struct TokenBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  static TokenBatch from_sequences(const std::vector<std::vector<TokenId>>& sequences);
};

void softmax_row(std::span<const double> logits, std::span<double> out);
Probabilities softmax(const Logits& logits);

// Inference-mode forward pass (dropout off).
Logits forward(const Parameters& params, const ModelConfig& config, const TokenBatch& batch);

// A forward pass that keeps the activations needed for backpropagation.
// With a non-null dropout_rng the pass runs in training mode.
class TrainingPass {
 public:
  TrainingPass(const Parameters& params, const ModelConfig& config, const TokenBatch& batch,
               Rng* dropout_rng);
  ~TrainingPass();
  TrainingPass(TrainingPass&&) noexcept;
  TrainingPass& operator=(TrainingPass&&) noexcept;

  const Logits& logits() const { return logits_; }

  // Accumulates d(loss)/d(params) into grads given d(loss)/d(logits).
  void backward(const Matrix& dlogits, Parameters& grads) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Logits logits_;
};

}  // namespace sentipipe
