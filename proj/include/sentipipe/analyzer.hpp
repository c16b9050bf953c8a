#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentipipe/corpus.hpp"
#include "sentipipe/eval.hpp"
#include "sentipipe/model.hpp"
#include "sentipipe/textproc.hpp"

namespace sentipipe {

enum class Task { kSentiment, kEmotion };

std::string to_string(Task task);
Task parse_task(const std::string& text);
const LabelScheme& scheme_for(Task task);

struct Prediction {
  std::size_t label_index = 0;
  std::string label;
  std::vector<std::string> labels;  // scheme order
  std::vector<double> probabilities;

  bool operator==(const Prediction&) const = default;
};

// Softmax plus argmax; ties go to the lowest label index.
Prediction prediction_from_logits(const LabelScheme& scheme, std::span<const double> logits);

// {"label": "...", "probas": {"NEG": ..., ...}}
nlohmann::json to_json(const Prediction& prediction);

// Number of worker threads, capped by SENTIPIPE_THREADS when set.
std::size_t worker_threads();

// Immutable inference bundle: preprocessing, tokenizer and classifier.
// Parameters are held at storage (float32) precision so that a saved and
// reloaded analyzer computes exactly the same outputs.
class Analyzer : public Classifier {
 public:
  Analyzer(Task task, std::string language, std::string model_name, NormalizeOptions normalize,
           BpeModel tokenizer, ModelConfig config, Parameters params);

  Task task() const { return task_; }
  const std::string& language() const { return language_; }
  const std::string& model_name() const { return model_name_; }
  const NormalizeOptions& normalize_options() const { return normalize_; }
  const BpeModel& tokenizer() const { return tokenizer_; }
  const ModelConfig& config() const { return config_; }
  const Parameters& params() const { return params_; }
  const LabelScheme& scheme() const override { return scheme_for(task_); }

  Logits logits(const std::vector<std::string>& texts) const;
  Prediction predict(const std::string& text) const;
  std::vector<Prediction> predict_batch(const std::vector<std::string>& texts) const;
  std::vector<std::size_t> classify(const std::vector<std::string>& texts) const override;

 private:
  Task task_;
  std::string language_;
  std::string model_name_;
  NormalizeOptions normalize_;
  BpeModel tokenizer_;
  ModelConfig config_;
  Parameters params_;
};

inline constexpr char kModelMagic[4] = {'S', 'N', 'T', 'P'};
inline constexpr std::uint16_t kModelFormatVersion = 1;

void save_model(const Analyzer& analyzer, const std::filesystem::path& path);
Analyzer load_model(const std::filesystem::path& path);

// Loads a model and checks it was trained for the requested task and language.
Analyzer create_analyzer(Task task, const std::string& language, const std::filesystem::path& path);

}  // namespace sentipipe
