#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentipipe/corpus.hpp"

namespace sentipipe {

// K x K counts; rows are gold labels, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0)
      : k_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return k_; }
  std::size_t operator()(std::size_t gold, std::size_t pred) const { return counts_[gold * k_ + pred]; }
  std::size_t& operator()(std::size_t gold, std::size_t pred) { return counts_[gold * k_ + pred]; }
  std::size_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion(std::span<const std::size_t> golds, std::span<const std::size_t> preds,
                          std::size_t num_classes);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Undefined ratios (0/0) are reported as 0.
ClassScores per_class_prf(const ConfusionMatrix& m, std::size_t c);

double micro_f1(const ConfusionMatrix& m);
double macro_f1(const ConfusionMatrix& m);

// Anything that maps texts to label indices under a fixed scheme.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual const LabelScheme& scheme() const = 0;
  virtual std::vector<std::size_t> classify(const std::vector<std::string>& texts) const = 0;
};

struct EvalReport {
  std::string task;
  std::string language;
  std::string model;
  std::vector<std::string> labels;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassScores> per_class;
  ConfusionMatrix confusion;
};

EvalReport make_report(const ConfusionMatrix& m, const LabelScheme& scheme, std::string task,
                       std::string language, std::string model);

EvalReport evaluate(const Classifier& classifier, const Dataset& ds, const std::string& task,
                    const std::string& model_name);

nlohmann::json to_json(const EvalReport& report);
// Confusion matrix and per-class scores are optional in the document.
EvalReport eval_report_from_json(const nlohmann::json& doc);

// Markdown table: one block per language, one row per model, with the best
// value of each column inside a language block in bold.
std::string render_benchmark(const std::vector<EvalReport>& reports);

}  // namespace sentipipe
