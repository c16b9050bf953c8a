#include "sentipipe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "sentipipe/error.hpp"

namespace sentipipe {
namespace {

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// F1 from counts, 2TP / (2TP + FP + FN): the harmonic mean of precision and
// recall without their rounding error.
double f1_from_counts(double tp, double fp, double fn) { return safe_ratio(2.0 * tp, 2.0 * tp + fp + fn); }

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

ConfusionMatrix confusion(std::span<const std::size_t> golds, std::span<const std::size_t> preds,
                          std::size_t num_classes) {
  if (golds.size() != preds.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(golds.size()) + " golds vs " +
                                                std::to_string(preds.size()) + " predictions");
  }
  ConfusionMatrix m(num_classes);
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] >= num_classes || preds[i] >= num_classes) {
      throw Error(ErrorCode::kIndexOutOfRange, "label index at position " + std::to_string(i));
    }
    ++m(golds[i], preds[i]);
  }
  return m;
}

ClassScores per_class_prf(const ConfusionMatrix& m, std::size_t c) {
  const auto k = m.num_classes();
  if (c >= k) throw Error(ErrorCode::kIndexOutOfRange, "class " + std::to_string(c));
  double tp = static_cast<double>(m(c, c));
  double fp = 0.0;
  double fn = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (j == c) continue;
    fp += static_cast<double>(m(j, c));
    fn += static_cast<double>(m(c, j));
  }
  ClassScores s;
  s.precision = safe_ratio(tp, tp + fp);
  s.recall = safe_ratio(tp, tp + fn);
  s.f1 = f1_from_counts(tp, fp, fn);
  return s;
}

double micro_f1(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw Error(ErrorCode::kEmptyMatrix, "micro_f1 of an empty confusion matrix");
  // Pooled FP and FN both equal the off-diagonal mass, so micro P = R = F1
  // = accuracy; 2TP / (2 * total) is exactly TP / total.
  std::size_t tp = 0;
  for (std::size_t c = 0; c < m.num_classes(); ++c) tp += m(c, c);
  const double off_diagonal = static_cast<double>(total - tp);
  return f1_from_counts(static_cast<double>(tp), off_diagonal, off_diagonal);
}

double macro_f1(const ConfusionMatrix& m) {
  if (m.total() == 0) throw Error(ErrorCode::kEmptyMatrix, "macro_f1 of an empty confusion matrix");
  double sum = 0.0;
  for (std::size_t c = 0; c < m.num_classes(); ++c) sum += per_class_prf(m, c).f1;
  return sum / static_cast<double>(m.num_classes());
}

EvalReport make_report(const ConfusionMatrix& m, const LabelScheme& scheme, std::string task,
                       std::string language, std::string model) {
  if (m.num_classes() != scheme.size()) {
    throw Error(ErrorCode::kSchemeMismatch, "confusion matrix size does not match scheme");
  }
  EvalReport r;
  r.task = std::move(task);
  r.language = std::move(language);
  r.model = std::move(model);
  r.labels = scheme.labels();
  r.micro_f1 = micro_f1(m);
  r.macro_f1 = macro_f1(m);
  for (std::size_t c = 0; c < m.num_classes(); ++c) r.per_class.push_back(per_class_prf(m, c));
  r.confusion = m;
  return r;
}

EvalReport evaluate(const Classifier& classifier, const Dataset& ds, const std::string& task,
                    const std::string& model_name) {
  if (!(classifier.scheme() == ds.scheme())) {
    throw Error(ErrorCode::kSchemeMismatch, "classifier scheme " +
                                                to_string(classifier.scheme().name()) +
                                                " vs dataset scheme " +
                                                to_string(ds.scheme().name()));
  }
  const auto preds = classifier.classify(ds.texts());
  const auto golds = ds.labels();
  return make_report(confusion(golds, preds, ds.scheme().size()), ds.scheme(), task,
                     ds.language(), model_name);
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    per_class.push_back({{"label", c < r.labels.size() ? r.labels[c] : std::to_string(c)},
                         {"precision", r.per_class[c].precision},
                         {"recall", r.per_class[c].recall},
                         {"f1", r.per_class[c].f1}});
  }
  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t g = 0; g < r.confusion.num_classes(); ++g) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < r.confusion.num_classes(); ++p) row.push_back(r.confusion(g, p));
    matrix.push_back(row);
  }
  return {{"task", r.task},         {"language", r.language},   {"model", r.model},
          {"labels", r.labels},     {"micro_f1", r.micro_f1},   {"macro_f1", r.macro_f1},
          {"per_class", per_class}, {"confusion", matrix}};
}

EvalReport eval_report_from_json(const nlohmann::json& doc) {
  try {
    EvalReport r;
    r.task = doc.at("task").get<std::string>();
    r.language = doc.at("language").get<std::string>();
    r.model = doc.at("model").get<std::string>();
    r.micro_f1 = doc.at("micro_f1").get<double>();
    r.macro_f1 = doc.at("macro_f1").get<double>();
    if (!(r.micro_f1 >= 0.0 && r.micro_f1 <= 1.0 && r.macro_f1 >= 0.0 && r.macro_f1 <= 1.0)) {
      throw Error(ErrorCode::kFormatError, "F1 values must lie in [0, 1]");
    }
    if (doc.contains("labels")) r.labels = doc.at("labels").get<std::vector<std::string>>();
    if (doc.contains("per_class")) {
      for (const auto& entry : doc.at("per_class")) {
        r.per_class.push_back({entry.at("precision").get<double>(),
                               entry.at("recall").get<double>(), entry.at("f1").get<double>()});
      }
    }
    if (doc.contains("confusion")) {
      const auto& rows = doc.at("confusion");
      ConfusionMatrix m(rows.size());
      for (std::size_t g = 0; g < rows.size(); ++g) {
        if (rows[g].size() != rows.size()) {
          throw Error(ErrorCode::kFormatError, "confusion matrix is not square");
        }
        for (std::size_t p = 0; p < rows.size(); ++p) m(g, p) = rows[g][p].get<std::size_t>();
      }
      r.confusion = m;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("eval report: ") + e.what());
  }
}

std::string render_benchmark(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "| Lang | Model | Sentiment Micro F1 | Sentiment Macro F1 | Emotion Micro F1 | "
         "Emotion Macro F1 |\n";
  out << "|------|-------|-------------------:|-------------------:|-----------------:|"
         "-----------------:|\n";

  // Languages and models keep their first-appearance order.
  struct Row {
    std::string model;
    std::optional<double> cells[4];
  };
  std::vector<std::pair<std::string, std::vector<Row>>> groups;
  for (const auto& r : reports) {
    auto group = std::find_if(groups.begin(), groups.end(),
                              [&](const auto& g) { return g.first == r.language; });
    if (group == groups.end()) {
      groups.push_back({r.language, {}});
      group = std::prev(groups.end());
    }
    auto& rows = group->second;
    auto row = std::find_if(rows.begin(), rows.end(), [&](const Row& x) { return x.model == r.model; });
    if (row == rows.end()) {
      rows.push_back({r.model, {}});
      row = std::prev(rows.end());
    }
    const std::size_t base = (r.task == "emotion") ? 2 : 0;
    row->cells[base] = r.micro_f1;
    row->cells[base + 1] = r.macro_f1;
  }

  for (const auto& [language, rows] : groups) {
    // Compare at display precision so equal-looking cells are bolded together.
    std::optional<std::string> best[4];
    for (std::size_t col = 0; col < 4; ++col) {
      for (const auto& row : rows) {
        if (!row.cells[col]) continue;
        const auto text = fixed3(*row.cells[col]);
        if (!best[col] || std::stod(text) > std::stod(*best[col])) best[col] = text;
      }
    }
    bool first = true;
    for (const auto& row : rows) {
      out << "| " << (first ? language : "") << " | " << row.model << " |";
      first = false;
      for (std::size_t col = 0; col < 4; ++col) {
        if (!row.cells[col]) {
          out << " - |";
          continue;
        }
        const auto text = fixed3(*row.cells[col]);
        out << ' ' << (text == best[col] ? "**" + text + "**" : text) << " |";
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace sentipipe
