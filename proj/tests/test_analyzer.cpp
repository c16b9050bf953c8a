#include <doctest.h>

#include <cmath>
#include <thread>

#include "scenarios.hpp"
#include "sentipipe/analyzer.hpp"
#include "sentipipe/error.hpp"
#include "test_util.hpp"

using namespace sentipipe;
using namespace sentipipe::testing;

namespace {

ErrorCode error_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kInvalidArgument;
}

const Analyzer& shared_analyzer() {
  static const Analyzer analyzer = small_analyzer();
  return analyzer;
}

}  // namespace

TEST_CASE("task parsing") {
  CHECK(parse_task("sentiment") == Task::kSentiment);
  CHECK(parse_task("emotion") == Task::kEmotion);
  CHECK(error_of([] { parse_task("irony"); }) == ErrorCode::kTaskMismatch);
  CHECK(scheme_for(Task::kEmotion).size() == 7);
}

TEST_CASE("prediction_from_logits") {
  const auto& scheme = LabelScheme::sentiment3();
  const std::vector<double> tied = {1.0, 1.0, 0.0};
  const auto p = prediction_from_logits(scheme, tied);
  CHECK(p.label_index == 0);
  CHECK(p.label == "NEG");
  // Shifting one logit above the others moves the argmax there.
  const std::vector<double> shifted = {1.0, 1.0 + 1e-9, 0.0};
  CHECK(prediction_from_logits(scheme, shifted).label == "NEU");
  const std::vector<double> two = {0.0, 1.0};
  CHECK(error_of([&] { prediction_from_logits(scheme, two); }) == ErrorCode::kShapeMismatch);

  const auto doc = to_json(prediction_from_logits(scheme, std::vector<double>{0.0, 0.0, std::log(2.0)}));
  CHECK(doc["label"] == "POS");
  CHECK(doc["probas"].size() == 3);
  CHECK(doc["probas"]["POS"].get<double>() == doctest::Approx(0.5));
  CHECK(doc["probas"]["NEG"].get<double>() == doctest::Approx(0.25));
}

TEST_CASE("adding a constant to all logits never changes the label") {
  Rng rng(41);
  for (const auto* scheme : {&LabelScheme::sentiment3(), &LabelScheme::emotion7()}) {
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> z(scheme->size());
      for (auto& v : z) v = rng.uniform(-10.0, 10.0);
      const double shift = rng.uniform(-100.0, 100.0);
      std::vector<double> shifted(z);
      for (auto& v : shifted) v += shift;
      CHECK(prediction_from_logits(*scheme, z).label == prediction_from_logits(*scheme, shifted).label);
    }
  }
}

TEST_CASE("predictions are well-formed distributions") {
  const auto& analyzer = shared_analyzer();
  for (const auto& text : random_inputs(100, 3)) {
    const auto p = analyzer.predict(text);
    CHECK(p.labels == LabelScheme::sentiment3().labels());
    double sum = 0.0;
    for (double v : p.probabilities) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(p.label == p.labels[p.label_index]);
    for (double v : p.probabilities) CHECK(v <= p.probabilities[p.label_index]);
  }
  CHECK_NOTHROW(analyzer.predict(""));
  CHECK(analyzer.predict("") == analyzer.predict("   "));
  CHECK(analyzer.predict("@ana mip") == analyzer.predict("@bob mip"));
}

TEST_CASE("batch prediction equals one-at-a-time prediction") {
  const auto& analyzer = shared_analyzer();
  const auto inputs = random_inputs(100, 4);
  const auto batch = analyzer.predict_batch(inputs);
  REQUIRE(batch.size() == inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) CHECK(batch[i] == analyzer.predict(inputs[i]));
  CHECK(analyzer.predict_batch({}).empty());
}

TEST_CASE("concurrent prediction is safe and consistent") {
  const auto& analyzer = shared_analyzer();
  const auto inputs = random_inputs(40, 5);
  const auto expected = analyzer.predict_batch(inputs);
  std::vector<std::vector<Prediction>> results(4);
  {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < results.size(); ++t) {
      threads.emplace_back([&, t] {
        for (const auto& text : inputs) results[t].push_back(analyzer.predict(text));
      });
    }
  }
  for (const auto& r : results) CHECK(r == expected);
}

TEST_CASE("save and load reproduce predictions bit for bit") {
  TempDir dir;
  const auto& analyzer = shared_analyzer();
  const auto path = dir / "model.sntp";
  save_model(analyzer, path);
  const auto loaded = load_model(path);
  CHECK(loaded.params() == analyzer.params());
  CHECK(loaded.tokenizer() == analyzer.tokenizer());
  CHECK(loaded.config() == analyzer.config());
  CHECK(loaded.model_name() == "tiny");
  const auto inputs = random_inputs(100, 6);
  CHECK(loaded.logits(inputs) == analyzer.logits(inputs));
  CHECK(loaded.predict_batch(inputs) == analyzer.predict_batch(inputs));

  // Saving again produces the same bytes.
  save_model(loaded, dir / "again.sntp");
  CHECK(read_file(path) == read_file(dir / "again.sntp"));
}

TEST_CASE("model file errors") {
  TempDir dir;
  const auto path = dir / "model.sntp";
  save_model(shared_analyzer(), path);
  const auto bytes = read_file(path);
  CHECK(bytes.substr(0, 4) == "SNTP");

  CHECK(error_of([&] { load_model(dir / "missing.sntp"); }) == ErrorCode::kModelNotFound);

  write_file(dir / "short.sntp", bytes.substr(0, bytes.size() - 3));
  CHECK(error_of([&] { load_model(dir / "short.sntp"); }) == ErrorCode::kFormatError);

  write_file(dir / "tiny.sntp", bytes.substr(0, 5));
  CHECK(error_of([&] { load_model(dir / "tiny.sntp"); }) == ErrorCode::kFormatError);

  write_file(dir / "long.sntp", bytes + "x");
  CHECK(error_of([&] { load_model(dir / "long.sntp"); }) == ErrorCode::kFormatError);

  auto magic = bytes;
  magic[0] = 'X';
  write_file(dir / "magic.sntp", magic);
  CHECK(error_of([&] { load_model(dir / "magic.sntp"); }) == ErrorCode::kFormatError);

  auto v2 = bytes;
  v2[4] = 2;
  write_file(dir / "v2.sntp", v2);
  CHECK(error_of([&] { load_model(dir / "v2.sntp"); }) == ErrorCode::kVersionUnsupported);

  auto header = bytes;
  header[10] = '[';
  write_file(dir / "header.sntp", header);
  CHECK(error_of([&] { load_model(dir / "header.sntp"); }) == ErrorCode::kFormatError);
}

TEST_CASE("create_analyzer checks task and language") {
  TempDir dir;
  const auto path = dir / "model.sntp";
  save_model(shared_analyzer(), path);
  CHECK(create_analyzer(Task::kSentiment, "en", path).language() == "en");
  CHECK(error_of([&] { create_analyzer(Task::kEmotion, "en", path); }) == ErrorCode::kTaskMismatch);
  CHECK(error_of([&] { create_analyzer(Task::kSentiment, "es", path); }) ==
        ErrorCode::kLanguageMismatch);
  CHECK(error_of([&] { create_analyzer(Task::kSentiment, "en", dir / "none.sntp"); }) ==
        ErrorCode::kModelNotFound);
}

TEST_CASE("analyzer construction validates its parts") {
  const auto& a = shared_analyzer();
  CHECK(error_of([&] {
          Analyzer(Task::kEmotion, "en", "x", a.normalize_options(), a.tokenizer(), a.config(),
                   a.params());
        }) == ErrorCode::kSchemeMismatch);
  auto params = a.params();
  params.tensors.pop_back();
  CHECK(error_of([&] {
          Analyzer(Task::kSentiment, "en", "x", a.normalize_options(), a.tokenizer(), a.config(),
                   params);
        }) == ErrorCode::kShapeMismatch);
}
