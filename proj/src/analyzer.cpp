#include "sentipipe/analyzer.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <thread>

#include "sentipipe/error.hpp"
#include "sentipipe/train.hpp"

namespace sentipipe {
namespace {

constexpr std::size_t kPredictChunk = 32;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

[[noreturn]] void format_error(const std::string& what) {
  throw Error(ErrorCode::kFormatError, what);
}

}  // namespace

std::string to_string(Task task) { return task == Task::kSentiment ? "sentiment" : "emotion"; }

Task parse_task(const std::string& text) {
  if (text == "sentiment") return Task::kSentiment;
  if (text == "emotion") return Task::kEmotion;
  throw Error(ErrorCode::kTaskMismatch, "unknown task '" + text + "'");
}

const LabelScheme& scheme_for(Task task) {
  return task == Task::kSentiment ? LabelScheme::sentiment3() : LabelScheme::emotion7();
}

Prediction prediction_from_logits(const LabelScheme& scheme, std::span<const double> logits) {
  if (logits.size() != scheme.size()) {
    throw Error(ErrorCode::kShapeMismatch, "logit count does not match label scheme");
  }
  Prediction p;
  p.labels = scheme.labels();
  p.probabilities.resize(logits.size());
  softmax_row(logits, p.probabilities);
  // max_element returns the first maximum, i.e. the lowest index on ties.
  p.label_index = static_cast<std::size_t>(
      std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin());
  p.label = scheme.label(p.label_index);
  return p;
}

nlohmann::json to_json(const Prediction& prediction) {
  nlohmann::json probas = nlohmann::json::object();
  for (std::size_t i = 0; i < prediction.labels.size(); ++i) {
    probas[prediction.labels[i]] = prediction.probabilities[i];
  }
  return {{"label", prediction.label}, {"probas", probas}};
}

std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SENTIPIPE_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return n;
}

Analyzer::Analyzer(Task task, std::string language, std::string model_name,
                   NormalizeOptions normalize, BpeModel tokenizer, ModelConfig config,
                   Parameters params)
    : task_(task),
      language_(std::move(language)),
      model_name_(std::move(model_name)),
      normalize_(std::move(normalize)),
      tokenizer_(std::move(tokenizer)),
      config_(config),
      params_(std::move(params)) {
  normalize_.validate();
  config_.validate();
  if (config_.num_classes != scheme().size()) {
    throw Error(ErrorCode::kSchemeMismatch, "model has " + std::to_string(config_.num_classes) +
                                                " classes, task " + to_string(task_) +
                                                " has " + std::to_string(scheme().size()));
  }
  if (tokenizer_.vocab_size() != config_.vocab_size) {
    throw Error(ErrorCode::kInvalidConfig, "tokenizer and model vocabulary sizes differ");
  }
  const auto layout = tensor_layout(config_);
  if (layout.size() != params_.tensors.size()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter tensors do not match config");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].shape != params_.tensors[i].shape) {
      throw Error(ErrorCode::kShapeMismatch, "tensor '" + layout[i].name + "' has wrong shape");
    }
  }
  params_.round_to_storage();
}

Logits Analyzer::logits(const std::vector<std::string>& texts) const {
  return forward(params_, config_, make_batch(tokenizer_, normalize_, texts, config_.max_len));
}

Prediction Analyzer::predict(const std::string& text) const {
  const auto z = logits({text});
  return prediction_from_logits(scheme(), z.row(0));
}

std::vector<Prediction> Analyzer::predict_batch(const std::vector<std::string>& texts) const {
  std::vector<Prediction> out(texts.size());
  const std::size_t chunks = (texts.size() + kPredictChunk - 1) / kPredictChunk;
  const auto run_chunk = [&](std::size_t chunk) {
    const auto begin = chunk * kPredictChunk;
    const auto end = std::min(texts.size(), begin + kPredictChunk);
    const auto z = logits(std::vector<std::string>(texts.begin() + begin, texts.begin() + end));
    for (std::size_t r = 0; r < z.rows; ++r) out[begin + r] = prediction_from_logits(scheme(), z.row(r));
  };
  const std::size_t threads = std::min(worker_threads(), chunks);
  if (threads <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < chunks; c += threads) run_chunk(c);
    });
  }
  pool.clear();
  return out;
}

std::vector<std::size_t> Analyzer::classify(const std::vector<std::string>& texts) const {
  std::vector<std::size_t> labels;
  labels.reserve(texts.size());
  for (const auto& p : predict_batch(texts)) labels.push_back(p.label_index);
  return labels;
}

void save_model(const Analyzer& analyzer, const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& t : analyzer.params().tensors) {
    manifest.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const nlohmann::json header = {{"task", to_string(analyzer.task())},
                                 {"language", analyzer.language()},
                                 {"model_name", analyzer.model_name()},
                                 {"labels", analyzer.scheme().labels()},
                                 {"normalize", to_json(analyzer.normalize_options())},
                                 {"tokenizer", to_json(analyzer.tokenizer())},
                                 {"config", to_json(analyzer.config())},
                                 {"tensors", manifest}};
  const auto header_text = header.dump();

  std::string bytes(kModelMagic, sizeof kModelMagic);
  put_u16(bytes, kModelFormatVersion);
  put_u32(bytes, static_cast<std::uint32_t>(header_text.size()));
  bytes += header_text;
  for (const auto& t : analyzer.params().tensors) {
    for (const double v : t.values) put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorCode::kIoError, "failed writing '" + path.string() + "'");
}

Analyzer load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kModelNotFound, path.string());
  const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());

  constexpr std::size_t kPrefix = 4 + 2 + 4;
  if (raw.size() < kPrefix) format_error("file shorter than the fixed header");
  if (std::memcmp(raw.data(), kModelMagic, sizeof kModelMagic) != 0) format_error("bad magic bytes");
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | bytes[5] << 8);
  if (version > kModelFormatVersion) {
    throw Error(ErrorCode::kVersionUnsupported, "format version " + std::to_string(version) +
                                                    " (supported: " +
                                                    std::to_string(kModelFormatVersion) + ")");
  }
  if (version == 0) format_error("format version 0");
  const std::size_t header_len = get_u32(bytes + 6);
  if (raw.size() - kPrefix < header_len) format_error("truncated JSON header");

  try {
    const auto header = nlohmann::json::parse(raw.begin() + kPrefix,
                                              raw.begin() + static_cast<std::ptrdiff_t>(kPrefix + header_len));
    const auto task = parse_task(header.at("task").get<std::string>());
    if (header.at("labels").get<std::vector<std::string>>() != scheme_for(task).labels()) {
      format_error("stored labels do not match the task's label scheme");
    }
    const auto config = model_config_from_json(header.at("config"));
    const auto layout = tensor_layout(config);
    const auto& manifest = header.at("tensors");
    if (manifest.size() != layout.size()) format_error("tensor manifest does not match config");

    Parameters params;
    std::size_t offset = kPrefix + header_len;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto name = manifest[i].at("name").get<std::string>();
      const auto shape = manifest[i].at("shape").get<std::vector<std::size_t>>();
      if (name != layout[i].name || shape != layout[i].shape) {
        format_error("tensor manifest entry " + std::to_string(i) + " does not match config");
      }
      std::size_t count = 1;
      for (auto s : shape) count *= s;
      if ((raw.size() - offset) / 4 < count) format_error("truncated tensor payload");
      Tensor t{name, shape, std::vector<double>(count)};
      for (std::size_t j = 0; j < count; ++j, offset += 4) {
        t.values[j] = static_cast<double>(std::bit_cast<float>(get_u32(bytes + offset)));
      }
      params.tensors.push_back(std::move(t));
    }
    if (offset != raw.size()) format_error("trailing bytes after tensor payload");

    return Analyzer(task, header.at("language").get<std::string>(),
                    header.at("model_name").get<std::string>(),
                    normalize_options_from_json(header.at("normalize")),
                    bpe_from_json(header.at("tokenizer")), config, std::move(params));
  } catch (const nlohmann::json::exception& e) {
    format_error(std::string("model header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kFormatError) throw;
    format_error(e.what());
  }
}

Analyzer create_analyzer(Task task, const std::string& language, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kModelNotFound, path.string());
  auto analyzer = load_model(path);
  if (analyzer.task() != task) {
    throw Error(ErrorCode::kTaskMismatch, "model was trained for " + to_string(analyzer.task()) +
                                              ", requested " + to_string(task));
  }
  if (analyzer.language() != language) {
    throw Error(ErrorCode::kLanguageMismatch, "model language '" + analyzer.language() +
                                                  "', requested '" + language + "'");
  }
  return analyzer;
}

}  // namespace sentipipe
