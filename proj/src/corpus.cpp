#include "sentipipe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "sentipipe/error.hpp"
#include "sentipipe/random.hpp"

namespace sentipipe {
namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return cols;
}

long long round_half_away(double x) {
  return static_cast<long long>(x < 0 ? std::ceil(x - 0.5) : std::floor(x + 0.5));
}

}  // namespace

std::string to_string(SchemeName name) {
  return name == SchemeName::kSentiment3 ? "Sentiment3" : "Emotion7";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kOther: return "other";
  }
  return "other";
}

Split parse_split(std::string_view text) {
  const auto lower = ascii_lower(text);
  if (lower == "train") return Split::kTrain;
  if (lower == "test") return Split::kTest;
  if (lower == "other") return Split::kOther;
  throw Error(ErrorCode::kInvalidArgument, "unknown split '" + std::string(text) + "'");
}

LabelScheme::LabelScheme(SchemeName name, std::vector<std::string> labels,
                         std::vector<std::pair<std::string, std::size_t>> aliases)
    : name_(name), labels_(std::move(labels)), aliases_(std::move(aliases)) {}

const LabelScheme& LabelScheme::sentiment3() {
  static const LabelScheme scheme(SchemeName::kSentiment3, {"NEG", "NEU", "POS"},
                                  {{"n", 0}, {"p", 2}, {"none", 1}});
  return scheme;
}

const LabelScheme& LabelScheme::emotion7() {
  static const LabelScheme scheme(
      SchemeName::kEmotion7,
      {"anger", "disgust", "fear", "joy", "sadness", "surprise", "others"},
      {{"neutral", 6}});
  return scheme;
}

const LabelScheme& LabelScheme::get(SchemeName name) {
  return name == SchemeName::kSentiment3 ? sentiment3() : emotion7();
}

std::optional<std::size_t> LabelScheme::find(std::string_view token) const {
  const auto key = ascii_lower(trim(token));
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (ascii_lower(labels_[i]) == key) return i;
  }
  for (const auto& [alias, index] : aliases_) {
    if (alias == key) return index;
  }
  return std::nullopt;
}

Dataset::Dataset(const LabelScheme& scheme, std::string language, Split split,
                 std::vector<LabeledExample> examples)
    : scheme_(&scheme),
      language_(std::move(language)),
      split_(split),
      examples_(std::move(examples)) {
  std::unordered_set<std::string> ids;
  for (const auto& ex : examples_) {
    if (ex.label_index >= scheme.size()) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "label index " + std::to_string(ex.label_index) + " for example '" + ex.id + "'");
    }
    if (trim(ex.text).empty()) {
      throw Error(ErrorCode::kMalformedRow, "empty text for example '" + ex.id + "'");
    }
    if (!ids.insert(ex.id).second) {
      throw Error(ErrorCode::kDuplicateId, ex.id);
    }
  }
}

std::vector<std::string> Dataset::texts() const {
  std::vector<std::string> out;
  out.reserve(examples_.size());
  for (const auto& ex : examples_) out.push_back(ex.text);
  return out;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(examples_.size());
  for (const auto& ex : examples_) out.push_back(ex.label_index);
  return out;
}

bool Dataset::operator==(const Dataset& other) const {
  return *scheme_ == *other.scheme_ && language_ == other.language_ && split_ == other.split_ &&
         examples_ == other.examples_;
}

Dataset load_dataset(const std::filesystem::path& path, const LabelScheme& scheme,
                     std::string language, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());

  std::vector<LabeledExample> examples;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  bool first_row = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.empty()) continue;

    const auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw Error(ErrorCode::kMalformedRow, "line " + std::to_string(line_no) + ": expected 3 " +
                                                "tab-separated columns, got " +
                                                std::to_string(cols.size()));
    }
    const auto label = scheme.find(cols[2]);
    if (first_row) {
      first_row = false;
      if (!label) continue;  // header
    }
    if (!label) {
      throw Error(ErrorCode::kUnknownLabel,
                  "line " + std::to_string(line_no) + ": '" + std::string(cols[2]) + "'");
    }
    if (trim(cols[0]).empty() || trim(cols[1]).empty()) {
      throw Error(ErrorCode::kMalformedRow,
                  "line " + std::to_string(line_no) + ": empty id or text");
    }
    std::string id(cols[0]);
    if (!ids.insert(id).second) throw Error(ErrorCode::kDuplicateId, id);
    examples.push_back({std::move(id), std::string(cols[1]), *label});
  }
  return Dataset(scheme, std::move(language), split, std::move(examples));
}

DatasetStats dataset_stats(const Dataset& ds) {
  DatasetStats stats;
  const auto k = ds.scheme().size();
  stats.per_class.assign(k, 0);
  stats.per_class_fraction.assign(k, 0.0);
  for (const auto& ex : ds.examples()) {
    ++stats.per_class[ex.label_index];
    ++stats.total;
  }
  if (stats.total > 0) {
    for (std::size_t c = 0; c < k; ++c) {
      stats.per_class_fraction[c] =
          static_cast<double>(stats.per_class[c]) / static_cast<double>(stats.total);
    }
  }
  return stats;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double heldout_fraction,
                                             std::uint64_t seed) {
  if (!(heldout_fraction >= 0.0 && heldout_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "heldout_fraction must lie in [0, 1]");
  }
  const auto k = ds.scheme().size();
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    members[ds.examples()[i].label_index].push_back(i);
  }

  std::vector<std::size_t> held(k);
  for (std::size_t c = 0; c < k; ++c) {
    held[c] = static_cast<std::size_t>(
        round_half_away(static_cast<double>(members[c].size()) * heldout_fraction));
  }
  const auto target = static_cast<std::size_t>(
      round_half_away(static_cast<double>(ds.size()) * heldout_fraction));

  // Adjust toward the global target, one example at a time, from the largest
  // class that can still give or take one (lowest index on ties).
  auto total_held = std::accumulate(held.begin(), held.end(), std::size_t{0});
  while (total_held != target) {
    const bool pad = total_held < target;
    std::optional<std::size_t> pick;
    for (std::size_t c = 0; c < k; ++c) {
      const bool ok = pad ? held[c] < members[c].size() : held[c] > 0;
      if (ok && (!pick || members[c].size() > members[*pick].size())) pick = c;
    }
    if (!pick) break;
    if (pad) {
      ++held[*pick];
      ++total_held;
    } else {
      --held[*pick];
      --total_held;
    }
  }

  Rng rng(seed);
  std::vector<bool> is_held(ds.size(), false);
  for (std::size_t c = 0; c < k; ++c) {
    auto order = members[c];
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t j = 0; j < held[c]; ++j) is_held[order[j]] = true;
  }

  std::vector<LabeledExample> kept;
  std::vector<LabeledExample> heldout;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (is_held[i] ? heldout : kept).push_back(ds.examples()[i]);
  }
  return {Dataset(ds.scheme(), ds.language(), ds.split(), std::move(kept)),
          Dataset(ds.scheme(), ds.language(), Split::kOther, std::move(heldout))};
}

std::string render_stats_text(const DatasetStats& stats, const LabelScheme& scheme) {
  std::ostringstream out;
  out << "total\t" << stats.total << '\n';
  for (std::size_t c = 0; c < scheme.size(); ++c) {
    char frac[32];
    std::snprintf(frac, sizeof frac, "%.4f", stats.per_class_fraction[c]);
    out << scheme.label(c) << '\t' << stats.per_class[c] << '\t' << frac << '\n';
  }
  return out.str();
}

nlohmann::json stats_to_json(const DatasetStats& stats, const LabelScheme& scheme) {
  nlohmann::json per_class = nlohmann::json::object();
  nlohmann::json fractions = nlohmann::json::object();
  for (std::size_t c = 0; c < scheme.size(); ++c) {
    per_class[scheme.label(c)] = stats.per_class[c];
    fractions[scheme.label(c)] = stats.per_class_fraction[c];
  }
  return {{"scheme", to_string(scheme.name())},
          {"total", stats.total},
          {"per_class", per_class},
          {"per_class_fraction", fractions}};
}

}  // namespace sentipipe
