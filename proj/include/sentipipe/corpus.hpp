#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace sentipipe {

enum class SchemeName { kSentiment3, kEmotion7 };
enum class Split { kTrain, kTest, kOther };

std::string to_string(SchemeName name);
std::string to_string(Split split);
Split parse_split(std::string_view text);

// Ordered label set. Label indices are positions in labels().
class LabelScheme {
 public:
  static const LabelScheme& sentiment3();  // NEG, NEU, POS
  static const LabelScheme& emotion7();    // anger ... surprise, others
  static const LabelScheme& get(SchemeName name);

  SchemeName name() const { return name_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  const std::string& label(std::size_t index) const { return labels_.at(index); }

  // Case-insensitive match against label names and the alias table.
  std::optional<std::size_t> find(std::string_view token) const;

  bool operator==(const LabelScheme& other) const { return name_ == other.name_; }

 private:
  LabelScheme(SchemeName name, std::vector<std::string> labels,
              std::vector<std::pair<std::string, std::size_t>> aliases);

  SchemeName name_;
  std::vector<std::string> labels_;
  std::vector<std::pair<std::string, std::size_t>> aliases_;
};

struct LabeledExample {
  std::string id;
  std::string text;
  std::size_t label_index = 0;

  bool operator==(const LabeledExample&) const = default;
};

class Dataset {
 public:
  Dataset(const LabelScheme& scheme, std::string language, Split split,
          std::vector<LabeledExample> examples = {});

  const LabelScheme& scheme() const { return *scheme_; }
  const std::string& language() const { return language_; }
  Split split() const { return split_; }
  const std::vector<LabeledExample>& examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }

  std::vector<std::string> texts() const;
  std::vector<std::size_t> labels() const;

  bool operator==(const Dataset& other) const;

 private:
  const LabelScheme* scheme_;
  std::string language_;
  Split split_;
  std::vector<LabeledExample> examples_;
};

struct DatasetStats {
  std::size_t total = 0;
  std::vector<std::size_t> per_class;
  std::vector<double> per_class_fraction;
};

// Reads `id<TAB>text<TAB>label` rows. A first row whose label column matches
// no scheme label is treated as a header and skipped. Blank lines are ignored.
Dataset load_dataset(const std::filesystem::path& path, const LabelScheme& scheme,
                     std::string language, Split split);

DatasetStats dataset_stats(const Dataset& ds);

// Returns (kept, heldout). Both preserve input order.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double heldout_fraction,
                                             std::uint64_t seed);

std::string render_stats_text(const DatasetStats& stats, const LabelScheme& scheme);
nlohmann::json stats_to_json(const DatasetStats& stats, const LabelScheme& scheme);

}  // namespace sentipipe
