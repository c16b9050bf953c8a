#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace sentipipe {

struct NormalizeOptions {
  std::string user_token = "@USER";
  std::string url_token = "HTTPURL";
  std::size_t max_char_repeat = 3;
  bool lowercase = false;  // ASCII only

  void validate() const;
  bool operator==(const NormalizeOptions&) const = default;
};

nlohmann::json to_json(const NormalizeOptions& opts);
NormalizeOptions normalize_options_from_json(const nlohmann::json& doc);

std::string normalize_tweet(std::string_view text, const NormalizeOptions& opts = {});

// Splits UTF-8 into code point substrings. Invalid bytes come out one per entry.
std::vector<std::string> utf8_chars(std::string_view text);

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr std::size_t kNumReserved = 4;

// Byte-pair-encoding subword model. Symbols are strings; words end with a
// separate end-of-word symbol. Words never contain whitespace, so the marker
// ("\n") and the reserved symbols (leading space) can't be built by a merge.
class BpeModel {
 public:
  static constexpr std::string_view kEndOfWord = "\n";
  static constexpr std::string_view kReservedSymbols[kNumReserved] = {" <pad>", " <unk>", " <s>",
                                                                       " </s>"};

  BpeModel() = default;

  // Builds a model from its parts, validating every invariant.
  BpeModel(std::vector<std::string> alphabet,
           std::vector<std::pair<std::string, std::string>> merges,
           std::unordered_map<std::string, TokenId> vocab);

  const std::vector<std::string>& alphabet() const { return alphabet_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  std::size_t vocab_size() const { return symbols_.size(); }
  const std::string& symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  TokenId id_of(const std::string& symbol) const;  // kUnkId when absent

  // Subword symbols of one whitespace-free word, eow marker included.
  std::vector<std::string> segment_word(std::string_view word) const;

  bool operator==(const BpeModel& other) const {
    return alphabet_ == other.alphabet_ && merges_ == other.merges_ && symbols_ == other.symbols_;
  }

 private:
  std::vector<std::string> alphabet_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::vector<std::string> symbols_;  // id -> symbol
  std::unordered_map<std::string, TokenId> vocab_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

BpeModel train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size);

std::vector<TokenId> encode(const BpeModel& model, std::string_view text, std::size_t max_len);
std::string decode(const BpeModel& model, const std::vector<TokenId>& ids);

nlohmann::json to_json(const BpeModel& model);
BpeModel bpe_from_json(const nlohmann::json& doc);

}  // namespace sentipipe
