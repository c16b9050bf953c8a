#include "sentipipe/textproc.hpp"

#include <algorithm>
#include <set>

#include "sentipipe/error.hpp"

namespace sentipipe {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const auto start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    char c = s[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c != prefix[i]) return false;
  }
  return true;
}

std::string truncate_repeats(std::string_view token, std::size_t max_repeat) {
  std::string out;
  std::string prev;
  std::size_t run = 0;
  for (auto& ch : utf8_chars(token)) {
    run = (ch == prev) ? run + 1 : 1;
    if (run <= max_repeat) out += ch;
    prev = std::move(ch);
  }
  return out;
}

struct PairHash {
  std::size_t operator()(const std::pair<int, int>& p) const noexcept {
    return std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(p.first) << 32) ^
                                      static_cast<std::uint32_t>(p.second));
  }
};

}  // namespace

void NormalizeOptions::validate() const {
  const auto check = [](const std::string& token, const char* what) {
    if (token.empty() || std::any_of(token.begin(), token.end(), is_space)) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string(what) + " must be non-empty and free of whitespace");
    }
  };
  check(user_token, "user_token");
  check(url_token, "url_token");
  if (max_char_repeat < 1) throw Error(ErrorCode::kInvalidArgument, "max_char_repeat must be >= 1");
}

nlohmann::json to_json(const NormalizeOptions& opts) {
  return {{"user_token", opts.user_token},
          {"url_token", opts.url_token},
          {"max_char_repeat", opts.max_char_repeat},
          {"lowercase", opts.lowercase}};
}

NormalizeOptions normalize_options_from_json(const nlohmann::json& doc) {
  NormalizeOptions opts;
  opts.user_token = doc.at("user_token").get<std::string>();
  opts.url_token = doc.at("url_token").get<std::string>();
  opts.max_char_repeat = doc.at("max_char_repeat").get<std::size_t>();
  opts.lowercase = doc.at("lowercase").get<bool>();
  opts.validate();
  return opts;
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead <= 0xF4) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = (lead <= 0xEF) ? 3 : 1;
    } else if (lead >= 0xC2) {
      len = 2;
    }
    if (i + len > text.size()) len = 1;
    for (std::size_t j = 1; j < len; ++j) {
      if ((static_cast<unsigned char>(text[i + j]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string normalize_tweet(std::string_view text, const NormalizeOptions& opts) {
  std::string out;
  for (const auto word : split_whitespace(text)) {
    std::string token;
    if (word.size() > 1 && word.front() == '@') {
      token = opts.user_token;
    } else if (starts_with_ci(word, "http://") || starts_with_ci(word, "https://")) {
      token = opts.url_token;
    } else {
      token = std::string(word);
    }
    // Lowercase before truncating: case folding can create new runs ("aA").
    if (opts.lowercase) {
      for (char& c : token) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      }
    }
    token = truncate_repeats(token, opts.max_char_repeat);
    if (!out.empty()) out += ' ';
    out += token;
  }
  return out;
}

BpeModel::BpeModel(std::vector<std::string> alphabet,
                   std::vector<std::pair<std::string, std::string>> merges,
                   std::unordered_map<std::string, TokenId> vocab)
    : alphabet_(std::move(alphabet)), merges_(std::move(merges)), vocab_(std::move(vocab)) {
  symbols_.assign(vocab_.size(), {});
  std::vector<bool> seen(vocab_.size(), false);
  for (const auto& [symbol, id] : vocab_) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size() || seen[id]) {
      throw Error(ErrorCode::kFormatError, "vocabulary ids are not dense");
    }
    seen[id] = true;
    symbols_[id] = symbol;
  }
  if (symbols_.size() < kNumReserved + 1) {
    throw Error(ErrorCode::kFormatError, "vocabulary lacks reserved symbols");
  }
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    if (symbols_[i] != kReservedSymbols[i]) {
      throw Error(ErrorCode::kFormatError, "reserved symbol mismatch at id " + std::to_string(i));
    }
  }
  const auto require = [this](const std::string& symbol) {
    if (!vocab_.contains(symbol)) {
      throw Error(ErrorCode::kFormatError, "symbol missing from vocabulary: '" + symbol + "'");
    }
  };
  require(std::string(kEndOfWord));
  for (const auto& ch : alphabet_) require(ch);
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [left, right] = merges_[r];
    require(left);
    require(right);
    require(left + right);
    merge_rank_.emplace(merges_[r], r);
  }
}

TokenId BpeModel::id_of(const std::string& symbol) const {
  const auto it = vocab_.find(symbol);
  return it == vocab_.end() ? kUnkId : it->second;
}

std::vector<std::string> BpeModel::segment_word(std::string_view word) const {
  auto symbols = utf8_chars(word);
  symbols.emplace_back(kEndOfWord);
  while (symbols.size() > 1) {
    std::size_t best_rank = merge_rank_.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == merge_rank_.size()) break;
    const auto& [left, right] = merges_[best_rank];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        next.push_back(left + right);
        ++i;
      } else {
        next.push_back(std::move(symbols[i]));
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

BpeModel train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size) {
  std::map<std::string, std::size_t> word_counts;
  std::set<std::string> alphabet;
  for (const auto& text : corpus) {
    for (const auto word : split_whitespace(text)) {
      ++word_counts[std::string(word)];
      for (auto& ch : utf8_chars(word)) alphabet.insert(std::move(ch));
    }
  }
  if (vocab_size <= alphabet.size() + kNumReserved) {
    throw Error(ErrorCode::kVocabTooSmall,
                "vocab_size " + std::to_string(vocab_size) + " <= alphabet size " +
                    std::to_string(alphabet.size()) + " + " + std::to_string(kNumReserved));
  }

  std::vector<std::string> symbols(std::begin(BpeModel::kReservedSymbols),
                                   std::end(BpeModel::kReservedSymbols));
  std::unordered_map<std::string, int> symbol_ids;
  const auto intern = [&](const std::string& s) {
    const auto [it, inserted] = symbol_ids.emplace(s, static_cast<int>(symbols.size()));
    if (inserted) symbols.push_back(s);
    return it->second;
  };
  for (std::size_t i = 0; i < kNumReserved; ++i) symbol_ids.emplace(symbols[i], static_cast<int>(i));
  for (const auto& ch : alphabet) intern(ch);
  const int eow = intern(std::string(BpeModel::kEndOfWord));

  struct Word {
    std::vector<int> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [text, count] : word_counts) {
    Word w{{}, count};
    for (const auto& ch : utf8_chars(text)) w.symbols.push_back(symbol_ids.at(ch));
    w.symbols.push_back(eow);
    words.push_back(std::move(w));
  }

  std::vector<std::pair<std::string, std::string>> merges;
  std::unordered_map<std::pair<int, int>, std::size_t, PairHash> pair_counts;
  while (symbols.size() < vocab_size) {
    pair_counts.clear();
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    const std::pair<int, int>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count ||
          (count == best_count && best != nullptr &&
           std::tie(symbols[pair.first], symbols[pair.second]) <
               std::tie(symbols[best->first], symbols[best->second]))) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < 2) break;

    const auto [left, right] = *best;
    const int merged = intern(symbols[left] + symbols[right]);
    merges.emplace_back(symbols[left], symbols[right]);
    for (auto& w : words) {
      std::vector<int> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
  }

  std::unordered_map<std::string, TokenId> vocab;
  for (std::size_t i = 0; i < symbols.size(); ++i) vocab.emplace(symbols[i], static_cast<TokenId>(i));
  return BpeModel(std::vector<std::string>(alphabet.begin(), alphabet.end()), std::move(merges),
                  std::move(vocab));
}

std::vector<TokenId> encode(const BpeModel& model, std::string_view text, std::size_t max_len) {
  std::vector<TokenId> ids{kBosId};
  for (const auto word : split_whitespace(text)) {
    for (const auto& symbol : model.segment_word(word)) ids.push_back(model.id_of(symbol));
  }
  ids.push_back(kEosId);
  if (ids.size() > max_len) {
    if (max_len < 2) {
      ids.resize(max_len);
    } else {
      ids.resize(max_len);
      ids.back() = kEosId;
    }
  }
  return ids;
}

std::string decode(const BpeModel& model, const std::vector<TokenId>& ids) {
  std::string out;
  for (const auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.vocab_size()) {
      throw Error(ErrorCode::kUnknownId, std::to_string(id));
    }
    if (static_cast<std::size_t>(id) < kNumReserved) continue;
    out += model.symbol(id);
  }
  std::replace(out.begin(), out.end(), BpeModel::kEndOfWord.front(), ' ');
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

nlohmann::json to_json(const BpeModel& model) {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [left, right] : model.merges()) merges.push_back({left, right});
  nlohmann::json vocab = nlohmann::json::object();
  for (std::size_t i = 0; i < model.vocab_size(); ++i) {
    vocab[model.symbol(static_cast<TokenId>(i))] = i;
  }
  return {{"alphabet", model.alphabet()}, {"merges", merges}, {"vocab", vocab}};
}

BpeModel bpe_from_json(const nlohmann::json& doc) {
  try {
    auto alphabet = doc.at("alphabet").get<std::vector<std::string>>();
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : doc.at("merges")) {
      if (!m.is_array() || m.size() != 2) throw Error(ErrorCode::kFormatError, "bad merge entry");
      merges.emplace_back(m[0].get<std::string>(), m[1].get<std::string>());
    }
    std::unordered_map<std::string, TokenId> vocab;
    for (const auto& [symbol, id] : doc.at("vocab").items()) vocab.emplace(symbol, id.get<TokenId>());
    return BpeModel(std::move(alphabet), std::move(merges), std::move(vocab));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("tokenizer document: ") + e.what());
  }
}

}  // namespace sentipipe
