#pragma once

// Seeded synthetic tweet corpora for training tests.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sentipipe/corpus.hpp"
#include "sentipipe/random.hpp"

namespace sentipipe::testing {

struct SyntheticSpec {
  std::vector<std::size_t> class_counts;  // examples per class
  std::size_t words_per_example = 8;
  double keyword_prob = 1.0;  // chance each word comes from the class vocabulary
  std::size_t keywords_per_class = 6;
  std::size_t shared_words = 12;
  std::uint64_t seed = 7;
  std::string id_prefix = "syn";
};

inline std::string keyword(std::size_t cls, std::size_t i) {
  static const char* kStems[] = {"zor", "quel", "mip", "dax", "vun", "tesh", "kro"};
  return std::string(kStems[cls % 7]) + static_cast<char>('a' + i);
}

inline std::string filler(std::size_t i) { return "fil" + std::to_string(i); }

// Classes are laid out in blocks, then shuffled.
inline Dataset make_synthetic(const LabelScheme& scheme, const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  std::vector<LabeledExample> examples;
  std::size_t next_id = 0;
  for (std::size_t c = 0; c < spec.class_counts.size(); ++c) {
    for (std::size_t n = 0; n < spec.class_counts[c]; ++n) {
      std::string text;
      bool has_keyword = false;
      for (std::size_t w = 0; w < spec.words_per_example; ++w) {
        std::string word;
        const bool last = w + 1 == spec.words_per_example;
        if (rng.uniform() < spec.keyword_prob || (last && !has_keyword && spec.keyword_prob >= 1.0)) {
          word = keyword(c, rng.uniform_index(spec.keywords_per_class));
          has_keyword = true;
        } else {
          word = filler(rng.uniform_index(spec.shared_words));
        }
        if (!text.empty()) text += ' ';
        text += word;
      }
      examples.push_back({spec.id_prefix + std::to_string(next_id++), text, c});
    }
  }
  rng.shuffle(std::span<LabeledExample>(examples));
  return Dataset(scheme, "en", Split::kTrain, std::move(examples));
}

}  // namespace sentipipe::testing
