#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sentipipe/corpus.hpp"
#include "sentipipe/error.hpp"
#include "sentipipe/random.hpp"
#include "test_util.hpp"

using namespace sentipipe;
using sentipipe::testing::TempDir;
using sentipipe::testing::write_file;

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

Dataset random_dataset(Rng& rng, std::size_t n) {
  std::vector<LabeledExample> examples;
  for (std::size_t i = 0; i < n; ++i) {
    examples.push_back({"id" + std::to_string(i), "text " + std::to_string(i),
                        static_cast<std::size_t>(rng.uniform_index(3))});
  }
  return Dataset(LabelScheme::sentiment3(), "es", Split::kTrain, std::move(examples));
}

}  // namespace

TEST_CASE("label schemes have fixed order") {
  CHECK(LabelScheme::sentiment3().labels() == std::vector<std::string>{"NEG", "NEU", "POS"});
  CHECK(LabelScheme::emotion7().labels() ==
        std::vector<std::string>{"anger", "disgust", "fear", "joy", "sadness", "surprise",
                                 "others"});
}

TEST_CASE("label lookup is case-insensitive with aliases") {
  const auto& s = LabelScheme::sentiment3();
  CHECK(s.find("pos") == 2u);
  CHECK(s.find("P") == 2u);
  CHECK(s.find("N") == 0u);
  CHECK(s.find("NONE") == 1u);
  CHECK(s.find("neu") == 1u);
  CHECK_FALSE(s.find("HAPPY").has_value());
  const auto& e = LabelScheme::emotion7();
  CHECK(e.find("neutral") == 6u);
  CHECK(e.find("Others") == 6u);
  CHECK(e.find("JOY") == 3u);
}

TEST_CASE("load_dataset maps labels in file order") {
  TempDir dir;
  const auto path = write_file(dir / "a.tsv", "t1\tgreat day\tPOS\nt2\tawful\tNEG\n");
  const auto ds = load_dataset(path, LabelScheme::sentiment3(), "es", Split::kTrain);
  REQUIRE(ds.size() == 2);
  CHECK(ds.labels() == std::vector<std::size_t>{2, 0});
  CHECK(ds.examples()[0].id == "t1");
  CHECK(ds.examples()[0].text == "great day");
  CHECK(ds.language() == "es");
  CHECK(ds.split() == Split::kTrain);
}

TEST_CASE("load_dataset skips a header row and accepts CRLF") {
  TempDir dir;
  const auto path = write_file(dir / "a.tsv", "id\ttext\tlabel\r\nx\thola\tP\r\ny\tchau\tnone\r\n");
  const auto ds = load_dataset(path, LabelScheme::sentiment3(), "es", Split::kTest);
  CHECK(ds.labels() == std::vector<std::size_t>{2, 1});
  CHECK(ds.examples()[1].text == "chau");
}

TEST_CASE("load_dataset errors") {
  TempDir dir;
  const auto& scheme = LabelScheme::sentiment3();
  SUBCASE("unknown label reports its line") {
    const auto path = write_file(dir / "a.tsv", "1\tok\tPOS\n2\tyay\tHAPPY\n");
    try {
      load_dataset(path, scheme, "en", Split::kTrain);
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kUnknownLabel);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
      CHECK(std::string(e.what()).find("HAPPY") != std::string::npos);
    }
  }
  SUBCASE("tab inside text is a malformed row") {
    const auto path = write_file(dir / "a.tsv", "1\tok\tPOS\n2\tbad\ttext\tNEG\n");
    CHECK(error_of([&] { load_dataset(path, scheme, "en", Split::kTrain); }) ==
          ErrorCode::kMalformedRow);
  }
  SUBCASE("empty text") {
    const auto path = write_file(dir / "a.tsv", "1\tok\tPOS\n2\t   \tNEG\n");
    CHECK(error_of([&] { load_dataset(path, scheme, "en", Split::kTrain); }) ==
          ErrorCode::kMalformedRow);
  }
  SUBCASE("duplicate id") {
    const auto path = write_file(dir / "a.tsv", "1\tok\tPOS\n1\tagain\tNEG\n");
    CHECK(error_of([&] { load_dataset(path, scheme, "en", Split::kTrain); }) ==
          ErrorCode::kDuplicateId);
  }
  SUBCASE("missing file") {
    CHECK(error_of([&] { load_dataset(dir / "nope.tsv", scheme, "en", Split::kTrain); }) ==
          ErrorCode::kMissingFile);
  }
}

TEST_CASE("reloading a file yields an equal dataset and stats match row count") {
  TempDir dir;
  Rng rng(3);
  std::string content = "id\ttext\tlabel\n";
  const std::size_t rows = 57;
  for (std::size_t i = 0; i < rows; ++i) {
    content += "r" + std::to_string(i) + "\tsome text " + std::to_string(i) + "\t" +
               LabelScheme::emotion7().label(rng.uniform_index(7)) + "\n";
  }
  const auto path = write_file(dir / "e.tsv", content);
  const auto a = load_dataset(path, LabelScheme::emotion7(), "en", Split::kTrain);
  const auto b = load_dataset(path, LabelScheme::emotion7(), "en", Split::kTrain);
  CHECK(a == b);
  const auto stats = dataset_stats(a);
  std::size_t sum = 0;
  for (auto c : stats.per_class) sum += c;
  CHECK(sum == rows);
}

TEST_CASE("dataset_stats") {
  const auto& s = LabelScheme::sentiment3();
  SUBCASE("empty") {
    const auto stats = dataset_stats(Dataset(s, "es", Split::kTrain));
    CHECK(stats.total == 0);
    CHECK(stats.per_class == std::vector<std::size_t>{0, 0, 0});
    CHECK(stats.per_class_fraction == std::vector<double>{0, 0, 0});
  }
  SUBCASE("hand count") {
    const Dataset ds(s, "es", Split::kTrain,
                     {{"a", "x", 2}, {"b", "y", 2}, {"c", "z", 0}});
    const auto stats = dataset_stats(ds);
    CHECK(stats.total == 3);
    CHECK(stats.per_class == std::vector<std::size_t>{1, 0, 2});
    CHECK(stats.per_class_fraction[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(stats.per_class_fraction[1] == 0.0);
    CHECK(stats.per_class_fraction[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("train plus test totals add up (Spanish sentiment sizes)") {
    std::vector<LabeledExample> all;
    for (std::size_t i = 0; i < 7245 + 7264; ++i) all.push_back({std::to_string(i), "t", i % 3});
    const auto stats = dataset_stats(Dataset(s, "es", Split::kOther, std::move(all)));
    CHECK(stats.total == 14509);
    double frac = 0.0;
    for (double f : stats.per_class_fraction) frac += f;
    CHECK(std::abs(frac - 1.0) < 1e-9);
  }
}

TEST_CASE("stratified_split examples") {
  const auto& s = LabelScheme::sentiment3();
  std::vector<LabeledExample> ex;
  for (std::size_t i = 0; i < 30; ++i) ex.push_back({"e" + std::to_string(i), "t", i % 3});
  const Dataset ds(s, "en", Split::kTrain, ex);

  SUBCASE("fraction 0") {
    const auto [kept, held] = stratified_split(ds, 0.0, 1);
    CHECK(kept.examples() == ds.examples());
    CHECK(held.empty());
  }
  SUBCASE("30 balanced, one third") {
    // Per class: round(10/3) = 3, total 9; global target round(30/3) = 10, so
    // the first of the tied largest classes takes one more.
    const auto [kept, held] = stratified_split(ds, 1.0 / 3.0, 5);
    CHECK(held.size() == 10);
    CHECK(dataset_stats(held).per_class == std::vector<std::size_t>{4, 3, 3});
    CHECK(kept.size() == 20);
  }
  SUBCASE("same seed, same partition") {
    const auto a = stratified_split(ds, 0.4, 17);
    const auto b = stratified_split(ds, 0.4, 17);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }
  SUBCASE("out-of-range fraction") {
    CHECK(error_of([&] { stratified_split(ds, 1.5, 0); }) == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("stratified_split property: disjoint cover obeying the rounding rule") {
  Rng rng(2024);
  const auto round_half_away = [](double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); };
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_index(60));
    const auto ds = random_dataset(rng, n);
    const double f = static_cast<double>(rng.uniform_index(101)) / 100.0;
    const auto [kept, held] = stratified_split(ds, f, trial);

    std::set<std::string> ids_kept;
    std::set<std::string> ids_held;
    for (const auto& e : kept.examples()) ids_kept.insert(e.id);
    for (const auto& e : held.examples()) ids_held.insert(e.id);
    std::set<std::string> all;
    for (const auto& e : ds.examples()) all.insert(e.id);
    std::set<std::string> both;
    std::set_intersection(ids_kept.begin(), ids_kept.end(), ids_held.begin(), ids_held.end(),
                          std::inserter(both, both.begin()));
    CHECK(both.empty());
    std::set<std::string> uni(ids_kept);
    uni.insert(ids_held.begin(), ids_held.end());
    CHECK(uni == all);

    // The held-out size hits the global target; per-class deviations from
    // the per-class rounding only account for the difference.
    const auto counts = dataset_stats(ds).per_class;
    const auto held_counts = dataset_stats(held).per_class;
    std::size_t rounded_sum = 0;
    std::size_t deviation = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      const auto r = round_half_away(static_cast<double>(counts[c]) * f);
      rounded_sum += r;
      deviation += r > held_counts[c] ? r - held_counts[c] : held_counts[c] - r;
      CHECK(held_counts[c] <= counts[c]);
    }
    const auto target = round_half_away(static_cast<double>(n) * f);
    CHECK(held.size() == target);
    CHECK(deviation == (rounded_sum > target ? rounded_sum - target : target - rounded_sum));
  }
}

TEST_CASE("stats renderings") {
  const Dataset ds(LabelScheme::sentiment3(), "es", Split::kTrain,
                   {{"a", "x", 2}, {"b", "y", 2}, {"c", "z", 0}});
  const auto stats = dataset_stats(ds);
  const auto text = render_stats_text(stats, ds.scheme());
  CHECK(text == "total\t3\nNEG\t1\t0.3333\nNEU\t0\t0.0000\nPOS\t2\t0.6667\n");
  const auto doc = stats_to_json(stats, ds.scheme());
  CHECK(doc["total"] == 3);
  CHECK(doc["per_class"]["POS"] == 2);
  CHECK(doc["scheme"] == "Sentiment3");
}
