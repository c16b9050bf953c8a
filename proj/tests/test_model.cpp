#include <doctest.h>

#include <cmath>

#include "sentipipe/error.hpp"
#include "sentipipe/model.hpp"
#include "sentipipe/random.hpp"

using namespace sentipipe;

namespace {

ModelConfig tiny_config(EncoderKind encoder = EncoderKind::kTransformer) {
  ModelConfig c;
  c.encoder = encoder;
  c.vocab_size = 100;
  c.num_classes = 3;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.num_layers = 1;
  c.ffn_dim = 32;
  c.max_len = 16;
  c.dropout_rate = 0.1;
  return c;
}

Tensor& find_tensor(Parameters& p, const std::string& name) {
  for (auto& t : p.tensors) {
    if (t.name == name) return t;
  }
  throw std::runtime_error("no tensor " + name);
}

std::vector<TokenId> random_sequence(Rng& rng, std::size_t len, std::size_t vocab) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(static_cast<TokenId>(kNumReserved + rng.uniform_index(vocab - kNumReserved)));
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.embed_dim = 8;
  c.num_heads = 3;
  try {
    c.validate();
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidConfig);
  }
  c = tiny_config();
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(parse_encoder("lstm"), Error);
  CHECK(model_config_from_json(to_json(tiny_config())) == tiny_config());
}

TEST_CASE("tensor layout and parameter count") {
  const auto c = tiny_config();
  const auto p = init_model(c, 1);
  // token 100x16 + position 16x16 + layer (4 LN vectors, 4 attention
  // projections with bias, two FFN projections with bias) + final LN + head.
  const std::size_t layer = 4 * 16 + 4 * (16 * 16 + 16) + (16 * 32 + 32) + (32 * 16 + 16);
  CHECK(layer == 2224);
  CHECK(p.total_size() == 1600 + 256 + layer + 32 + 51);
  CHECK(p.total_size() == 4163);
  CHECK(p.tensors.front().name == "embed.token");
  CHECK(p.tensors.back().name == "head.bias");

  const auto bow = init_model(tiny_config(EncoderKind::kLinearBow), 1);
  CHECK(bow.total_size() == 100 * 3 + 3);
}

TEST_CASE("initialization is seeded") {
  const auto c = tiny_config();
  CHECK(init_model(c, 5) == init_model(c, 5));
  CHECK_FALSE(init_model(c, 5) == init_model(c, 6));
  auto p = init_model(c, 5);
  for (double v : find_tensor(p, "layer0.ln1.gain").values) CHECK(v == 1.0);
  for (double v : find_tensor(p, "layer0.ln1.bias").values) CHECK(v == 0.0);
  // Affine weights lie within +-1/sqrt(fan_in).
  for (double v : find_tensor(p, "layer0.ffn.out.weight").values) {
    CHECK(std::abs(v) <= 1.0 / std::sqrt(32.0));
  }
}

TEST_CASE("softmax examples") {
  const auto probs = [](std::vector<double> z) {
    std::vector<double> out(z.size());
    softmax_row(z, out);
    return out;
  };
  for (double p : probs({0, 0, 0})) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto a = probs({std::log(2.0), 0, 0});
  CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a[1] == doctest::Approx(0.25).epsilon(1e-15));
  const auto big = probs({1000, 0, 0});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] >= 0.0);
}

TEST_CASE("softmax is shift invariant and sums to one") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(6);
    std::vector<double> z(k);
    for (auto& v : z) v = rng.uniform(-20.0, 20.0);
    const double shift = rng.uniform(-50.0, 50.0);
    std::vector<double> shifted(z);
    for (auto& v : shifted) v += shift;
    std::vector<double> p(k);
    std::vector<double> q(k);
    softmax_row(z, p);
    softmax_row(shifted, q);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(std::abs(p[i] - q[i]) < 1e-12);
      CHECK(p[i] >= 0.0);
      sum += p[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("forward shapes and zero head") {
  const auto c = tiny_config();
  auto p = init_model(c, 3);
  Rng rng(1);
  const auto batch = TokenBatch::from_sequences(
      {random_sequence(rng, 5, 100), random_sequence(rng, 9, 100), {kBosId, kEosId}});
  const auto logits = forward(p, c, batch);
  CHECK(logits.rows == 3);
  CHECK(logits.cols == 3);

  for (auto& v : find_tensor(p, "head.weight").values) v = 0.0;
  for (auto& v : find_tensor(p, "head.bias").values) v = 0.0;
  for (double v : forward(p, c, batch).data) CHECK(v == 0.0);
}

TEST_CASE("linear_bow sums token rows plus bias") {
  const auto c = tiny_config(EncoderKind::kLinearBow);
  auto p = init_model(c, 2);
  const auto logits = forward(p, c, TokenBatch::from_sequences({{7}}));
  const auto& w = find_tensor(p, "bow.weight").values;
  const auto& b = find_tensor(p, "bow.bias").values;
  for (std::size_t o = 0; o < 3; ++o) CHECK(logits(0, o) == w[7 * 3 + o] + b[o]);
}

TEST_CASE("padding does not change a row's logits") {
  for (auto encoder : {EncoderKind::kTransformer, EncoderKind::kLinearBow}) {
    const auto c = tiny_config(encoder);
    const auto p = init_model(c, 9);
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      const auto seq = random_sequence(rng, 1 + rng.uniform_index(8), 100);
      const auto alone = forward(p, c, TokenBatch::from_sequences({seq}));
      const auto padded =
          forward(p, c, TokenBatch::from_sequences({seq, random_sequence(rng, 16, 100)}));
      for (std::size_t o = 0; o < 3; ++o) CHECK(alone(0, o) == padded(0, o));
    }
  }
}

TEST_CASE("inference is deterministic and training mode uses dropout") {
  const auto c = tiny_config();
  const auto p = init_model(c, 9);
  Rng rng(2);
  const auto batch =
      TokenBatch::from_sequences({random_sequence(rng, 10, 100), random_sequence(rng, 6, 100)});
  const auto a = forward(p, c, batch);
  CHECK(a == forward(p, c, batch));
  CHECK(TrainingPass(p, c, batch, nullptr).logits() == a);

  Rng d1(77);
  Rng d2(77);
  const auto t1 = TrainingPass(p, c, batch, &d1).logits();
  const auto t2 = TrainingPass(p, c, batch, &d2).logits();
  CHECK(t1 == t2);
  CHECK_FALSE(t1 == a);

  auto no_drop = c;
  no_drop.dropout_rate = 0.0;
  Rng d3(77);
  CHECK(TrainingPass(p, no_drop, batch, &d3).logits() == a);
}

TEST_CASE("shape errors") {
  const auto c = tiny_config();
  const auto p = init_model(c, 1);
  const auto code_of = [](const auto& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  CHECK(code_of([&] { forward(p, c, TokenBatch::from_sequences({std::vector<TokenId>(17, 5)})); }) ==
        ErrorCode::kShapeMismatch);
  CHECK(code_of([&] { forward(p, c, TokenBatch::from_sequences({{100}})); }) ==
        ErrorCode::kShapeMismatch);
  auto other = c;
  other.embed_dim = 32;
  CHECK(code_of([&] { forward(p, other, TokenBatch::from_sequences({{5}})); }) ==
        ErrorCode::kShapeMismatch);
  const TrainingPass pass(p, c, TokenBatch::from_sequences({{5, 6}}), nullptr);
  auto grads = p.zeros_like();
  CHECK(code_of([&] { pass.backward(Matrix(2, 3), grads); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("round_to_storage is idempotent") {
  auto p = init_model(tiny_config(), 4);
  p.round_to_storage();
  auto q = p;
  q.round_to_storage();
  CHECK(p == q);
  for (double v : p.tensors[0].values) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}
