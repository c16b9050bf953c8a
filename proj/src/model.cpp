#include "sentipipe/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sentipipe/error.hpp"

namespace sentipipe {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr std::size_t kPerLayer = 16;

// Offsets within one transformer layer's block of tensors.
enum LayerSlot : std::size_t {
  kLn1Gain, kLn1Bias, kQueryW, kQueryB, kKeyW, kKeyB, kValueW, kValueB,
  kOutW, kOutB, kLn2Gain, kLn2Bias, kFfn1W, kFfn1B, kFfn2W, kFfn2B,
};

std::size_t layer_tensor(std::size_t layer, LayerSlot slot) { return 2 + layer * kPerLayer + slot; }
std::size_t final_tensor(const ModelConfig& c, std::size_t offset) {
  return 2 + c.num_layers * kPerLayer + offset;
}

// y[n x out] = x[n x in] * W[in x out] + b
Matrix affine(const Matrix& x, const std::vector<double>& w, const std::vector<double>& b,
              std::size_t out) {
  Matrix y(x.rows, out);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto yr = y.row(r);
    std::copy(b.begin(), b.end(), yr.begin());
    for (std::size_t i = 0; i < x.cols; ++i) {
      const double xi = x(r, i);
      const double* wi = w.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
    }
  }
  return y;
}

// Accumulates dW, db and returns dx.
Matrix affine_backward(const Matrix& x, const std::vector<double>& w, const Matrix& dy,
                       std::vector<double>& dw, std::vector<double>& db) {
  const std::size_t out = dy.cols;
  Matrix dx(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const auto dyr = dy.row(r);
    for (std::size_t o = 0; o < out; ++o) db[o] += dyr[o];
    for (std::size_t i = 0; i < x.cols; ++i) {
      const double xi = x(r, i);
      const double* wi = w.data() + i * out;
      double* dwi = dw.data() + i * out;
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        dwi[o] += xi * dyr[o];
        acc += wi[o] * dyr[o];
      }
      dx(r, i) = acc;
    }
  }
  return dx;
}

struct LayerNormCache {
  Matrix normalized;
  std::vector<double> inv_std;
};

Matrix layer_norm(const Matrix& x, const std::vector<double>& gain, const std::vector<double>& bias,
                  LayerNormCache& cache) {
  const std::size_t d = x.cols;
  Matrix y(x.rows, d);
  cache.normalized = Matrix(x.rows, d);
  cache.inv_std.assign(x.rows, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std[r] = inv_std;
    for (std::size_t i = 0; i < d; ++i) {
      const double n = (xr[i] - mean) * inv_std;
      cache.normalized(r, i) = n;
      y(r, i) = gain[i] * n + bias[i];
    }
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const std::vector<double>& gain,
                           const LayerNormCache& cache, std::vector<double>& dgain,
                           std::vector<double>& dbias) {
  const std::size_t d = dy.cols;
  Matrix dx(dy.rows, d);
  std::vector<double> dn(d);
  for (std::size_t r = 0; r < dy.rows; ++r) {
    double mean_dn = 0.0;
    double mean_dn_n = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double n = cache.normalized(r, i);
      dgain[i] += dy(r, i) * n;
      dbias[i] += dy(r, i);
      dn[i] = dy(r, i) * gain[i];
      mean_dn += dn[i];
      mean_dn_n += dn[i] * n;
    }
    mean_dn /= static_cast<double>(d);
    mean_dn_n /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
      dx(r, i) = cache.inv_std[r] * (dn[i] - mean_dn - cache.normalized(r, i) * mean_dn_n);
    }
  }
  return dx;
}

// tanh approximation of GELU
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

// Scale factors (0 or 1/(1-p)) for inverted dropout; empty when inactive.
std::vector<double> dropout_mask(std::size_t size, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return {};
  std::vector<double> mask(size);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = rng->uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

void apply_mask(Matrix& x, const std::vector<double>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] *= mask[i];
}

struct LayerCache {
  Matrix input;
  LayerNormCache ln1;
  Matrix h1, q, k, v;
  std::vector<Matrix> attention;  // per head, n x n
  Matrix context;
  std::vector<double> attn_dropout;
  Matrix mid;
  LayerNormCache ln2;
  Matrix h2, pre_act, act;
  std::vector<double> ffn_dropout;
};

struct SequenceCache {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> positions;
  std::vector<double> embed_dropout;
  std::vector<LayerCache> layers;
  LayerNormCache final_ln;
  Matrix final_out;
  std::vector<double> pooled;
};

void check_shapes(const Parameters& params, const ModelConfig& config) {
  const auto layout = tensor_layout(config);
  if (params.tensors.size() != layout.size()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter tensor count does not match config");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = params.tensors[i];
    std::size_t expected = 1;
    for (auto s : layout[i].shape) expected *= s;
    if (t.shape != layout[i].shape || t.values.size() != expected) {
      throw Error(ErrorCode::kShapeMismatch, "tensor '" + layout[i].name + "' has wrong shape");
    }
  }
}

void check_batch(const ModelConfig& config, const TokenBatch& batch) {
  if (batch.ids.size() != batch.rows * batch.cols || batch.mask.size() != batch.ids.size()) {
    throw Error(ErrorCode::kShapeMismatch, "token batch buffers do not match rows x cols");
  }
  if (batch.cols > config.max_len) {
    throw Error(ErrorCode::kShapeMismatch, "batch width " + std::to_string(batch.cols) +
                                               " exceeds max_len " +
                                               std::to_string(config.max_len));
  }
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    if (batch.mask[i] == 0) continue;
    const auto id = batch.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw Error(ErrorCode::kShapeMismatch, "token id " + std::to_string(id) + " out of range");
    }
  }
}

}  // namespace

std::string to_string(EncoderKind kind) {
  return kind == EncoderKind::kTransformer ? "transformer" : "linear_bow";
}

EncoderKind parse_encoder(const std::string& text) {
  if (text == "transformer") return EncoderKind::kTransformer;
  if (text == "linear_bow") return EncoderKind::kLinearBow;
  throw Error(ErrorCode::kInvalidConfig, "unknown encoder '" + text + "'");
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& reason) {
    throw Error(ErrorCode::kInvalidConfig, reason);
  };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (max_len < 2) fail("max_len must be >= 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (encoder == EncoderKind::kLinearBow) return;
  if (embed_dim < 1 || num_heads < 1) fail("embed_dim and num_heads must be >= 1");
  if (embed_dim % num_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (ffn_dim < 1) fail("ffn_dim must be >= 1");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"encoder", to_string(c.encoder)}, {"vocab_size", c.vocab_size},
          {"num_classes", c.num_classes},    {"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},        {"num_layers", c.num_layers},
          {"ffn_dim", c.ffn_dim},            {"max_len", c.max_len},
          {"dropout_rate", c.dropout_rate}};
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  ModelConfig c;
  c.encoder = parse_encoder(doc.at("encoder").get<std::string>());
  c.vocab_size = doc.at("vocab_size").get<std::size_t>();
  c.num_classes = doc.at("num_classes").get<std::size_t>();
  c.embed_dim = doc.at("embed_dim").get<std::size_t>();
  c.num_heads = doc.at("num_heads").get<std::size_t>();
  c.num_layers = doc.at("num_layers").get<std::size_t>();
  c.ffn_dim = doc.at("ffn_dim").get<std::size_t>();
  c.max_len = doc.at("max_len").get<std::size_t>();
  c.dropout_rate = doc.at("dropout_rate").get<double>();
  c.validate();
  return c;
}

std::size_t Parameters::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

Parameters Parameters::zeros_like() const {
  Parameters out;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) {
    out.tensors.push_back({t.name, t.shape, std::vector<double>(t.values.size(), 0.0)});
  }
  return out;
}

void Parameters::round_to_storage() {
  for (auto& t : tensors) {
    for (auto& v : t.values) v = static_cast<double>(static_cast<float>(v));
  }
}

std::vector<TensorSpec> tensor_layout(const ModelConfig& c) {
  if (c.encoder == EncoderKind::kLinearBow) {
    return {{"bow.weight", {c.vocab_size, c.num_classes}}, {"bow.bias", {c.num_classes}}};
  }
  const auto d = c.embed_dim;
  std::vector<TensorSpec> layout{{"embed.token", {c.vocab_size, d}},
                                 {"embed.position", {c.max_len, d}}};
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto p = "layer" + std::to_string(l) + ".";
    layout.push_back({p + "ln1.gain", {d}});
    layout.push_back({p + "ln1.bias", {d}});
    layout.push_back({p + "attn.query.weight", {d, d}});
    layout.push_back({p + "attn.query.bias", {d}});
    layout.push_back({p + "attn.key.weight", {d, d}});
    layout.push_back({p + "attn.key.bias", {d}});
    layout.push_back({p + "attn.value.weight", {d, d}});
    layout.push_back({p + "attn.value.bias", {d}});
    layout.push_back({p + "attn.out.weight", {d, d}});
    layout.push_back({p + "attn.out.bias", {d}});
    layout.push_back({p + "ln2.gain", {d}});
    layout.push_back({p + "ln2.bias", {d}});
    layout.push_back({p + "ffn.in.weight", {d, c.ffn_dim}});
    layout.push_back({p + "ffn.in.bias", {c.ffn_dim}});
    layout.push_back({p + "ffn.out.weight", {c.ffn_dim, d}});
    layout.push_back({p + "ffn.out.bias", {d}});
  }
  layout.push_back({"final_ln.gain", {d}});
  layout.push_back({"final_ln.bias", {d}});
  layout.push_back({"head.weight", {d, c.num_classes}});
  layout.push_back({"head.bias", {c.num_classes}});
  return layout;
}

Parameters init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Parameters params;
  const auto layout = tensor_layout(config);
  // Biases share the fan-in of the weight tensor preceding them.
  std::size_t fan_in = 1;
  bool after_gain = false;
  for (const auto& spec : layout) {
    std::size_t size = 1;
    for (auto s : spec.shape) size *= s;
    Tensor t{spec.name, spec.shape, std::vector<double>(size, 0.0)};
    const auto ends_with = [&](std::string_view suffix) {
      return spec.name.size() >= suffix.size() &&
             spec.name.compare(spec.name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    const bool is_gain = ends_with(".gain");
    if (spec.name.starts_with("embed.")) {
      for (auto& v : t.values) v = rng.normal(0.0, 0.02);
    } else if (is_gain) {
      std::fill(t.values.begin(), t.values.end(), 1.0);
    } else if (after_gain) {
      // layer-norm bias stays zero
    } else {
      if (spec.shape.size() == 2) fan_in = spec.shape[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.values) v = rng.uniform(-bound, bound);
    }
    after_gain = is_gain;
    params.tensors.push_back(std::move(t));
  }
  return params;
}

TokenBatch TokenBatch::from_sequences(const std::vector<std::vector<TokenId>>& sequences) {
  TokenBatch batch;
  batch.rows = sequences.size();
  for (const auto& s : sequences) batch.cols = std::max(batch.cols, s.size());
  batch.ids.assign(batch.rows * batch.cols, kPadId);
  batch.mask.assign(batch.rows * batch.cols, 0);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t c = 0; c < sequences[r].size(); ++c) {
      batch.ids[r * batch.cols + c] = sequences[r][c];
      batch.mask[r * batch.cols + c] = 1;
    }
  }
  return batch;
}

void softmax_row(std::span<const double> logits, std::span<double> out) {
  const double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
}

Probabilities softmax(const Logits& logits) {
  Probabilities p(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) softmax_row(logits.row(r), p.row(r));
  return p;
}

struct TrainingPass::Impl {
  const Parameters* params;
  const ModelConfig* config;
  std::vector<SequenceCache> sequences;

  std::vector<double> forward_sequence(SequenceCache& s, Rng* rng) const;
  void backward_sequence(const SequenceCache& s, std::span<const double> dlogits,
                         Parameters& grads) const;
};

std::vector<double> TrainingPass::Impl::forward_sequence(SequenceCache& s, Rng* rng) const {
  const auto& c = *config;
  const auto& t = params->tensors;
  const std::size_t n = s.tokens.size();
  const std::size_t k_out = c.num_classes;

  if (c.encoder == EncoderKind::kLinearBow) {
    std::vector<double> logits(t[1].values);
    for (const auto tok : s.tokens) {
      const double* row = t[0].values.data() + static_cast<std::size_t>(tok) * k_out;
      for (std::size_t o = 0; o < k_out; ++o) logits[o] += row[o];
    }
    return logits;
  }

  const std::size_t d = c.embed_dim;
  const std::size_t heads = c.num_heads;
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* te = t[0].values.data() + static_cast<std::size_t>(s.tokens[i]) * d;
    const double* pe = t[1].values.data() + s.positions[i] * d;
    for (std::size_t j = 0; j < d; ++j) x(i, j) = te[j] + pe[j];
  }
  s.embed_dropout = dropout_mask(n * d, c.dropout_rate, rng);
  apply_mask(x, s.embed_dropout);

  s.layers.assign(c.num_layers, {});
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    auto& lc = s.layers[l];
    const auto& p = [&](LayerSlot slot) -> const std::vector<double>& {
      return t[layer_tensor(l, slot)].values;
    };
    lc.input = x;
    lc.h1 = layer_norm(x, p(kLn1Gain), p(kLn1Bias), lc.ln1);
    lc.q = affine(lc.h1, p(kQueryW), p(kQueryB), d);
    lc.k = affine(lc.h1, p(kKeyW), p(kKeyB), d);
    lc.v = affine(lc.h1, p(kValueW), p(kValueB), d);
    lc.context = Matrix(n, d);
    lc.attention.assign(heads, Matrix(n, n));
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      auto& a = lc.attention[h];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += lc.q(i, off + e) * lc.k(j, off + e);
          a(i, j) = dot * scale;
        }
        softmax_row(a.row(i), a.row(i));
        for (std::size_t j = 0; j < n; ++j) {
          const double w = a(i, j);
          for (std::size_t e = 0; e < dh; ++e) lc.context(i, off + e) += w * lc.v(j, off + e);
        }
      }
    }
    Matrix attn_out = affine(lc.context, p(kOutW), p(kOutB), d);
    lc.attn_dropout = dropout_mask(n * d, c.dropout_rate, rng);
    apply_mask(attn_out, lc.attn_dropout);
    lc.mid = x;
    for (std::size_t i = 0; i < lc.mid.data.size(); ++i) lc.mid.data[i] += attn_out.data[i];

    lc.h2 = layer_norm(lc.mid, p(kLn2Gain), p(kLn2Bias), lc.ln2);
    lc.pre_act = affine(lc.h2, p(kFfn1W), p(kFfn1B), c.ffn_dim);
    lc.act = lc.pre_act;
    for (auto& v : lc.act.data) v = gelu(v);
    Matrix ffn_out = affine(lc.act, p(kFfn2W), p(kFfn2B), d);
    lc.ffn_dropout = dropout_mask(n * d, c.dropout_rate, rng);
    apply_mask(ffn_out, lc.ffn_dropout);
    x = lc.mid;
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += ffn_out.data[i];
  }

  s.final_out = layer_norm(x, t[final_tensor(c, 0)].values, t[final_tensor(c, 1)].values,
                           s.final_ln);
  s.pooled.assign(d, 0.0);
  if (n > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) s.pooled[j] += s.final_out(i, j);
    }
    for (auto& v : s.pooled) v /= static_cast<double>(n);
  }
  const auto& head_w = t[final_tensor(c, 2)].values;
  std::vector<double> logits(t[final_tensor(c, 3)].values);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t o = 0; o < k_out; ++o) logits[o] += s.pooled[j] * head_w[j * k_out + o];
  }
  return logits;
}

void TrainingPass::Impl::backward_sequence(const SequenceCache& s, std::span<const double> dlogits,
                                           Parameters& grads) const {
  const auto& c = *config;
  const auto& t = params->tensors;
  auto& g = grads.tensors;
  const std::size_t n = s.tokens.size();
  const std::size_t k_out = c.num_classes;

  if (c.encoder == EncoderKind::kLinearBow) {
    for (std::size_t o = 0; o < k_out; ++o) g[1].values[o] += dlogits[o];
    for (const auto tok : s.tokens) {
      double* row = g[0].values.data() + static_cast<std::size_t>(tok) * k_out;
      for (std::size_t o = 0; o < k_out; ++o) row[o] += dlogits[o];
    }
    return;
  }

  const std::size_t d = c.embed_dim;
  const std::size_t heads = c.num_heads;
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Head and pooling.
  const auto& head_w = t[final_tensor(c, 2)].values;
  auto& dhead_w = g[final_tensor(c, 2)].values;
  auto& dhead_b = g[final_tensor(c, 3)].values;
  std::vector<double> dpooled(d, 0.0);
  for (std::size_t o = 0; o < k_out; ++o) dhead_b[o] += dlogits[o];
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t o = 0; o < k_out; ++o) {
      dhead_w[j * k_out + o] += s.pooled[j] * dlogits[o];
      dpooled[j] += head_w[j * k_out + o] * dlogits[o];
    }
  }
  if (n == 0) return;
  Matrix dfinal(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) dfinal(i, j) = dpooled[j] / static_cast<double>(n);
  }
  Matrix dx = layer_norm_backward(dfinal, t[final_tensor(c, 0)].values, s.final_ln,
                                  g[final_tensor(c, 0)].values, g[final_tensor(c, 1)].values);

  for (std::size_t l = c.num_layers; l-- > 0;) {
    const auto& lc = s.layers[l];
    const auto& p = [&](LayerSlot slot) -> const std::vector<double>& {
      return t[layer_tensor(l, slot)].values;
    };
    const auto& gp = [&](LayerSlot slot) -> std::vector<double>& {
      return g[layer_tensor(l, slot)].values;
    };

    // x_out = mid + dropout(ffn(ln2(mid)))
    Matrix dffn = dx;
    apply_mask(dffn, lc.ffn_dropout);
    Matrix dact = affine_backward(lc.act, p(kFfn2W), dffn, gp(kFfn2W), gp(kFfn2B));
    for (std::size_t i = 0; i < dact.data.size(); ++i) dact.data[i] *= gelu_grad(lc.pre_act.data[i]);
    Matrix dh2 = affine_backward(lc.h2, p(kFfn1W), dact, gp(kFfn1W), gp(kFfn1B));
    Matrix dmid = layer_norm_backward(dh2, p(kLn2Gain), lc.ln2, gp(kLn2Gain), gp(kLn2Bias));
    for (std::size_t i = 0; i < dmid.data.size(); ++i) dmid.data[i] += dx.data[i];

    // mid = input + dropout(attn(ln1(input)))
    Matrix dattn = dmid;
    apply_mask(dattn, lc.attn_dropout);
    Matrix dcontext = affine_backward(lc.context, p(kOutW), dattn, gp(kOutW), gp(kOutB));
    Matrix dq(n, d), dk(n, d), dv(n, d);
    std::vector<double> da(n);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      const auto& a = lc.attention[h];
      for (std::size_t i = 0; i < n; ++i) {
        double row_dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t e = 0; e < dh; ++e) {
            acc += dcontext(i, off + e) * lc.v(j, off + e);
            dv(j, off + e) += a(i, j) * dcontext(i, off + e);
          }
          da[j] = acc;
          row_dot += acc * a(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double ds = a(i, j) * (da[j] - row_dot) * scale;
          for (std::size_t e = 0; e < dh; ++e) {
            dq(i, off + e) += ds * lc.k(j, off + e);
            dk(j, off + e) += ds * lc.q(i, off + e);
          }
        }
      }
    }
    Matrix dh1 = affine_backward(lc.h1, p(kQueryW), dq, gp(kQueryW), gp(kQueryB));
    const Matrix dh1_k = affine_backward(lc.h1, p(kKeyW), dk, gp(kKeyW), gp(kKeyB));
    const Matrix dh1_v = affine_backward(lc.h1, p(kValueW), dv, gp(kValueW), gp(kValueB));
    for (std::size_t i = 0; i < dh1.data.size(); ++i) dh1.data[i] += dh1_k.data[i] + dh1_v.data[i];
    dx = layer_norm_backward(dh1, p(kLn1Gain), lc.ln1, gp(kLn1Gain), gp(kLn1Bias));
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dmid.data[i];
  }

  apply_mask(dx, s.embed_dropout);
  auto& dtok = g[0].values;
  auto& dpos = g[1].values;
  for (std::size_t i = 0; i < n; ++i) {
    double* te = dtok.data() + static_cast<std::size_t>(s.tokens[i]) * d;
    double* pe = dpos.data() + s.positions[i] * d;
    for (std::size_t j = 0; j < d; ++j) {
      te[j] += dx(i, j);
      pe[j] += dx(i, j);
    }
  }
}

TrainingPass::TrainingPass(const Parameters& params, const ModelConfig& config,
                           const TokenBatch& batch, Rng* dropout_rng)
    : impl_(std::make_unique<Impl>()) {
  config.validate();
  check_shapes(params, config);
  check_batch(config, batch);
  impl_->params = &params;
  impl_->config = &config;
  impl_->sequences.resize(batch.rows);
  logits_ = Logits(batch.rows, config.num_classes);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    auto& s = impl_->sequences[r];
    for (std::size_t col = 0; col < batch.cols; ++col) {
      if (batch.mask[r * batch.cols + col] == 0) continue;
      s.tokens.push_back(batch.ids[r * batch.cols + col]);
      s.positions.push_back(col);
    }
    const auto logits = impl_->forward_sequence(s, dropout_rng);
    std::copy(logits.begin(), logits.end(), logits_.row(r).begin());
  }
}

TrainingPass::~TrainingPass() = default;
TrainingPass::TrainingPass(TrainingPass&&) noexcept = default;
TrainingPass& TrainingPass::operator=(TrainingPass&&) noexcept = default;

void TrainingPass::backward(const Matrix& dlogits, Parameters& grads) const {
  if (dlogits.rows != logits_.rows || dlogits.cols != logits_.cols) {
    throw Error(ErrorCode::kShapeMismatch, "dlogits shape does not match logits");
  }
  check_shapes(grads, *impl_->config);
  for (std::size_t r = 0; r < impl_->sequences.size(); ++r) {
    impl_->backward_sequence(impl_->sequences[r], dlogits.row(r), grads);
  }
}

Logits forward(const Parameters& params, const ModelConfig& config, const TokenBatch& batch) {
  return TrainingPass(params, config, batch, nullptr).logits();
}

}  // namespace sentipipe
