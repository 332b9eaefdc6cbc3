// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tiny pre-norm decoder-only transformer. The token embedding table serves
// both discrete tokens and latent tokens, whose input is the probability-
// weighted mix of embedding rows.
//
// Two forward paths exist: forward_logits() builds the whole causal pass out
// of tensor ops (differentiable, the reference semantics) and DecodeCache
// advances one position at a time with per-layer key/value reuse for rollouts.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lepo/archive.hpp"
#include "lepo/error.hpp"
#include "lepo/rng.hpp"
#include "lepo/sampler.hpp"
#include "lepo/tensor.hpp"

namespace lepo {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMaskedScore = -1e9;

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 256;
  double init_std = 0.02;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size < 4) throw ConfigError("model.vocab_size must be at least 4");
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0) {
      throw ConfigError("model sizes must all be at least 1");
    }
    if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
    if (!(init_std > 0.0)) throw ConfigError("model.init_std must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_query, w_key, w_value, w_out;  // d×d, applied as x·W
  Tensor ln2_gain, ln2_bias;
  Tensor w_ff1, b_ff1;  // d×ff, ff
  Tensor w_ff2, b_ff2;  // ff×d, d
};

struct ModelParams {
  ModelConfig config;
  Tensor token_embeddings;       // |V|×d
  Tensor positional_embeddings;  // max_seq_len×d
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor output_head;  // d×|V|, untied

  /// Handles to every parameter in a fixed order. Handles share storage with
  /// the model, so writes through mutable_data() update it.
  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("token_embeddings", token_embeddings);
    out.emplace_back("positional_embeddings", positional_embeddings);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto p = "layer" + std::to_string(l) + ".";
      const auto& L = layers[l];
      out.emplace_back(p + "ln1_gain", L.ln1_gain);
      out.emplace_back(p + "ln1_bias", L.ln1_bias);
      out.emplace_back(p + "w_query", L.w_query);
      out.emplace_back(p + "w_key", L.w_key);
      out.emplace_back(p + "w_value", L.w_value);
      out.emplace_back(p + "w_out", L.w_out);
      out.emplace_back(p + "ln2_gain", L.ln2_gain);
      out.emplace_back(p + "ln2_bias", L.ln2_bias);
      out.emplace_back(p + "w_ff1", L.w_ff1);
      out.emplace_back(p + "b_ff1", L.b_ff1);
      out.emplace_back(p + "w_ff2", L.w_ff2);
      out.emplace_back(p + "b_ff2", L.b_ff2);
    }
    out.emplace_back("final_gain", final_gain);
    out.emplace_back("final_bias", final_bias);
    out.emplace_back("output_head", output_head);
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.size();
    return n;
  }

  void zero_grad() const {
    for (auto t : tensors()) t.zero_grad();
  }

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = Rng::stream({seed, 0x1417});
    auto normal = [&](Shape s, double std) {
      std::vector<double> v(shape_product(s));
      for (auto& x : v) x = std * rng.normal();
      return Tensor::parameter(std::move(s), std::move(v));
    };
    auto filled = [](Shape s, double value) {
      return Tensor::parameter(s, std::vector<double>(shape_product(s), value));
    };
    const std::size_t d = cfg.d_model;
    // residual projections are scaled down with depth, as in GPT-2
    const double proj_std = cfg.init_std / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    ModelParams p;
    p.config = cfg;
    p.token_embeddings = normal({cfg.vocab_size, d}, cfg.init_std);
    p.positional_embeddings = normal({cfg.max_seq_len, d}, cfg.init_std);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      LayerParams L;
      L.ln1_gain = filled({d}, 1.0);
      L.ln1_bias = filled({d}, 0.0);
      L.w_query = normal({d, d}, cfg.init_std);
      L.w_key = normal({d, d}, cfg.init_std);
      L.w_value = normal({d, d}, cfg.init_std);
      L.w_out = normal({d, d}, proj_std);
      L.ln2_gain = filled({d}, 1.0);
      L.ln2_bias = filled({d}, 0.0);
      L.w_ff1 = normal({d, cfg.d_ff}, cfg.init_std);
      L.b_ff1 = filled({cfg.d_ff}, 0.0);
      L.w_ff2 = normal({cfg.d_ff, d}, proj_std);
      L.b_ff2 = filled({d}, 0.0);
      p.layers.push_back(std::move(L));
    }
    p.final_gain = filled({d}, 1.0);
    p.final_bias = filled({d}, 0.0);
    p.output_head = normal({d, cfg.vocab_size}, cfg.init_std);
    return p;
  }

  /// Deep copy; `trainable` controls requires_grad on the copy.
  ModelParams copy(bool trainable) const {
    ModelParams out = *this;
    auto src = named();
    std::vector<Tensor> fresh;
    for (auto& [name, t] : src) {
      Tensor c = t.detach();
      c.set_requires_grad(trainable);
      fresh.push_back(c);
    }
    out.assign(fresh);
    return out;
  }

  /// Replaces tensors in named() order.
  void assign(const std::vector<Tensor>& values) {
    std::size_t i = 0;
    auto next = [&]() -> Tensor {
      if (i >= values.size()) throw ContractError("ModelParams::assign: too few tensors");
      return values[i++];
    };
    token_embeddings = next();
    positional_embeddings = next();
    for (auto& L : layers) {
      for (Tensor* t : {&L.ln1_gain, &L.ln1_bias, &L.w_query, &L.w_key, &L.w_value, &L.w_out, &L.ln2_gain,
                        &L.ln2_bias, &L.w_ff1, &L.b_ff1, &L.w_ff2, &L.b_ff2}) {
        *t = next();
      }
    }
    final_gain = next();
    final_bias = next();
    output_head = next();
    if (i != values.size()) throw ContractError("ModelParams::assign: too many tensors");
  }

  bool bit_equal(const ModelParams& other) const {
    const auto a = tensors();
    const auto b = other.tensors();
    if (a.size() != b.size() || !(config == other.config)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].shape() != b[i].shape()) return false;
      if (std::memcmp(a[i].data().data(), b[i].data().data(), a[i].size() * sizeof(double)) != 0) return false;
    }
    return true;
  }
};

/// Frozen copy used as the KL anchor; never receives gradients.
inline ModelParams snapshot_reference(const ModelParams& params) { return params.copy(false); }

enum class InputOrigin { prompt_token, latent, discrete_token };

/// Input vectors (embedding plus position) fed to the transformer.
struct EmbeddingSequence {
  Tensor vectors;  // T×d
  std::vector<InputOrigin> origins;

  std::size_t length() const { return origins.size(); }
};

inline EmbeddingSequence empty_sequence(const ModelParams& params) {
  return {Tensor(Shape{0, params.config.d_model}), {}};
}

inline EmbeddingSequence append(const EmbeddingSequence& a, const EmbeddingSequence& b) {
  if (a.length() == 0) return b;
  if (b.length() == 0) return a;
  const std::vector<Tensor> parts{a.vectors, b.vectors};
  EmbeddingSequence out{concat_rows(parts), a.origins};
  out.origins.insert(out.origins.end(), b.origins.begin(), b.origins.end());
  return out;
}

namespace detail {
inline void require_positions(const ModelParams& params, std::size_t end) {
  if (end > params.config.max_seq_len) {
    throw CapacityError("sequence of length " + std::to_string(end) + " exceeds max_seq_len " +
                        std::to_string(params.config.max_seq_len));
  }
}
}  // namespace detail

/// Token rows plus positional rows for positions [start, start + ids.size()).
inline EmbeddingSequence embed_tokens(const ModelParams& params, std::span<const std::size_t> ids,
                                      std::size_t start = 0, InputOrigin origin = InputOrigin::prompt_token) {
  for (auto id : ids) {
    if (id >= params.config.vocab_size) {
      throw ContractError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                          std::to_string(params.config.vocab_size));
    }
  }
  if (ids.empty()) return empty_sequence(params);
  detail::require_positions(params, start + ids.size());
  const Tensor tokens = gather_rows(params.token_embeddings, ids);
  const Tensor positions = slice_rows(params.positional_embeddings, start, start + ids.size());
  return {add(tokens, positions), std::vector<InputOrigin>(ids.size(), origin)};
}

/// Σ_k z_k·e_k as a 1×d row. z is a constant; gradients reach the table only.
inline Tensor expectation_embedding(const ModelParams& params, const LatentToken& z) {
  if (z.z.size() != params.config.vocab_size) {
    throw ContractError("latent token has " + std::to_string(z.z.size()) + " entries, vocabulary has " +
                        std::to_string(params.config.vocab_size));
  }
  if (!z.on_simplex()) throw ContractError("expectation_embedding: latent token is off the simplex");
  return matmul(Tensor::matrix(1, z.z.size(), z.z), params.token_embeddings);
}

/// Expectation embeddings of consecutive latent tokens starting at `start`.
inline EmbeddingSequence embed_latents(const ModelParams& params, std::span<const LatentToken> latents,
                                       std::size_t start) {
  if (latents.empty()) return empty_sequence(params);
  detail::require_positions(params, start + latents.size());
  const std::size_t v = params.config.vocab_size;
  std::vector<double> rows;
  rows.reserve(latents.size() * v);
  for (const auto& z : latents) {
    if (z.z.size() != v) throw ContractError("latent token size does not match vocabulary");
    if (!z.on_simplex()) throw ContractError("embed_latents: latent token is off the simplex");
    rows.insert(rows.end(), z.z.begin(), z.z.end());
  }
  const Tensor mix = matmul(Tensor::matrix(latents.size(), v, std::move(rows)), params.token_embeddings);
  const Tensor positions = slice_rows(params.positional_embeddings, start, start + latents.size());
  return {add(mix, positions), std::vector<InputOrigin>(latents.size(), InputOrigin::latent)};
}

namespace detail {

inline Tensor causal_mask(std::size_t t) {
  std::vector<double> m(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = kMaskedScore;
  return Tensor::matrix(t, t, std::move(m));
}

}  // namespace detail

/// Next-token logits at every position: [T×|V|].
inline Tensor forward_logits(const ModelParams& params, const EmbeddingSequence& inputs) {
  const auto& cfg = params.config;
  const std::size_t t = inputs.length();
  if (t == 0) throw ContractError("forward on an empty sequence");
  detail::require_positions(params, t);
  const std::size_t hd = cfg.head_dim();
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Tensor mask = detail::causal_mask(t);

  Tensor x = inputs.vectors;
  for (const auto& L : params.layers) {
    const Tensor h = layer_norm(x, L.ln1_gain, L.ln1_bias, kLayerNormEps);
    const Tensor q = matmul(h, L.w_query);
    const Tensor k = matmul(h, L.w_key);
    const Tensor v = matmul(h, L.w_value);
    std::vector<Tensor> heads;
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
      const std::size_t b = head * hd, e = b + hd;
      const Tensor scores = add(scale(matmul(slice_cols(q, b, e), transpose(slice_cols(k, b, e))), score_scale), mask);
      heads.push_back(matmul(softmax(scores), slice_cols(v, b, e)));
    }
    x = add(x, matmul(concat_cols(heads), L.w_out));
    const Tensor h2 = layer_norm(x, L.ln2_gain, L.ln2_bias, kLayerNormEps);
    const Tensor ff = gelu(add_row(matmul(h2, L.w_ff1), L.b_ff1));
    x = add(x, add_row(matmul(ff, L.w_ff2), L.b_ff2));
  }
  return matmul(layer_norm(x, params.final_gain, params.final_bias, kLayerNormEps), params.output_head);
}

/// π at the last position: softmax(logits / temperature), shape [|V|].
inline Tensor forward_distribution(const ModelParams& params, const EmbeddingSequence& inputs,
                                   double sampling_temperature) {
  require(sampling_temperature > 0.0, "forward_distribution: temperature must be positive");
  const Tensor logits = forward_logits(params, inputs);
  const std::size_t t = logits.dim(0);
  const Tensor last = slice_rows(logits, t - 1, t);
  return reshape(softmax(scale(last, 1.0 / sampling_temperature)), {params.config.vocab_size});
}

/// softmax(logits / temperature) on plain values.
inline std::vector<double> distribution_from_logits(std::span<const double> logits, double temperature) {
  require(temperature > 0.0, "temperature must be positive");
  std::vector<double> scores(logits.begin(), logits.end());
  return detail::tempered_softmax(std::move(scores), temperature);
}

// ---------------------------------------------------------------------------
// Incremental decoding

/// Per-layer key/value cache for generating one position at a time without
/// recording a tape. Agrees with forward_logits() to ~1e-12.
class DecodeCache {
 public:
  explicit DecodeCache(const ModelParams& params) : params_(params), layers_(params.config.n_layers) {}

  std::size_t length() const { return length_; }

  /// Input row for discrete token `id` at the next position.
  std::vector<double> token_input(std::size_t id) const {
    const auto& cfg = params_.config;
    if (id >= cfg.vocab_size) throw ContractError("token id " + std::to_string(id) + " out of range");
    std::vector<double> x(cfg.d_model);
    const auto e = params_.token_embeddings.data();
    for (std::size_t j = 0; j < cfg.d_model; ++j) x[j] = e[id * cfg.d_model + j];
    add_position(x);
    return x;
  }

  /// Input row Σ z_k·e_k for a latent token at the next position.
  std::vector<double> latent_input(const LatentToken& z) const {
    const auto& cfg = params_.config;
    if (z.z.size() != cfg.vocab_size) throw ContractError("latent token size does not match vocabulary");
    if (!z.on_simplex()) throw ContractError("latent token is off the simplex");
    std::vector<double> x(cfg.d_model, 0.0);
    const auto e = params_.token_embeddings.data();
    for (std::size_t k = 0; k < cfg.vocab_size; ++k) {
      const double w = z.z[k];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < cfg.d_model; ++j) x[j] += w * e[k * cfg.d_model + j];
    }
    add_position(x);
    return x;
  }

  /// Feeds one input row and returns the next-token logits at that position.
  std::vector<double> step(std::span<const double> input) {
    const auto& cfg = params_.config;
    detail::require_positions(params_, length_ + 1);
    const std::size_t d = cfg.d_model, hd = cfg.head_dim();
    std::vector<double> x(input.begin(), input.end());
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const auto& L = params_.layers[l];
      auto& cache = layers_[l];
      const auto h = norm(x, L.ln1_gain, L.ln1_bias);
      const auto q = vec_mat(h, L.w_query, d);
      const auto k = vec_mat(h, L.w_key, d);
      const auto v = vec_mat(h, L.w_value, d);
      cache.keys.insert(cache.keys.end(), k.begin(), k.end());
      cache.values.insert(cache.values.end(), v.begin(), v.end());
      const std::size_t t = length_ + 1;
      std::vector<double> attended(d, 0.0), scores(t);
      const double score_scale = 1.0 / std::sqrt(static_cast<double>(hd));
      for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const std::size_t off = head * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < t; ++s) {
          double acc = 0.0;
          for (std::size_t j = 0; j < hd; ++j) acc += q[off + j] * cache.keys[s * d + off + j];
          scores[s] = acc * score_scale;
          mx = std::max(mx, scores[s]);
        }
        double total = 0.0;
        for (auto& sc : scores) {
          sc = std::exp(sc - mx);
          total += sc;
        }
        for (std::size_t s = 0; s < t; ++s) {
          const double w = scores[s] / total;
          for (std::size_t j = 0; j < hd; ++j) attended[off + j] += w * cache.values[s * d + off + j];
        }
      }
      const auto proj = vec_mat(attended, L.w_out, d);
      for (std::size_t j = 0; j < d; ++j) x[j] += proj[j];
      const auto h2 = norm(x, L.ln2_gain, L.ln2_bias);
      auto ff = vec_mat(h2, L.w_ff1, cfg.d_ff);
      for (std::size_t j = 0; j < cfg.d_ff; ++j) ff[j] = gelu_scalar(ff[j] + L.b_ff1[j]);
      const auto out = vec_mat(ff, L.w_ff2, d);
      for (std::size_t j = 0; j < d; ++j) x[j] += out[j] + L.b_ff2[j];
    }
    ++length_;
    return vec_mat(norm(x, params_.final_gain, params_.final_bias), params_.output_head, cfg.vocab_size);
  }

 private:
  struct LayerCache {
    std::vector<double> keys;    // t×d
    std::vector<double> values;  // t×d
  };

  void add_position(std::vector<double>& x) const {
    detail::require_positions(params_, length_ + 1);
    const auto p = params_.positional_embeddings.data();
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += p[length_ * x.size() + j];
  }

  static std::vector<double> norm(const std::vector<double>& x, const Tensor& gain, const Tensor& bias) {
    const double n = static_cast<double>(x.size());
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mu) * inv * gain[j] + bias[j];
    return out;
  }

  static std::vector<double> vec_mat(const std::vector<double>& x, const Tensor& w, std::size_t cols) {
    std::vector<double> out(cols, 0.0);
    const auto wd = w.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = x[i];
      const double* row = wd.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) out[j] += xi * row[j];
    }
    return out;
  }

  static double gelu_scalar(double x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + 0.044715 * x * x * x)));
  }

  const ModelParams& params_;
  std::vector<LayerCache> layers_;
  std::size_t length_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline void write_model_config(Archive& archive, const ModelConfig& cfg, const std::string& prefix = "model.") {
  archive.set(prefix + "vocab_size", std::to_string(cfg.vocab_size));
  archive.set(prefix + "d_model", std::to_string(cfg.d_model));
  archive.set(prefix + "n_layers", std::to_string(cfg.n_layers));
  archive.set(prefix + "n_heads", std::to_string(cfg.n_heads));
  archive.set(prefix + "d_ff", std::to_string(cfg.d_ff));
  archive.set(prefix + "max_seq_len", std::to_string(cfg.max_seq_len));
  std::ostringstream os;
  os.precision(17);
  os << cfg.init_std;
  archive.set(prefix + "init_std", os.str());
}

inline ModelConfig read_model_config(const Archive& archive, const std::string& prefix = "model.") {
  auto count = [&](const std::string& key) -> std::size_t {
    const auto& s = archive.get(prefix + key);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw FormatError("checkpoint field '" + prefix + key + "' is not a count: '" + s + "'");
    }
  };
  ModelConfig cfg;
  cfg.vocab_size = count("vocab_size");
  cfg.d_model = count("d_model");
  cfg.n_layers = count("n_layers");
  cfg.n_heads = count("n_heads");
  cfg.d_ff = count("d_ff");
  cfg.max_seq_len = count("max_seq_len");
  cfg.init_std = std::stod(archive.get(prefix + "init_std"));
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint model config invalid: ") + e.what());
  }
  return cfg;
}

inline void write_params(Archive& archive, const ModelParams& params, const std::string& prefix) {
  for (const auto& [name, t] : params.named()) archive.add(prefix + name, t);
}

inline ModelParams read_params(const Archive& archive, const ModelConfig& cfg, const std::string& prefix,
                               bool trainable) {
  ModelParams shell = ModelParams::init(cfg, 0);
  std::vector<Tensor> values;
  for (const auto& [name, t] : shell.named()) {
    const Tensor& stored = archive.tensor(prefix + name);
    if (stored.shape() != t.shape()) {
      throw FormatError("tensor '" + prefix + name + "' has shape " + shape_string(stored.shape()) +
                        ", expected " + shape_string(t.shape()));
    }
    Tensor copy = stored.detach();
    copy.set_requires_grad(trainable);
    values.push_back(copy);
  }
  shell.assign(values);
  return shell;
}

inline void save_model(const ModelParams& params, const std::filesystem::path& path) {
  Archive archive;
  archive.set("kind", "model");
  write_model_config(archive, params.config);
  write_params(archive, params, "");
  save_archive(archive, path);
}

inline ModelParams load_model(const std::filesystem::path& path) {
  const Archive archive = load_archive(path);
  const auto cfg = read_model_config(archive);
  // trainer checkpoints store the policy under "policy/"
  const std::string prefix = archive.has("kind") && archive.get("kind") == "trainer" ? "policy/" : "";
  return read_params(archive, cfg, prefix, true);
}

}  // namespace lepo
