#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcm/common.hpp"
#include "vcm/data.hpp"
#include "vcm/linalg.hpp"
#include "vcm/pipeline.hpp"
#include "vcm/rng.hpp"

namespace vcm {

// Layer widths for the two streams. The encoder head always emits 2K values
// (mu and log-sigma); the decoder's last layer emits item or word logits.
struct Architecture {
  std::size_t n_items = 0;
  std::size_t vocab_size = 0;
  std::size_t latent_dim = 100;
  std::vector<std::size_t> enc_x_hidden{600};
  std::vector<std::size_t> dec_x_hidden{600};
  std::vector<std::size_t> enc_y_hidden{500};
  std::vector<std::size_t> dec_y_hidden{};

  std::vector<std::size_t> widths(int group) const {
    std::vector<std::size_t> w;
    switch (group) {
      case 0:  // enc_x
        w.push_back(n_items);
        w.insert(w.end(), enc_x_hidden.begin(), enc_x_hidden.end());
        w.push_back(2 * latent_dim);
        break;
      case 1:  // enc_y
        w.push_back(vocab_size);
        w.insert(w.end(), enc_y_hidden.begin(), enc_y_hidden.end());
        w.push_back(2 * latent_dim);
        break;
      case 2:  // dec_x
        w.push_back(latent_dim);
        w.insert(w.end(), dec_x_hidden.begin(), dec_x_hidden.end());
        w.push_back(n_items);
        break;
      case 3:  // dec_y
        w.push_back(latent_dim);
        w.insert(w.end(), dec_y_hidden.begin(), dec_y_hidden.end());
        w.push_back(vocab_size);
        break;
      default:
        throw ConfigError("Architecture::widths: bad group");
    }
    return w;
  }

  void validate() const {
    if (n_items == 0 || vocab_size == 0 || latent_dim == 0) {
      throw ConfigError("Architecture: n_items, vocab_size and latent_dim must be positive");
    }
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

enum class ParamGroup : int { enc_x = 0, enc_y = 1, dec_x = 2, dec_y = 3 };
inline constexpr std::array<ParamGroup, 4> kAllGroups = {
    ParamGroup::enc_x, ParamGroup::enc_y, ParamGroup::dec_x, ParamGroup::dec_y};

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::enc_x: return "enc_x";
    case ParamGroup::enc_y: return "enc_y";
    case ParamGroup::dec_x: return "dec_x";
    case ParamGroup::dec_y: return "dec_y";
  }
  return "?";
}

// One affine layer's placement inside the flat parameter array.
struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t w_offset = 0;  // out*in values, row-major
  std::size_t b_offset = 0;  // out values
};

// All four parameter groups (phi_x, phi_y, theta_x, theta_y) in one flat
// 64-bit float array. Groups are contiguous, which makes freezing, Adam
// state and gradient diagnostics simple range operations.
class ModelParams {
 public:
  ModelParams() = default;

  explicit ModelParams(const Architecture& arch) : arch_(arch) {
    arch.validate();
    std::size_t offset = 0;
    for (int g = 0; g < 4; ++g) {
      group_begin_[g] = offset;
      const auto widths = arch.widths(g);
      for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        LayerShape shape;
        shape.in = widths[l];
        shape.out = widths[l + 1];
        shape.w_offset = offset;
        offset += shape.in * shape.out;
        shape.b_offset = offset;
        offset += shape.out;
        layers_[g].push_back(shape);
      }
      group_end_[g] = offset;
    }
    values_.assign(offset, 0.0);
  }

  // Symmetric uniform fan-in initialization: W ~ U(-1/sqrt(in), 1/sqrt(in)),
  // biases zero. Layer order is fixed, so a seed pins every weight.
  void init_random(RngStream rng) {
    for (int g = 0; g < 4; ++g) {
      for (const auto& layer : layers_[g]) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
          values_[layer.w_offset + i] = (2.0 * rng.next_double() - 1.0) * bound;
        }
        for (std::size_t i = 0; i < layer.out; ++i) values_[layer.b_offset + i] = 0.0;
      }
    }
  }

  const Architecture& arch() const { return arch_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> group_values(ParamGroup g) {
    const int i = static_cast<int>(g);
    return std::span<double>(values_).subspan(group_begin_[i], group_end_[i] - group_begin_[i]);
  }
  std::span<const double> group_values(ParamGroup g) const {
    const int i = static_cast<int>(g);
    return std::span<const double>(values_).subspan(group_begin_[i],
                                                    group_end_[i] - group_begin_[i]);
  }
  std::pair<std::size_t, std::size_t> group_range(ParamGroup g) const {
    const int i = static_cast<int>(g);
    return {group_begin_[i], group_end_[i]};
  }

  const std::vector<LayerShape>& layers(ParamGroup g) const {
    return layers_[static_cast<int>(g)];
  }

  void save(const std::filesystem::path& path, std::uint64_t seed) const;
  static ModelParams load(const std::filesystem::path& path, std::uint64_t* seed_out = nullptr);

 private:
  Architecture arch_;
  std::vector<double> values_;
  std::vector<LayerShape> layers_[4];
  std::size_t group_begin_[4] = {0, 0, 0, 0};
  std::size_t group_end_[4] = {0, 0, 0, 0};
};

struct GaussianPosterior {
  DenseVector mu;
  DenseVector sigma;  // strictly positive
  std::size_t dim() const { return mu.size(); }
};

// ---- input normalization (convention recorded in the dataset index) ----

// Click rows: L2-normalized binary vector; a zero row stays zero.
inline DenseVector normalized_click_input(std::span<const std::uint32_t> items,
                                          std::size_t n_items) {
  DenseVector x(n_items, 0.0);
  if (items.empty()) return x;
  const double value = 1.0 / std::sqrt(static_cast<double>(items.size()));
  for (std::uint32_t i : items) x[i] = value;
  return x;
}

// Review rows: L1-normalized counts scaled by log1p of the word total, so
// document length enters only through a slow-growing factor.
inline DenseVector normalized_review_input(std::span<const WordCount> words,
                                           std::size_t vocab_size) {
  DenseVector y(vocab_size, 0.0);
  double total = 0.0;
  for (const auto& wc : words) total += wc.count;
  if (total == 0.0) return y;
  const double scale = std::log1p(total) / total;
  for (const auto& wc : words) y[wc.word] = wc.count * scale;
  return y;
}

namespace detail {

// Shared MLP forward: tanh between layers, none after the last.
inline DenseVector mlp_forward(const ModelParams& m, ParamGroup g, DenseVector input) {
  std::span<const double> values = m.values();
  DenseVector cur = std::move(input);
  const auto& layers = m.layers(g);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    DenseVector next(layer.out);
    affine_into(values.subspan(layer.w_offset, layer.in * layer.out), layer.out, layer.in,
                values.subspan(layer.b_offset, layer.out), cur, next);
    if (l + 1 < layers.size()) tanh_into(next, next);
    cur = std::move(next);
  }
  return cur;
}

inline GaussianPosterior head_to_posterior(DenseVector head, std::size_t k) {
  GaussianPosterior q;
  q.mu.assign(head.begin(), head.begin() + k);
  q.sigma.resize(k);
  for (std::size_t i = 0; i < k; ++i) q.sigma[i] = std::exp(head[k + i]);
  return q;
}

}  // namespace detail

// Click encoder: L2-normalize, input dropout (training only), hidden tanh
// layers, linear 2K head split into mu and exp(log-sigma).
inline GaussianPosterior encode_clicks(const ModelParams& m,
                                       std::span<const std::uint32_t> items, RngStream& rng,
                                       bool training, double dropout_rate = 0.5) {
  DenseVector x = normalized_click_input(items, m.arch().n_items);
  x = dropout(x, dropout_rate, rng, training);
  return detail::head_to_posterior(detail::mlp_forward(m, ParamGroup::enc_x, std::move(x)),
                                   m.arch().latent_dim);
}

// Review encoder: same contract, no input dropout.
inline GaussianPosterior encode_reviews(const ModelParams& m, std::span<const WordCount> words) {
  DenseVector y = normalized_review_input(words, m.arch().vocab_size);
  return detail::head_to_posterior(detail::mlp_forward(m, ParamGroup::enc_y, std::move(y)),
                                   m.arch().latent_dim);
}

// z = mu + eps (.) sigma
inline DenseVector reparameterize(const GaussianPosterior& post, const DenseVector& eps) {
  if (eps.size() != post.dim()) {
    throw ShapeError("reparameterize: eps dim " + std::to_string(eps.size()) +
                     " != posterior dim " + std::to_string(post.dim()));
  }
  DenseVector z(post.dim());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = post.mu[i] + eps[i] * post.sigma[i];
  return z;
}

inline DenseVector decode_items(const ModelParams& m, const DenseVector& z) {
  return softmax(detail::mlp_forward(m, ParamGroup::dec_x, z));
}

inline DenseVector decode_words(const ModelParams& m, const DenseVector& r) {
  return softmax(detail::mlp_forward(m, ParamGroup::dec_y, r));
}

// Deterministic prediction: z_u = mu of the click posterior, no dropout.
inline DenseVector predict_scores(const ModelParams& m, std::span<const std::uint32_t> items) {
  RngStream unused(0);
  GaussianPosterior q = encode_clicks(m, items, unused, /*training=*/false);
  return decode_items(m, q.mu);
}

// Cross-domain prediction: review posterior mean through the click decoder.
inline DenseVector predict_cross_domain(const ModelParams& m, std::span<const WordCount> words) {
  GaussianPosterior q = encode_reviews(m, words);
  return decode_items(m, q.mu);
}

// ---- checkpoint io ----

inline void ModelParams::save(const std::filesystem::path& path, std::uint64_t seed) const {
  nlohmann::json j;
  j["format"] = "vcm-checkpoint";
  j["format_version"] = 1;
  j["seed"] = seed;
  j["architecture"] = {{"n_items", arch_.n_items},
                       {"vocab_size", arch_.vocab_size},
                       {"latent_dim", arch_.latent_dim},
                       {"enc_x_hidden", arch_.enc_x_hidden},
                       {"dec_x_hidden", arch_.dec_x_hidden},
                       {"enc_y_hidden", arch_.enc_y_hidden},
                       {"dec_y_hidden", arch_.dec_y_hidden}};
  j["normalization"] = {{"click", "l2"}, {"review", "l1_log1p"}};
  nlohmann::json params;
  for (ParamGroup g : kAllGroups) {
    auto span = group_values(g);
    params[group_name(g)] = std::vector<double>(span.begin(), span.end());
  }
  j["params"] = std::move(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VcmError("cannot open checkpoint for writing: " + path.string());
  out << j.dump() << '\n';
}

inline ModelParams ModelParams::load(const std::filesystem::path& path, std::uint64_t* seed_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VcmError("cannot open checkpoint: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "vcm-checkpoint") {
    throw VcmError("not a vcm checkpoint: " + path.string());
  }
  Architecture arch;
  const auto& a = j.at("architecture");
  arch.n_items = a.at("n_items").get<std::size_t>();
  arch.vocab_size = a.at("vocab_size").get<std::size_t>();
  arch.latent_dim = a.at("latent_dim").get<std::size_t>();
  arch.enc_x_hidden = a.at("enc_x_hidden").get<std::vector<std::size_t>>();
  arch.dec_x_hidden = a.at("dec_x_hidden").get<std::vector<std::size_t>>();
  arch.enc_y_hidden = a.at("enc_y_hidden").get<std::vector<std::size_t>>();
  arch.dec_y_hidden = a.at("dec_y_hidden").get<std::vector<std::size_t>>();

  ModelParams m(arch);
  for (ParamGroup g : kAllGroups) {
    auto vals = j.at("params").at(group_name(g)).get<std::vector<double>>();
    auto span = m.group_values(g);
    if (vals.size() != span.size()) {
      throw ShapeError(std::string("checkpoint group ") + group_name(g) + " has " +
                       std::to_string(vals.size()) + " values, architecture expects " +
                       std::to_string(span.size()));
    }
    std::copy(vals.begin(), vals.end(), span.begin());
  }
  if (!all_finite(m.values())) throw VcmError("checkpoint contains non-finite parameters");
  if (seed_out) *seed_out = j.value("seed", std::uint64_t{0});
  return m;
}

}  // namespace vcm
