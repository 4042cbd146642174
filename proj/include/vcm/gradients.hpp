#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <thread>
#include <vector>

#include "vcm/common.hpp"
#include "vcm/data.hpp"
#include "vcm/linalg.hpp"
#include "vcm/model.hpp"
#include "vcm/objective.hpp"

namespace vcm {

// Gradient storage mirroring the ModelParams flat layout.
struct GradientBuffer {
  std::vector<double> values;

  GradientBuffer() = default;
  explicit GradientBuffer(const ModelParams& m) : values(m.size(), 0.0) {}

  void zero() { std::fill(values.begin(), values.end(), 0.0); }

  std::span<double> group(const ModelParams& m, ParamGroup g) {
    auto [b, e] = m.group_range(g);
    return std::span<double>(values).subspan(b, e - b);
  }
  std::span<const double> group(const ModelParams& m, ParamGroup g) const {
    auto [b, e] = m.group_range(g);
    return std::span<const double>(values).subspan(b, e - b);
  }
};

// Fixed stochastic inputs for one user's forward/backward pass. Holding
// these constant is what makes the reparameterized gradient exact and
// finite-difference checkable.
struct UserNoise {
  std::vector<double> dropout_mask;  // empty => no input dropout
  std::vector<DenseVector> eps_x;    // one K-vector per Monte-Carlo sample
  std::vector<DenseVector> eps_y;
};

inline UserNoise draw_user_noise(const Architecture& arch, RngStream rng, double dropout_rate,
                                 bool apply_dropout, std::size_t mc_samples) {
  if (mc_samples == 0) throw ConfigError("draw_user_noise: mc_samples must be >= 1");
  UserNoise n;
  if (apply_dropout && dropout_rate > 0.0) {
    if (!(dropout_rate < 1.0)) {
      throw ConfigError("draw_user_noise: dropout rate must be < 1");
    }
    n.dropout_mask.resize(arch.n_items);
    dropout_mask_into(dropout_rate, rng, n.dropout_mask);
  }
  n.eps_x.reserve(mc_samples);
  n.eps_y.reserve(mc_samples);
  for (std::size_t s = 0; s < mc_samples; ++s) {
    n.eps_x.push_back(sample_standard_normal(arch.latent_dim, rng));
  }
  for (std::size_t s = 0; s < mc_samples; ++s) {
    n.eps_y.push_back(sample_standard_normal(arch.latent_dim, rng));
  }
  return n;
}

namespace detail {

// acts[0] is the input; acts[l+1] is layer l's output (tanh applied on all
// but the last layer, whose raw affine output is kept).
inline void mlp_forward_cached(const ModelParams& m, ParamGroup g, DenseVector input,
                               std::vector<DenseVector>& acts) {
  const auto& layers = m.layers(g);
  std::span<const double> values = m.values();
  acts.resize(layers.size() + 1);
  acts[0] = std::move(input);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    acts[l + 1].assign(layer.out, 0.0);
    affine_into(values.subspan(layer.w_offset, layer.in * layer.out), layer.out, layer.in,
                values.subspan(layer.b_offset, layer.out), acts[l], acts[l + 1]);
    if (l + 1 < layers.size()) tanh_into(acts[l + 1], acts[l + 1]);
  }
}

// Backpropagates dout (gradient w.r.t. the MLP's final raw output) through
// the cached activations, accumulating parameter gradients into grad and
// optionally producing the gradient w.r.t. the MLP input.
inline void mlp_backward(const ModelParams& m, ParamGroup g, const std::vector<DenseVector>& acts,
                         DenseVector dout, std::span<double> grad, DenseVector* dinput) {
  const auto& layers = m.layers(g);
  std::span<const double> values = m.values();
  DenseVector dcur = std::move(dout);
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    if (li + 1 < layers.size()) {
      // dcur holds d(post-tanh); convert to d(pre-activation) in place.
      const DenseVector& post = acts[li + 1];
      for (std::size_t i = 0; i < dcur.size(); ++i) dcur[i] *= 1.0 - post[i] * post[i];
    }
    const bool need_dx = li > 0 || dinput != nullptr;
    DenseVector dx;
    if (need_dx) dx.assign(layer.in, 0.0);
    affine_backward(values.subspan(layer.w_offset, layer.in * layer.out), layer.out, layer.in,
                    acts[li], dcur, grad.subspan(layer.w_offset, layer.in * layer.out),
                    grad.subspan(layer.b_offset, layer.out), dx);
    dcur = std::move(dx);
  }
  if (dinput) *dinput = std::move(dcur);
}

}  // namespace detail

// Cached forward state for one user; reused across users within a lane.
struct UserCache {
  std::vector<DenseVector> enc_x_acts;
  std::vector<DenseVector> enc_y_acts;
  GaussianPosterior qx, qy;
  std::vector<DenseVector> zs, rs;                      // per sample
  std::vector<std::vector<DenseVector>> dec_x_acts;     // per sample
  std::vector<std::vector<DenseVector>> dec_y_acts;
  std::vector<DenseVector> pi, p;                       // per sample softmax outputs
  ObjectiveBreakdown breakdown;
};

// Forward pass for one user under fixed noise; reconstruction terms are
// averaged over the Monte-Carlo samples.
inline ObjectiveBreakdown user_forward(const ModelParams& m,
                                       std::span<const std::uint32_t> clicks,
                                       std::span<const WordCount> words, const UserNoise& noise,
                                       double beta_x, double beta_y, double beta_cap,
                                       ObjectiveMode mode, UserCache& cache,
                                       std::size_t* floored = nullptr) {
  const Architecture& arch = m.arch();
  const std::size_t k = arch.latent_dim;
  const std::size_t s_count = noise.eps_x.size();
  if (s_count == 0 || noise.eps_y.size() != s_count) {
    throw ConfigError("user_forward: need matching, nonempty eps draws per stream");
  }

  DenseVector x = normalized_click_input(clicks, arch.n_items);
  if (!noise.dropout_mask.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= noise.dropout_mask[i];
  }
  detail::mlp_forward_cached(m, ParamGroup::enc_x, std::move(x), cache.enc_x_acts);
  cache.qx = detail::head_to_posterior(cache.enc_x_acts.back(), k);

  DenseVector y = normalized_review_input(words, arch.vocab_size);
  detail::mlp_forward_cached(m, ParamGroup::enc_y, std::move(y), cache.enc_y_acts);
  cache.qy = detail::head_to_posterior(cache.enc_y_acts.back(), k);

  cache.zs.resize(s_count);
  cache.rs.resize(s_count);
  cache.dec_x_acts.resize(s_count);
  cache.dec_y_acts.resize(s_count);
  cache.pi.resize(s_count);
  cache.p.resize(s_count);

  double recon_x = 0.0, recon_y = 0.0;
  for (std::size_t s = 0; s < s_count; ++s) {
    cache.zs[s] = reparameterize(cache.qx, noise.eps_x[s]);
    detail::mlp_forward_cached(m, ParamGroup::dec_x, cache.zs[s], cache.dec_x_acts[s]);
    cache.pi[s].resize(arch.n_items);
    softmax_into(cache.dec_x_acts[s].back(), cache.pi[s]);
    recon_x += multinomial_log_likelihood(clicks, cache.pi[s], floored);

    cache.rs[s] = reparameterize(cache.qy, noise.eps_y[s]);
    detail::mlp_forward_cached(m, ParamGroup::dec_y, cache.rs[s], cache.dec_y_acts[s]);
    cache.p[s].resize(arch.vocab_size);
    softmax_into(cache.dec_y_acts[s].back(), cache.p[s]);
    recon_y += multinomial_log_likelihood(words, cache.p[s], floored);
  }
  recon_x /= static_cast<double>(s_count);
  recon_y /= static_cast<double>(s_count);

  cache.breakdown =
      per_user_objective(recon_x, recon_y, cache.qx, cache.qy, beta_x, beta_y, beta_cap, mode);
  return cache.breakdown;
}

// Exact gradient of `scale * breakdown.total` for the cached forward pass,
// accumulated into grad. The noise draws are treated as constants
// (reparameterization trick), so this is the analytic gradient of the
// Monte-Carlo objective.
inline void user_backward(const ModelParams& m, std::span<const std::uint32_t> clicks,
                          std::span<const WordCount> words, const UserNoise& noise,
                          ObjectiveMode mode, const UserCache& cache, double scale,
                          std::span<double> grad) {
  const Architecture& arch = m.arch();
  const std::size_t k = arch.latent_dim;
  const std::size_t s_count = noise.eps_x.size();
  const double inv_s = 1.0 / static_cast<double>(s_count);
  const TermWeights w = term_weights(mode, cache.breakdown.beta_x, cache.breakdown.beta_y);

  const DenseVector& mu_x = cache.qx.mu;
  const DenseVector& sig_x = cache.qx.sigma;
  const DenseVector& mu_y = cache.qy.mu;
  const DenseVector& sig_y = cache.qy.sigma;

  DenseVector dmu_x(k, 0.0), dsig_x(k, 0.0), dmu_y(k, 0.0), dsig_y(k, 0.0);

  // Reconstruction terms via the decoders; d(recon)/d(logits) in closed
  // form (counts - total * probs over unfloored entries).
  if (w.recon_x != 0.0) {
    for (std::size_t s = 0; s < s_count; ++s) {
      const double coef = scale * w.recon_x * inv_s;
      const DenseVector& pi = cache.pi[s];
      DenseVector dlogits(arch.n_items, 0.0);
      double active_total = 0.0;
      for (std::uint32_t i : clicks) {
        if (pi[i] >= kLogProbFloor) active_total += 1.0;
      }
      for (std::size_t j = 0; j < dlogits.size(); ++j) {
        dlogits[j] = -coef * active_total * pi[j];
      }
      for (std::uint32_t i : clicks) {
        if (pi[i] >= kLogProbFloor) dlogits[i] += coef;
      }
      DenseVector dz;
      detail::mlp_backward(m, ParamGroup::dec_x, cache.dec_x_acts[s], std::move(dlogits), grad,
                           &dz);
      for (std::size_t j = 0; j < k; ++j) {
        dmu_x[j] += dz[j];
        dsig_x[j] += dz[j] * noise.eps_x[s][j];
      }
    }
  }
  if (w.recon_y != 0.0) {
    for (std::size_t s = 0; s < s_count; ++s) {
      const double coef = scale * w.recon_y * inv_s;
      const DenseVector& p = cache.p[s];
      DenseVector dlogits(arch.vocab_size, 0.0);
      double active_total = 0.0;
      for (const auto& wc : words) {
        if (p[wc.word] >= kLogProbFloor) active_total += wc.count;
      }
      for (std::size_t j = 0; j < dlogits.size(); ++j) {
        dlogits[j] = -coef * active_total * p[j];
      }
      for (const auto& wc : words) {
        if (p[wc.word] >= kLogProbFloor) dlogits[wc.word] += coef * wc.count;
      }
      DenseVector dr;
      detail::mlp_backward(m, ParamGroup::dec_y, cache.dec_y_acts[s], std::move(dlogits), grad,
                           &dr);
      for (std::size_t j = 0; j < k; ++j) {
        dmu_y[j] += dr[j];
        dsig_y[j] += dr[j] * noise.eps_y[s][j];
      }
    }
  }

  // KL(q || prior): d/dmu = mu, d/dsigma = sigma - 1/sigma.
  if (w.kl_prior_x != 0.0) {
    const double c = scale * w.kl_prior_x;
    for (std::size_t j = 0; j < k; ++j) {
      dmu_x[j] += c * mu_x[j];
      dsig_x[j] += c * (sig_x[j] - 1.0 / sig_x[j]);
    }
  }
  if (w.kl_prior_y != 0.0) {
    const double c = scale * w.kl_prior_y;
    for (std::size_t j = 0; j < k; ++j) {
      dmu_y[j] += c * mu_y[j];
      dsig_y[j] += c * (sig_y[j] - 1.0 / sig_y[j]);
    }
  }

  // KL(q_x || q_y): closed-form partials into both posteriors.
  if (w.kl_xy != 0.0) {
    const double c = scale * w.kl_xy;
    for (std::size_t j = 0; j < k; ++j) {
      const double dm = mu_x[j] - mu_y[j];
      const double sy2 = sig_y[j] * sig_y[j];
      dmu_x[j] += c * dm / sy2;
      dmu_y[j] -= c * dm / sy2;
      dsig_x[j] += c * (-1.0 / sig_x[j] + sig_x[j] / sy2);
      dsig_y[j] += c * (1.0 / sig_y[j] -
                        (sig_x[j] * sig_x[j] + dm * dm) / (sy2 * sig_y[j]));
    }
  }
  // KL(q_y || q_x): mirror image.
  if (w.kl_yx != 0.0) {
    const double c = scale * w.kl_yx;
    for (std::size_t j = 0; j < k; ++j) {
      const double dm = mu_y[j] - mu_x[j];
      const double sx2 = sig_x[j] * sig_x[j];
      dmu_y[j] += c * dm / sx2;
      dmu_x[j] -= c * dm / sx2;
      dsig_y[j] += c * (-1.0 / sig_y[j] + sig_y[j] / sx2);
      dsig_x[j] += c * (1.0 / sig_x[j] -
                        (sig_y[j] * sig_y[j] + dm * dm) / (sx2 * sig_x[j]));
    }
  }
  // ||mu_x - mu_y||^2
  if (w.nv != 0.0) {
    const double c = scale * w.nv;
    for (std::size_t j = 0; j < k; ++j) {
      const double dm = mu_x[j] - mu_y[j];
      dmu_x[j] += c * 2.0 * dm;
      dmu_y[j] -= c * 2.0 * dm;
    }
  }

  // Heads emit [mu, log sigma]; d(log sigma) = d(sigma) * sigma.
  DenseVector dhead_x(2 * k);
  DenseVector dhead_y(2 * k);
  for (std::size_t j = 0; j < k; ++j) {
    dhead_x[j] = dmu_x[j];
    dhead_x[k + j] = dsig_x[j] * sig_x[j];
    dhead_y[j] = dmu_y[j];
    dhead_y[k + j] = dsig_y[j] * sig_y[j];
  }
  detail::mlp_backward(m, ParamGroup::enc_x, cache.enc_x_acts, std::move(dhead_x), grad, nullptr);
  detail::mlp_backward(m, ParamGroup::enc_y, cache.enc_y_acts, std::move(dhead_y), grad, nullptr);
}

// One user's rows, bundled for batch calls.
struct UserRows {
  std::span<const std::uint32_t> clicks;
  std::span<const WordCount> words;
};

// Mean objective over a batch under fixed per-user noise; no gradients.
inline ObjectiveBreakdown batch_objective(const ModelParams& m, std::span<const UserRows> users,
                                          std::span<const UserNoise> noises, double beta_x,
                                          double beta_y, double beta_cap, ObjectiveMode mode,
                                          std::size_t* floored = nullptr) {
  ObjectiveBreakdown sum;
  sum.beta_x = beta_x;
  sum.beta_y = beta_y;
  UserCache cache;
  for (std::size_t u = 0; u < users.size(); ++u) {
    sum += user_forward(m, users[u].clicks, users[u].words, noises[u], beta_x, beta_y, beta_cap,
                        mode, cache, floored);
  }
  ObjectiveBreakdown mean = scaled(sum, 1.0 / static_cast<double>(users.size()));
  mean.beta_x = beta_x;
  mean.beta_y = beta_y;
  return mean;
}

// Mean objective and its exact analytic gradient over a batch; `scale`
// multiplies the objective seen by the gradient (the returned breakdown is
// unscaled). Per-user passes run in `threads` lanes over fixed contiguous
// slices; lane buffers are reduced in lane order, so results are
// deterministic for a given thread count.
// Throws VcmError naming the parameter group if any gradient is non-finite.
inline ObjectiveBreakdown compute_gradients(const ModelParams& m, std::span<const UserRows> users,
                                            std::span<const UserNoise> noises, double beta_x,
                                            double beta_y, double beta_cap, ObjectiveMode mode,
                                            GradientBuffer& grad, std::size_t threads = 1,
                                            double scale = 1.0, std::size_t* floored = nullptr) {
  if (users.empty()) throw ConfigError("compute_gradients: empty batch");
  if (noises.size() != users.size()) {
    throw ShapeError("compute_gradients: " + std::to_string(users.size()) + " users but " +
                     std::to_string(noises.size()) + " noise records");
  }
  grad.zero();
  const double per_user_scale = scale / static_cast<double>(users.size());

  ObjectiveBreakdown sum;
  if (threads <= 1 || users.size() == 1) {
    UserCache cache;
    std::size_t local_floored = 0;
    for (std::size_t u = 0; u < users.size(); ++u) {
      sum += user_forward(m, users[u].clicks, users[u].words, noises[u], beta_x, beta_y,
                          beta_cap, mode, cache, &local_floored);
      user_backward(m, users[u].clicks, users[u].words, noises[u], mode, cache, per_user_scale,
                    grad.values);
    }
    if (floored) *floored += local_floored;
  } else {
    const std::size_t n_lanes = std::min(threads, users.size());
    std::vector<GradientBuffer> lane_grads(n_lanes, GradientBuffer(m));
    std::vector<ObjectiveBreakdown> lane_sums(n_lanes);
    std::vector<std::size_t> lane_floored(n_lanes, 0);
    std::vector<std::thread> pool;
    pool.reserve(n_lanes);
    for (std::size_t lane = 0; lane < n_lanes; ++lane) {
      pool.emplace_back([&, lane]() {
        const std::size_t begin = users.size() * lane / n_lanes;
        const std::size_t end = users.size() * (lane + 1) / n_lanes;
        UserCache cache;
        for (std::size_t u = begin; u < end; ++u) {
          lane_sums[lane] +=
              user_forward(m, users[u].clicks, users[u].words, noises[u], beta_x, beta_y,
                           beta_cap, mode, cache, &lane_floored[lane]);
          user_backward(m, users[u].clicks, users[u].words, noises[u], mode, cache,
                        per_user_scale, lane_grads[lane].values);
        }
      });
    }
    for (auto& t : pool) t.join();
    for (std::size_t lane = 0; lane < n_lanes; ++lane) {
      sum += lane_sums[lane];
      for (std::size_t i = 0; i < grad.values.size(); ++i) {
        grad.values[i] += lane_grads[lane].values[i];
      }
      if (floored) *floored += lane_floored[lane];
    }
  }

  for (ParamGroup g : kAllGroups) {
    if (!all_finite(grad.group(m, g))) {
      throw VcmError(std::string("non-finite gradient in parameter group ") + group_name(g));
    }
  }

  ObjectiveBreakdown mean = scaled(sum, 1.0 / static_cast<double>(users.size()));
  mean.beta_x = beta_x;
  mean.beta_y = beta_y;
  return mean;
}

}  // namespace vcm
