#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "vcm/common.hpp"
#include "vcm/data.hpp"
#include "vcm/linalg.hpp"
#include "vcm/model.hpp"

namespace vcm {

// Probability floor keeping log terms off -inf at pathological simplex
// corners; callers can count how often it fires via the `floored` argument.
inline constexpr double kLogProbFloor = 1e-12;

enum class TrainingVariant { vcm, vcm_se, vcm_od, vcm_nv };

inline const char* variant_name(TrainingVariant v) {
  switch (v) {
    case TrainingVariant::vcm: return "VCM";
    case TrainingVariant::vcm_se: return "VCM-Se";
    case TrainingVariant::vcm_od: return "VCM-OD";
    case TrainingVariant::vcm_nv: return "VCM-NV";
  }
  return "?";
}

inline TrainingVariant parse_variant(const std::string& s) {
  if (s == "VCM") return TrainingVariant::vcm;
  if (s == "VCM-Se") return TrainingVariant::vcm_se;
  if (s == "VCM-OD") return TrainingVariant::vcm_od;
  if (s == "VCM-NV") return TrainingVariant::vcm_nv;
  throw ConfigError("unknown variant '" + s + "'; valid variants: VCM, VCM-Se, VCM-OD, VCM-NV");
}

// The per-iteration objective shape. VCM-OD trains in two phases, so it maps
// to two modes; the other variants map to one each.
enum class ObjectiveMode { vcm, separate, od_phase1, od_phase2, nv };

struct ObjectiveBreakdown {
  double recon_x = 0.0;
  double recon_y = 0.0;
  double kl_prior_x = 0.0;
  double kl_prior_y = 0.0;
  double kl_xy = 0.0;
  double kl_yx = 0.0;
  double nv_penalty = 0.0;
  double total = 0.0;
  double beta_x = 0.0;
  double beta_y = 0.0;
};

// sum_i counts[i] * log probs[i] over nonzero counts, with the floor guard.
inline double multinomial_log_likelihood(std::span<const WordCount> counts,
                                         std::span<const double> probs,
                                         std::size_t* floored = nullptr) {
  double acc = 0.0;
  for (const auto& wc : counts) {
    double p = probs[wc.word];
    if (p < kLogProbFloor) {
      p = kLogProbFloor;
      if (floored) ++(*floored);
    }
    acc += static_cast<double>(wc.count) * std::log(p);
  }
  return acc;
}

// Binary-count overload for click rows.
inline double multinomial_log_likelihood(std::span<const std::uint32_t> indices,
                                         std::span<const double> probs,
                                         std::size_t* floored = nullptr) {
  double acc = 0.0;
  for (std::uint32_t i : indices) {
    double p = probs[i];
    if (p < kLogProbFloor) {
      p = kLogProbFloor;
      if (floored) ++(*floored);
    }
    acc += std::log(p);
  }
  return acc;
}

// Dense-count overload.
inline double multinomial_log_likelihood(const DenseVector& counts, const DenseVector& probs,
                                         std::size_t* floored = nullptr) {
  if (counts.size() != probs.size()) {
    throw ShapeError("multinomial_log_likelihood: counts dim " + std::to_string(counts.size()) +
                     " != probs dim " + std::to_string(probs.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0.0) continue;
    double p = probs[i];
    if (p < kLogProbFloor) {
      p = kLogProbFloor;
      if (floored) ++(*floored);
    }
    acc += counts[i] * std::log(p);
  }
  return acc;
}

// KL(q || N(0, I)) = sum_k 1/2 (sigma_k^2 + mu_k^2 - 1 - 2 ln sigma_k)
inline double kl_to_prior(const GaussianPosterior& q) {
  double acc = 0.0;
  for (std::size_t k = 0; k < q.dim(); ++k) {
    const double s = q.sigma[k];
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw VcmError("kl_to_prior: sigma must be positive and finite");
    }
    const double m = q.mu[k];
    acc += 0.5 * (s * s + m * m - 1.0) - std::log(s);
  }
  return acc;
}

// KL(q_a || q_b) for diagonal Gaussians:
//   sum_k ln(sigma_b/sigma_a) + (sigma_a^2 + (mu_a - mu_b)^2) / (2 sigma_b^2) - 1/2
inline double kl_between(const GaussianPosterior& a, const GaussianPosterior& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError("kl_between: dims " + std::to_string(a.dim()) + " and " +
                     std::to_string(b.dim()) + " differ");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    const double sa = a.sigma[k], sb = b.sigma[k];
    if (!(sa > 0.0) || !(sb > 0.0)) throw VcmError("kl_between: sigma must be positive");
    const double dm = a.mu[k] - b.mu[k];
    acc += std::log(sb / sa) + (sa * sa + dm * dm) / (2.0 * sb * sb) - 0.5;
  }
  return acc;
}

// ||mu_a - mu_b||_2^2, the variance-blind coupling used by VCM-NV.
inline double nv_penalty(const GaussianPosterior& a, const GaussianPosterior& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError("nv_penalty: dims " + std::to_string(a.dim()) + " and " +
                     std::to_string(b.dim()) + " differ");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    const double d = a.mu[k] - b.mu[k];
    acc += d * d;
  }
  return acc;
}

// Coefficients of each term in the maximized total, per mode. Freezing for
// VCM-OD is an update-time policy in the trainer; the objective (and hence
// the gradient) is always the true one for the active mode.
struct TermWeights {
  double recon_x = 0.0, recon_y = 0.0;
  double kl_prior_x = 0.0, kl_prior_y = 0.0;
  double kl_xy = 0.0, kl_yx = 0.0;
  double nv = 0.0;
};

inline TermWeights term_weights(ObjectiveMode mode, double beta_x, double beta_y) {
  TermWeights w;
  switch (mode) {
    case ObjectiveMode::vcm:
      w = {1.0, 1.0, -beta_x, -beta_y, -beta_x, -beta_y, 0.0};
      break;
    case ObjectiveMode::separate:
      w = {1.0, 1.0, -beta_x, -beta_y, 0.0, 0.0, 0.0};
      break;
    case ObjectiveMode::od_phase1:
      w = {0.0, 1.0, 0.0, -beta_y, 0.0, 0.0, 0.0};
      break;
    case ObjectiveMode::od_phase2:
      w = {1.0, 0.0, -beta_x, 0.0, -beta_x, 0.0, 0.0};
      break;
    case ObjectiveMode::nv:
      w = {1.0, 1.0, -beta_x, -beta_y, 0.0, 0.0, -0.5 * (beta_x + beta_y)};
      break;
  }
  return w;
}

// Assembles the per-user objective for the active mode from reconstruction
// terms and the two posteriors.
inline ObjectiveBreakdown per_user_objective(double recon_x, double recon_y,
                                             const GaussianPosterior& qx,
                                             const GaussianPosterior& qy, double beta_x,
                                             double beta_y, double beta_cap,
                                             ObjectiveMode mode) {
  if (!(beta_x >= 0.0 && beta_x <= beta_cap) || !(beta_y >= 0.0 && beta_y <= beta_cap)) {
    throw ConfigError("per_user_objective: beta must lie in [0, " + std::to_string(beta_cap) +
                      "]");
  }
  ObjectiveBreakdown b;
  b.recon_x = recon_x;
  b.recon_y = recon_y;
  b.kl_prior_x = kl_to_prior(qx);
  b.kl_prior_y = kl_to_prior(qy);
  b.kl_xy = kl_between(qx, qy);
  b.kl_yx = kl_between(qy, qx);
  b.nv_penalty = nv_penalty(qx, qy);
  b.beta_x = beta_x;
  b.beta_y = beta_y;
  const TermWeights w = term_weights(mode, beta_x, beta_y);
  b.total = w.recon_x * b.recon_x + w.recon_y * b.recon_y + w.kl_prior_x * b.kl_prior_x +
            w.kl_prior_y * b.kl_prior_y + w.kl_xy * b.kl_xy + w.kl_yx * b.kl_yx +
            w.nv * b.nv_penalty;
  return b;
}

inline ObjectiveBreakdown& operator+=(ObjectiveBreakdown& a, const ObjectiveBreakdown& b) {
  a.recon_x += b.recon_x;
  a.recon_y += b.recon_y;
  a.kl_prior_x += b.kl_prior_x;
  a.kl_prior_y += b.kl_prior_y;
  a.kl_xy += b.kl_xy;
  a.kl_yx += b.kl_yx;
  a.nv_penalty += b.nv_penalty;
  a.total += b.total;
  return a;
}

inline ObjectiveBreakdown scaled(ObjectiveBreakdown b, double s) {
  b.recon_x *= s;
  b.recon_y *= s;
  b.kl_prior_x *= s;
  b.kl_prior_y *= s;
  b.kl_xy *= s;
  b.kl_yx *= s;
  b.nv_penalty *= s;
  b.total *= s;
  return b;
}

}  // namespace vcm
