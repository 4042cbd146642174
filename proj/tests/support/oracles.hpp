#pragma once

// Test-only reference implementations, written directly from the metric and
// gradient definitions. They deliberately share no code with the library
// paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "vcm/gradients.hpp"
#include "vcm/model.hpp"
#include "vcm/rng.hpp"

namespace oracle {

// Rank eligible items by descending score. Ties resolve to ascending index
// via stable_sort over an index-ordered list.
inline std::vector<std::uint32_t> brute_ranking(const std::vector<double>& scores,
                                                const std::set<std::uint32_t>& mask) {
  std::vector<std::uint32_t> items;
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    if (!mask.count(i)) items.push_back(i);
  }
  std::stable_sort(items.begin(), items.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
  return items;
}

inline double brute_recall(const std::vector<double>& scores, const std::set<std::uint32_t>& mask,
                           const std::set<std::uint32_t>& held, std::size_t r) {
  const auto ranked = brute_ranking(scores, mask);
  std::size_t hits = 0;
  for (std::size_t pos = 0; pos < ranked.size() && pos < r; ++pos) {
    if (held.count(ranked[pos])) ++hits;
  }
  const std::size_t denom = std::min(r, held.size());
  return static_cast<double>(hits) / static_cast<double>(denom);
}

inline double brute_ndcg(const std::vector<double>& scores, const std::set<std::uint32_t>& mask,
                         const std::set<std::uint32_t>& held, std::size_t r) {
  const auto ranked = brute_ranking(scores, mask);
  double dcg = 0.0;
  for (std::size_t pos = 0; pos < ranked.size() && pos < r; ++pos) {
    if (held.count(ranked[pos])) {
      dcg += (std::pow(2.0, 1.0) - 1.0) / (std::log(static_cast<double>(pos + 2)) / std::log(2.0));
    }
  }
  double ideal = 0.0;
  for (std::size_t pos = 0; pos < std::min(r, held.size()); ++pos) {
    ideal += 1.0 / (std::log(static_cast<double>(pos + 2)) / std::log(2.0));
  }
  return dcg / ideal;
}

// Expected NDCG@R of a uniformly random permutation, estimated by
// simulation: `eligible` items of which `held` are relevant.
inline double simulated_random_ndcg(std::size_t eligible, std::size_t held, std::size_t r,
                                    std::size_t sims, vcm::RngStream& rng) {
  double total = 0.0;
  std::vector<std::uint32_t> perm(eligible);
  for (std::uint32_t i = 0; i < eligible; ++i) perm[i] = i;
  for (std::size_t s = 0; s < sims; ++s) {
    vcm::shuffle(perm, rng);
    double dcg = 0.0;
    for (std::size_t pos = 0; pos < std::min(r, perm.size()); ++pos) {
      if (perm[pos] < held) dcg += 1.0 / std::log2(static_cast<double>(pos + 2));
    }
    double ideal = 0.0;
    for (std::size_t pos = 0; pos < std::min(r, held); ++pos) {
      ideal += 1.0 / std::log2(static_cast<double>(pos + 2));
    }
    total += dcg / ideal;
  }
  return total / static_cast<double>(sims);
}

// Central-difference gradient check of the batch objective. Returns the
// worst guarded relative error over all parameters; the guard floors the
// denominator at `denom_floor` so finite-difference noise on near-zero
// gradients does not dominate.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline GradCheckResult finite_difference_check(vcm::ModelParams& model,
                                               std::span<const vcm::UserRows> users,
                                               std::span<const vcm::UserNoise> noises,
                                               double beta_x, double beta_y, double beta_cap,
                                               vcm::ObjectiveMode mode, double h = 1e-5,
                                               double denom_floor = 1e-3) {
  vcm::GradientBuffer grad(model);
  vcm::compute_gradients(model, users, noises, beta_x, beta_y, beta_cap, mode, grad);

  GradCheckResult res;
  auto values = model.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up =
        vcm::batch_objective(model, users, noises, beta_x, beta_y, beta_cap, mode).total;
    values[i] = keep - h;
    const double dn =
        vcm::batch_objective(model, users, noises, beta_x, beta_y, beta_cap, mode).total;
    values[i] = keep;
    const double numeric = (up - dn) / (2.0 * h);
    const double analytic = grad.values[i];
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), denom_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
      res.analytic = analytic;
      res.numeric = numeric;
    }
  }
  return res;
}

// Deterministic parameter fill mirrored by the independent scripted forward
// pass whose outputs are frozen in the model tests.
inline void sin_fill(vcm::ModelParams& m) {
  for (vcm::ParamGroup g : vcm::kAllGroups) {
    const int gi = static_cast<int>(g);
    const auto& layers = m.layers(g);
    auto values = m.values();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      for (std::size_t i = 0; i < layer.out; ++i) {
        for (std::size_t j = 0; j < layer.in; ++j) {
          values[layer.w_offset + i * layer.in + j] =
              0.1 * std::sin(1.0 + 7.0 * gi + 3.0 * static_cast<double>(l) +
                             0.5 * static_cast<double>(i * layer.in + j));
        }
        values[layer.b_offset + i] =
            0.05 * std::cos(1.0 + 7.0 * gi + 3.0 * static_cast<double>(l) +
                            0.7 * static_cast<double>(i));
      }
    }
  }
}

}  // namespace oracle
