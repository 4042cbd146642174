#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vcm/common.hpp"
#include "vcm/data.hpp"
#include "vcm/gradients.hpp"
#include "vcm/model.hpp"
#include "vcm/objective.hpp"

namespace vcm {

// Items sorted by descending score with training items removed; ties broken
// by ascending item index for reproducibility.
inline std::vector<std::uint32_t> rank_items(const DenseVector& scores,
                                             std::span<const std::uint32_t> training_items) {
  std::vector<bool> masked(scores.size(), false);
  for (std::uint32_t i : training_items) masked[i] = true;
  std::vector<std::uint32_t> order;
  order.reserve(scores.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    if (!masked[i]) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

// Recall@R = hits in the top R / min(R, |held_out|).
inline double recall_at_r(std::span<const std::uint32_t> ranked,
                          std::span<const std::uint32_t> held_out, std::size_t r) {
  if (r < 1) throw ConfigError("recall_at_r: R must be >= 1");
  if (held_out.empty()) throw VcmError("recall_at_r: empty held-out set");
  std::size_t hits = 0;
  const std::size_t top = std::min(r, ranked.size());
  for (std::size_t pos = 0; pos < top; ++pos) {
    if (std::binary_search(held_out.begin(), held_out.end(), ranked[pos])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(std::min(r, held_out.size()));
}

// NDCG@R with binary gains: DCG = sum_{r=1..R} I[hit at r] / log2(r+1),
// normalized by the ideal DCG with all min(R, |held_out|) hits on top.
// The log base cancels in the ratio; base 2 is the recorded convention.
inline double ndcg_at_r(std::span<const std::uint32_t> ranked,
                        std::span<const std::uint32_t> held_out, std::size_t r) {
  if (r < 1) throw ConfigError("ndcg_at_r: R must be >= 1");
  if (held_out.empty()) throw VcmError("ndcg_at_r: empty held-out set");
  double dcg = 0.0;
  const std::size_t top = std::min(r, ranked.size());
  for (std::size_t pos = 0; pos < top; ++pos) {
    if (std::binary_search(held_out.begin(), held_out.end(), ranked[pos])) {
      dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
    }
  }
  double ideal = 0.0;
  const std::size_t best = std::min(r, held_out.size());
  for (std::size_t pos = 0; pos < best; ++pos) {
    ideal += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
  }
  return dcg / ideal;
}

enum class PredictionMode { standard, cross_domain };
enum class EvalSplit { validation, test };

inline const char* mode_name(PredictionMode m) {
  return m == PredictionMode::standard ? "standard" : "cross-domain";
}
inline const char* split_name(EvalSplit s) {
  return s == EvalSplit::validation ? "validation" : "test";
}

struct UserMetrics {
  std::size_t user = 0;
  bool included = false;  // false when the held-out set is empty
  std::vector<double> recall;  // aligned with MetricReport::r_values
  std::vector<double> ndcg;
};

struct MetricSummary {
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean
};

struct MetricReport {
  PredictionMode mode = PredictionMode::standard;
  EvalSplit split = EvalSplit::test;
  std::vector<std::size_t> r_values;
  std::vector<UserMetrics> users;
  std::vector<MetricSummary> recall;  // aligned with r_values
  std::vector<MetricSummary> ndcg;
  std::size_t n_included = 0;
  std::size_t n_excluded = 0;
};

namespace detail {

inline MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    const double var = ss / static_cast<double>(xs.size() - 1);
    s.se = std::sqrt(var / static_cast<double>(xs.size()));
  }
  return s;
}

}  // namespace detail

// Per-user ranking metrics over the chosen held-out split, aggregated
// "averaged across all users" with standard errors. Training items are
// masked from the ranking; users with an empty held-out set are excluded
// and counted.
inline MetricReport evaluate(const ModelParams& m, const SplitDataset& split,
                             const ReviewMatrix& reviews, PredictionMode mode,
                             std::vector<std::size_t> r_values, EvalSplit which,
                             std::size_t threads = 1) {
  if (r_values.empty()) throw ConfigError("evaluate: need at least one R value");
  MetricReport report;
  report.mode = mode;
  report.split = which;
  report.r_values = std::move(r_values);
  report.users.assign(split.n_users, UserMetrics{});

  const auto& held = (which == EvalSplit::validation) ? split.validation : split.test;

  auto eval_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      UserMetrics& um = report.users[u];
      um.user = u;
      if (held[u].empty()) continue;
      DenseVector scores = (mode == PredictionMode::standard)
                               ? predict_scores(m, split.train[u])
                               : predict_cross_domain(m, reviews.rows[u]);
      const auto ranked = rank_items(scores, split.train[u]);
      um.included = true;
      um.recall.reserve(report.r_values.size());
      um.ndcg.reserve(report.r_values.size());
      for (std::size_t r : report.r_values) {
        um.recall.push_back(recall_at_r(ranked, held[u], r));
        um.ndcg.push_back(ndcg_at_r(ranked, held[u], r));
      }
    }
  };

  if (threads <= 1 || split.n_users < 2) {
    eval_range(0, split.n_users);
  } else {
    const std::size_t n_lanes = std::min(threads, split.n_users);
    std::vector<std::thread> pool;
    for (std::size_t lane = 0; lane < n_lanes; ++lane) {
      pool.emplace_back([&, lane]() {
        eval_range(split.n_users * lane / n_lanes, split.n_users * (lane + 1) / n_lanes);
      });
    }
    for (auto& t : pool) t.join();
  }

  for (std::size_t ri = 0; ri < report.r_values.size(); ++ri) {
    std::vector<double> rec, nd;
    for (const auto& um : report.users) {
      if (!um.included) continue;
      rec.push_back(um.recall[ri]);
      nd.push_back(um.ndcg[ri]);
    }
    report.recall.push_back(detail::summarize(rec));
    report.ndcg.push_back(detail::summarize(nd));
    report.n_included = rec.size();
  }
  report.n_excluded = split.n_users - report.n_included;
  return report;
}

// Convenience: mean NDCG@R in standard prediction mode (used for per-epoch
// validation during training).
inline double mean_ndcg(const ModelParams& m, const SplitDataset& split,
                        const ReviewMatrix& reviews, std::size_t r, EvalSplit which,
                        std::size_t threads = 1) {
  MetricReport rep = evaluate(m, split, reviews, PredictionMode::standard, {r}, which, threads);
  return rep.ndcg.at(0).mean;
}

struct CapacityBucket {
  std::size_t lo = 0;                                   // inclusive
  std::size_t hi = std::numeric_limits<std::size_t>::max();  // exclusive
  std::size_t count = 0;
  double mean_capacity = 0.0;
  double mean_ndcg = 0.0;
};

struct CapacityReport {
  std::vector<std::size_t> activity;     // training-click count per user
  std::vector<double> capacity;          // c_hat per user: KL(q_x || prior)
  std::vector<CapacityBucket> buckets;
};

// Capacity diagnostics: c_hat_u is the click posterior's KL to the prior in
// inference mode; users are bucketed by training-click count between the
// given edges (last bucket open-ended). Empty buckets are reported empty.
inline CapacityReport capacity_report(const ModelParams& m, const SplitDataset& split,
                                      const std::vector<std::size_t>& bucket_edges,
                                      std::size_t ndcg_r, EvalSplit which) {
  if (bucket_edges.empty()) throw ConfigError("capacity_report: need at least one bucket edge");
  CapacityReport rep;
  rep.activity.resize(split.n_users);
  rep.capacity.resize(split.n_users);
  RngStream unused(0);
  for (std::size_t u = 0; u < split.n_users; ++u) {
    rep.activity[u] = split.train[u].size();
    rep.capacity[u] = kl_to_prior(encode_clicks(m, split.train[u], unused, /*training=*/false));
  }
  ReviewMatrix no_reviews;  // standard mode never touches review rows
  no_reviews.n_users = split.n_users;
  no_reviews.rows.resize(split.n_users);
  MetricReport metrics =
      evaluate(m, split, no_reviews, PredictionMode::standard, {ndcg_r}, which);

  rep.buckets.resize(bucket_edges.size());
  for (std::size_t b = 0; b < bucket_edges.size(); ++b) {
    rep.buckets[b].lo = bucket_edges[b];
    rep.buckets[b].hi = (b + 1 < bucket_edges.size()) ? bucket_edges[b + 1]
                                                      : std::numeric_limits<std::size_t>::max();
  }
  std::vector<double> cap_sum(rep.buckets.size(), 0.0);
  std::vector<double> ndcg_sum(rep.buckets.size(), 0.0);
  std::vector<std::size_t> ndcg_n(rep.buckets.size(), 0);
  for (std::size_t u = 0; u < split.n_users; ++u) {
    for (std::size_t b = 0; b < rep.buckets.size(); ++b) {
      if (rep.activity[u] >= rep.buckets[b].lo && rep.activity[u] < rep.buckets[b].hi) {
        ++rep.buckets[b].count;
        cap_sum[b] += rep.capacity[u];
        if (metrics.users[u].included) {
          ndcg_sum[b] += metrics.users[u].ndcg[0];
          ++ndcg_n[b];
        }
        break;
      }
    }
  }
  for (std::size_t b = 0; b < rep.buckets.size(); ++b) {
    if (rep.buckets[b].count > 0) {
      rep.buckets[b].mean_capacity = cap_sum[b] / static_cast<double>(rep.buckets[b].count);
    }
    if (ndcg_n[b] > 0) rep.buckets[b].mean_ndcg = ndcg_sum[b] / static_cast<double>(ndcg_n[b]);
  }
  return rep;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ConfigError("spearman: need two equal-length series of size >= 2");
  }
  auto ranks = [](std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
    std::vector<double> rank(xs.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
      i = j + 1;
    }
    return rank;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    mean_a += ra[i];
    mean_b += rb[i];
  }
  mean_a /= static_cast<double>(ra.size());
  mean_b /= static_cast<double>(rb.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean_a;
    const double db = rb[i] - mean_b;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

// Top-k vocabulary words by decoded probability p_u = softmax(dec_y(mu_y)).
// With restrict_to_used, only words present in the user's document are
// eligible. Ties break by word rank order.
inline std::vector<std::pair<std::string, double>> top_words_report(
    const ModelParams& m, std::span<const WordCount> words, const Vocabulary& vocab,
    std::size_t k, bool restrict_to_used = false) {
  if (k < 1) throw ConfigError("top_words_report: k must be >= 1");
  GaussianPosterior q = encode_reviews(m, words);
  DenseVector p = decode_words(m, q.mu);
  std::vector<std::uint32_t> eligible;
  if (restrict_to_used) {
    for (const auto& wc : words) eligible.push_back(wc.word);
  } else {
    eligible.resize(p.size());
    std::iota(eligible.begin(), eligible.end(), 0);
  }
  std::sort(eligible.begin(), eligible.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  std::vector<std::pair<std::string, double>> out;
  const std::size_t take = std::min(k, eligible.size());
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.emplace_back(vocab.words.at(eligible[i]), p[eligible[i]]);
  }
  return out;
}

// ---- report files ----

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_metric_csv(const MetricReport& rep, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VcmError("cannot open for writing: " + path.string());
  out << "user,included";
  for (std::size_t r : rep.r_values) out << ",recall@" << r << ",ndcg@" << r;
  out << '\n';
  for (const auto& um : rep.users) {
    out << um.user << ',' << (um.included ? 1 : 0);
    for (std::size_t ri = 0; ri < rep.r_values.size(); ++ri) {
      if (um.included) {
        out << ',' << format_double(um.recall[ri]) << ',' << format_double(um.ndcg[ri]);
      } else {
        out << ",,";
      }
    }
    out << '\n';
  }
}

inline nlohmann::json metric_summary_json(const MetricReport& rep,
                                          const std::string& checkpoint_hash,
                                          const nlohmann::json& config_echo) {
  nlohmann::json j;
  j["mode"] = mode_name(rep.mode);
  j["split"] = split_name(rep.split);
  j["n_included"] = rep.n_included;
  j["n_excluded"] = rep.n_excluded;
  j["checkpoint_hash"] = checkpoint_hash;
  j["config"] = config_echo;
  nlohmann::json per_r = nlohmann::json::array();
  for (std::size_t ri = 0; ri < rep.r_values.size(); ++ri) {
    per_r.push_back({{"R", rep.r_values[ri]},
                     {"recall_mean", rep.recall[ri].mean},
                     {"recall_se", rep.recall[ri].se},
                     {"ndcg_mean", rep.ndcg[ri].mean},
                     {"ndcg_se", rep.ndcg[ri].se}});
  }
  j["metrics"] = std::move(per_r);
  return j;
}

}  // namespace vcm
