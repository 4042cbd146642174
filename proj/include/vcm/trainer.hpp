#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcm/common.hpp"
#include "vcm/data.hpp"
#include "vcm/evaluator.hpp"
#include "vcm/gradients.hpp"
#include "vcm/model.hpp"
#include "vcm/objective.hpp"
#include "vcm/pipeline.hpp"

namespace vcm {

struct TrainConfig {
  std::size_t latent_dim = 100;
  double beta_cap = 0.4;
  std::size_t anneal_steps = 40000;
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  TrainingVariant variant = TrainingVariant::vcm;
  std::size_t eval_R = 100;
  double dropout_rate = 0.5;
  std::size_t mc_samples = 1;
  std::vector<std::size_t> enc_x_hidden{600};
  std::vector<std::size_t> dec_x_hidden{600};
  std::vector<std::size_t> enc_y_hidden{500};
  std::vector<std::size_t> dec_y_hidden{};

  std::vector<std::string> validate() const {
    std::vector<std::string> issues;
    if (latent_dim == 0) issues.push_back("latent_dim must be >= 1");
    if (beta_cap < 0.0) issues.push_back("beta_cap must be >= 0");
    if (anneal_steps == 0) issues.push_back("anneal_steps must be >= 1");
    if (batch_size == 0) issues.push_back("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) issues.push_back("learning_rate must be > 0");
    if (eval_R == 0) issues.push_back("eval_R must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      issues.push_back("dropout_rate must be in [0, 1)");
    }
    if (mc_samples == 0) issues.push_back("mc_samples must be >= 1");
    return issues;
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"latent_dim", c.latent_dim},
                        {"beta_cap", c.beta_cap},
                        {"anneal_steps", c.anneal_steps},
                        {"batch_size", c.batch_size},
                        {"epochs", c.epochs},
                        {"learning_rate", c.learning_rate},
                        {"seed", c.seed},
                        {"variant", variant_name(c.variant)},
                        {"eval_R", c.eval_R},
                        {"dropout_rate", c.dropout_rate},
                        {"mc_samples", c.mc_samples},
                        {"enc_x_hidden", c.enc_x_hidden},
                        {"dec_x_hidden", c.dec_x_hidden},
                        {"enc_y_hidden", c.enc_y_hidden},
                        {"dec_y_hidden", c.dec_y_hidden}};
}

// Parses a config object; unknown keys and invalid values are all collected
// and reported together.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "latent_dim",   "beta_cap",     "anneal_steps", "batch_size",
      "epochs",       "learning_rate","seed",         "variant",
      "eval_R",       "dropout_rate", "mc_samples",   "enc_x_hidden",
      "dec_x_hidden", "enc_y_hidden", "dec_y_hidden"};
  std::vector<std::string> issues;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      issues.push_back("unknown config key '" + it.key() + "'");
    }
  }
  TrainConfig c;
  try {
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.beta_cap = j.value("beta_cap", c.beta_cap);
    c.anneal_steps = j.value("anneal_steps", c.anneal_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    c.eval_R = j.value("eval_R", c.eval_R);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.mc_samples = j.value("mc_samples", c.mc_samples);
    c.enc_x_hidden = j.value("enc_x_hidden", c.enc_x_hidden);
    c.dec_x_hidden = j.value("dec_x_hidden", c.dec_x_hidden);
    c.enc_y_hidden = j.value("enc_y_hidden", c.enc_y_hidden);
    c.dec_y_hidden = j.value("dec_y_hidden", c.dec_y_hidden);
  } catch (const std::exception& e) {
    issues.push_back(e.what());
  }
  for (const auto& v : c.validate()) issues.push_back(v);
  if (!issues.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& i : issues) msg += "\n  - " + i;
    throw ConfigError(msg);
  }
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw VcmError("cannot open config: " + path.string());
  return train_config_from_json(nlohmann::json::parse(in));
}

inline Architecture make_architecture(const TrainConfig& cfg, std::size_t n_items,
                                      std::size_t vocab_size) {
  Architecture arch;
  arch.n_items = n_items;
  arch.vocab_size = vocab_size;
  arch.latent_dim = cfg.latent_dim;
  arch.enc_x_hidden = cfg.enc_x_hidden;
  arch.dec_x_hidden = cfg.dec_x_hidden;
  arch.enc_y_hidden = cfg.enc_y_hidden;
  arch.dec_y_hidden = cfg.dec_y_hidden;
  return arch;
}

// beta(t) = min(beta_cap, t / anneal_steps); t counts gradient updates.
inline double anneal_beta(std::size_t iteration, std::size_t anneal_steps, double beta_cap) {
  if (anneal_steps == 0) throw ConfigError("anneal_beta: anneal_steps must be > 0");
  return std::min(beta_cap,
                  static_cast<double>(iteration) / static_cast<double>(anneal_steps));
}

// Standard bias-corrected Adam in gradient-ascent orientation.
struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st,
                      double lr) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw ShapeError("adam_step: params " + std::to_string(params.size()) + ", grads " +
                     std::to_string(grads.size()) + ", state " + std::to_string(st.m.size()));
  }
  if (!all_finite(grads)) throw VcmError("adam_step: non-finite gradient");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    params[i] += lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.epsilon);
  }
}

struct EpochStats {
  std::size_t epoch = 0;      // 1-based within the phase
  std::size_t iteration = 0;  // gradient updates completed in the phase
  int phase = 1;
  ObjectiveBreakdown mean;    // mean over the epoch's batches
  double val_metric = 0.0;    // NDCG@eval_R, or mean review log-likelihood in VCM-OD phase 1
  double wall_seconds = 0.0;  // not serialized; run wall-clock lives here only
};

struct TrainHistory {
  std::vector<EpochStats> rows;
};

struct TrainResult {
  enum class Status { completed, aborted_non_finite };
  ModelParams best;
  TrainHistory history;
  Status status = Status::completed;
  int best_phase = 1;
  std::size_t best_epoch = 0;  // 0 => initial parameters were never improved on
  double best_metric = 0.0;
  std::string diagnostic;
};

// History CSV: per-epoch ObjectiveBreakdown plus the selection metric.
// Deliberately excludes wall-clock so reruns are byte-identical.
inline void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VcmError("cannot open history file for writing: " + path.string());
  out << "epoch,iteration,phase,recon_x,recon_y,kl_prior_x,kl_prior_y,kl_xy,kl_yx,"
         "nv_penalty,total,beta_x,beta_y,val_metric\n";
  for (const auto& r : h.rows) {
    out << r.epoch << ',' << r.iteration << ',' << r.phase << ','
        << format_double(r.mean.recon_x) << ',' << format_double(r.mean.recon_y) << ','
        << format_double(r.mean.kl_prior_x) << ',' << format_double(r.mean.kl_prior_y) << ','
        << format_double(r.mean.kl_xy) << ',' << format_double(r.mean.kl_yx) << ','
        << format_double(r.mean.nv_penalty) << ',' << format_double(r.mean.total) << ','
        << format_double(r.mean.beta_x) << ',' << format_double(r.mean.beta_y) << ','
        << format_double(r.val_metric) << '\n';
  }
}

// Mean review log-likelihood at the posterior mean (deterministic); the
// model-selection metric for VCM-OD phase 1.
inline double mean_review_loglik(const ModelParams& m, const ReviewMatrix& reviews) {
  double acc = 0.0;
  for (std::size_t u = 0; u < reviews.rows.size(); ++u) {
    if (reviews.rows[u].empty()) continue;
    GaussianPosterior q = encode_reviews(m, reviews.rows[u]);
    DenseVector p = decode_words(m, q.mu);
    acc += multinomial_log_likelihood(std::span<const WordCount>(reviews.rows[u]), p);
  }
  return acc / static_cast<double>(reviews.rows.size());
}

namespace detail {

struct PhaseSpec {
  ObjectiveMode mode;
  bool train_x = true;
  bool train_y = true;
  bool dropout_x = true;
  bool select_by_review_ll = false;
};

inline std::vector<PhaseSpec> phases_for(TrainingVariant v) {
  switch (v) {
    case TrainingVariant::vcm:
      return {{ObjectiveMode::vcm, true, true, true, false}};
    case TrainingVariant::vcm_se:
      return {{ObjectiveMode::separate, true, true, true, false}};
    case TrainingVariant::vcm_nv:
      return {{ObjectiveMode::nv, true, true, true, false}};
    case TrainingVariant::vcm_od:
      // Teacher first: the review stream trains alone (no dropout is used
      // anywhere on VAE_y), then freezes while the click stream trains
      // against it through the one-directional KL.
      return {{ObjectiveMode::od_phase1, false, true, false, true},
              {ObjectiveMode::od_phase2, true, false, true, false}};
  }
  throw ConfigError("phases_for: bad variant");
}

}  // namespace detail

// Collaborative training with annealed stochastic gradient ascent: seeded
// per-epoch user shuffles, per-user reparameterization noise, batch-mean
// gradients, Adam updates, and best-validation checkpoint retention.
// Deterministic for a fixed (config, data, threads) triple; bit-identical
// reruns are guaranteed single-threaded.
inline TrainResult train(const TrainConfig& cfg, const SplitDataset& split,
                         const ReviewMatrix& reviews, std::size_t threads = 1,
                         const std::filesystem::path& history_csv = {}) {
  {
    const auto issues = cfg.validate();
    if (!issues.empty()) {
      std::string msg = "invalid train config:";
      for (const auto& i : issues) msg += "\n  - " + i;
      throw ConfigError(msg);
    }
  }
  if (split.n_users == 0) throw VcmError("train: empty dataset");
  if (reviews.rows.size() != split.n_users) {
    throw ShapeError("train: review matrix has " + std::to_string(reviews.rows.size()) +
                     " rows for " + std::to_string(split.n_users) + " users");
  }

  const Architecture arch = make_architecture(cfg, split.n_items, reviews.vocab_size);
  ModelParams model(arch);
  model.init_random(RngStream(cfg.seed).derive(kInitSalt));

  TrainResult result;
  result.best = model;

  const auto phases = detail::phases_for(cfg.variant);
  const auto t_start = std::chrono::steady_clock::now();

  auto finish = [&](TrainResult::Status status, const std::string& diagnostic) {
    result.status = status;
    result.diagnostic = diagnostic;
    if (!history_csv.empty()) write_history_csv(result.history, history_csv);
    return result;
  };

  for (std::size_t phase_idx = 0; phase_idx < phases.size(); ++phase_idx) {
    const auto& phase = phases[phase_idx];
    AdamState adam(model.size());
    GradientBuffer grad(model);
    RngStream shuffle_root = RngStream(cfg.seed).derive(kShuffleSalt).derive(phase_idx);
    RngStream noise_root = RngStream(cfg.seed).derive(kNoiseSalt).derive(phase_idx);

    ModelParams phase_best = model;
    double phase_best_metric = -std::numeric_limits<double>::infinity();
    std::size_t phase_best_epoch = 0;
    std::size_t iteration = 0;

    std::vector<std::size_t> order(split.n_users);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      RngStream epoch_rng = shuffle_root.derive(epoch);
      shuffle(order, epoch_rng);

      ObjectiveBreakdown epoch_sum;
      std::size_t n_batches = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const double beta = anneal_beta(iteration, cfg.anneal_steps, cfg.beta_cap);

        std::vector<UserRows> rows;
        std::vector<UserNoise> noises;
        rows.reserve(end - start);
        noises.reserve(end - start);
        RngStream iter_rng = noise_root.derive(iteration);
        for (std::size_t pos = start; pos < end; ++pos) {
          const std::size_t u = order[pos];
          rows.push_back({split.train[u], reviews.rows[u]});
          noises.push_back(draw_user_noise(arch, iter_rng.derive(pos - start), cfg.dropout_rate,
                                           phase.dropout_x, cfg.mc_samples));
        }

        ObjectiveBreakdown mean;
        try {
          mean = compute_gradients(model, rows, noises, beta, beta, cfg.beta_cap, phase.mode,
                                   grad, threads);
        } catch (const VcmError& e) {
          return finish(TrainResult::Status::aborted_non_finite, e.what());
        }
        if (!std::isfinite(mean.total)) {
          return finish(TrainResult::Status::aborted_non_finite,
                        "non-finite objective at phase " + std::to_string(phase_idx + 1) +
                            ", epoch " + std::to_string(epoch));
        }

        if (!phase.train_x) {
          auto gx = grad.group(model, ParamGroup::enc_x);
          std::fill(gx.begin(), gx.end(), 0.0);
          auto gdx = grad.group(model, ParamGroup::dec_x);
          std::fill(gdx.begin(), gdx.end(), 0.0);
        }
        if (!phase.train_y) {
          auto gy = grad.group(model, ParamGroup::enc_y);
          std::fill(gy.begin(), gy.end(), 0.0);
          auto gdy = grad.group(model, ParamGroup::dec_y);
          std::fill(gdy.begin(), gdy.end(), 0.0);
        }

        try {
          adam_step(model.values(), grad.values, adam, cfg.learning_rate);
        } catch (const VcmError& e) {
          return finish(TrainResult::Status::aborted_non_finite, e.what());
        }
        ++iteration;
        epoch_sum += mean;
        ++n_batches;
      }

      EpochStats row;
      row.epoch = epoch;
      row.iteration = iteration;
      row.phase = static_cast<int>(phase_idx + 1);
      row.mean = scaled(epoch_sum, 1.0 / static_cast<double>(n_batches));
      row.mean.beta_x = anneal_beta(iteration > 0 ? iteration - 1 : 0, cfg.anneal_steps,
                                    cfg.beta_cap);
      row.mean.beta_y = row.mean.beta_x;
      row.val_metric = phase.select_by_review_ll
                           ? mean_review_loglik(model, reviews)
                           : mean_ndcg(model, split, reviews, cfg.eval_R,
                                       EvalSplit::validation, threads);
      row.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      result.history.rows.push_back(row);

      if (row.val_metric > phase_best_metric) {
        phase_best_metric = row.val_metric;
        phase_best = model;
        phase_best_epoch = epoch;
      }
    }

    model = phase_best;  // carry the phase's best parameters forward
    result.best_phase = static_cast<int>(phase_idx + 1);
    result.best_epoch = phase_best_epoch;
    result.best_metric = phase_best_metric;
  }

  result.best = model;
  return finish(TrainResult::Status::completed, "");
}

}  // namespace vcm
