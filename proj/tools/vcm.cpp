// Command-line surface for the variational collaborative model:
//   preprocess | train | evaluate | ablate | diagnose
// Exit codes: 0 success, 1 validation error, 2 runtime error.
// Anything that affects results lives in config files; flags carry paths,
// thread count and output selection only, so the written manifest is a
// complete replay record.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vcm/vcm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct TsvReadResult {
  std::vector<vcm::RawInteraction> interactions;
  std::vector<vcm::RawReview> reviews;
  std::size_t malformed = 0;
  std::size_t total = 0;
};

std::size_t read_interactions_tsv(const fs::path& path,
                                  std::vector<vcm::RawInteraction>& out, std::size_t& total) {
  std::ifstream in(path);
  if (!in) throw vcm::ConfigError("cannot open interactions file: " + path.string());
  std::size_t malformed = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++total;
    const auto t1 = line.find('\t');
    const auto t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      ++malformed;
      continue;
    }
    vcm::RawInteraction r;
    r.user = line.substr(0, t1);
    r.item = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string rating_str = line.substr(t2 + 1);
    try {
      std::size_t pos = 0;
      r.rating = std::stod(rating_str, &pos);
      if (pos != rating_str.size() || r.user.empty() || r.item.empty() ||
          !std::isfinite(r.rating)) {
        ++malformed;
        continue;
      }
    } catch (const std::exception&) {
      ++malformed;
      continue;
    }
    out.push_back(std::move(r));
  }
  return malformed;
}

std::size_t read_reviews_tsv(const fs::path& path, std::vector<vcm::RawReview>& out,
                             std::size_t& total) {
  std::ifstream in(path);
  if (!in) throw vcm::ConfigError("cannot open reviews file: " + path.string());
  std::size_t malformed = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++total;
    const auto t1 = line.find('\t');
    if (t1 == std::string::npos || t1 == 0) {
      ++malformed;
      continue;
    }
    out.push_back({line.substr(0, t1), line.substr(t1 + 1)});
  }
  return malformed;
}

std::vector<std::size_t> parse_size_list(const std::string& csv, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(tok)));
    } catch (const std::exception&) {
      throw vcm::ConfigError(std::string("cannot parse ") + what + " entry '" + tok + "'");
    }
  }
  if (out.empty()) throw vcm::ConfigError(std::string("empty ") + what + " list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  for (std::size_t v : parse_size_list(csv, "seed")) out.push_back(v);
  return out;
}

vcm::EvalSplit parse_split(const std::string& s) {
  if (s == "test") return vcm::EvalSplit::test;
  if (s == "validation") return vcm::EvalSplit::validation;
  throw vcm::ConfigError("unknown split '" + s + "'; valid: test, validation");
}

vcm::PredictionMode parse_mode(const std::string& s) {
  if (s == "standard") return vcm::PredictionMode::standard;
  if (s == "cross-domain") return vcm::PredictionMode::cross_domain;
  throw vcm::ConfigError("unknown mode '" + s + "'; valid: standard, cross-domain");
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw vcm::ConfigError("cannot open config: " + path.string());
  return json::parse(in);
}

int cmd_preprocess(const std::string& interactions_path, const std::string& reviews_path,
                   const std::string& config_path, const std::string& out_dir) {
  vcm::PreprocessConfig cfg;
  if (!config_path.empty()) cfg = vcm::preprocess_config_from_json(load_json_file(config_path));

  fs::create_directories(out_dir);
  vcm::RunManifest manifest;
  manifest.command = "preprocess";
  manifest.config = vcm::preprocess_config_to_json(cfg);
  manifest.dataset_path = interactions_path + "," + reviews_path;
  std::uint64_t in_hash = vcm::hash_file(interactions_path);
  in_hash = vcm::hash_file(reviews_path, in_hash);
  char hash_buf[20];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(in_hash));
  manifest.dataset_hash = hash_buf;
  manifest.seed = cfg.seed;
  manifest.output_paths = {{"dataset", out_dir}};
  manifest.started_at = vcm::iso8601_now();
  manifest.write(fs::path(out_dir) / "manifest.json");

  TsvReadResult tsv;
  tsv.malformed += read_interactions_tsv(interactions_path, tsv.interactions, tsv.total);
  tsv.malformed += read_reviews_tsv(reviews_path, tsv.reviews, tsv.total);
  if (tsv.malformed > 0) {
    std::cerr << "skipped " << tsv.malformed << " malformed row(s) of " << tsv.total << "\n";
    if (10 * tsv.malformed > tsv.total) {
      throw vcm::VcmError("more than 10% of input rows are malformed; aborting");
    }
  }

  vcm::ProcessedDataset ds = vcm::preprocess(tsv.interactions, tsv.reviews, cfg);
  vcm::save_dataset(ds, out_dir);

  const vcm::DatasetStats stats = vcm::dataset_stats(ds.full_clicks());
  json stats_json = {{"users", stats.users},
                     {"items", stats.items},
                     {"interactions", stats.interactions},
                     {"sparsity", stats.sparsity},
                     {"skipped_malformed_rows", tsv.malformed},
                     {"zero_review_users", ds.zero_review_users.size()}};
  {
    std::ofstream out(fs::path(out_dir) / "stats.json", std::ios::binary);
    out << stats_json.dump(2) << '\n';
  }
  std::cout << stats_json.dump(2) << '\n';

  manifest.finished_at = vcm::iso8601_now();
  manifest.status = "completed";
  manifest.write(fs::path(out_dir) / "manifest.json");
  return kExitOk;
}

int cmd_train(const std::string& dataset_dir, const std::string& config_path,
              const std::string& out_dir, std::size_t threads) {
  const vcm::TrainConfig cfg = vcm::load_train_config(config_path);
  const vcm::ProcessedDataset ds = vcm::load_dataset(dataset_dir);

  fs::create_directories(out_dir);
  vcm::RunManifest manifest;
  manifest.command = "train";
  manifest.config = vcm::train_config_to_json(cfg);
  manifest.dataset_path = dataset_dir;
  manifest.dataset_hash = vcm::hash_directory(dataset_dir);
  manifest.seed = cfg.seed;
  manifest.output_paths = {{"checkpoint", (fs::path(out_dir) / "checkpoint.json").string()},
                           {"history", (fs::path(out_dir) / "history.csv").string()}};
  manifest.started_at = vcm::iso8601_now();
  manifest.write(fs::path(out_dir) / "manifest.json");

  vcm::TrainResult result =
      vcm::train(cfg, ds.split, ds.reviews, threads, fs::path(out_dir) / "history.csv");
  result.best.save(fs::path(out_dir) / "checkpoint.json", cfg.seed);

  manifest.finished_at = vcm::iso8601_now();
  if (result.status != vcm::TrainResult::Status::completed) {
    manifest.status = "aborted";
    manifest.write(fs::path(out_dir) / "manifest.json");
    std::cerr << "training aborted: " << result.diagnostic
              << " (best checkpoint so far was saved)\n";
    return kExitRuntime;
  }
  manifest.status = "completed";
  manifest.write(fs::path(out_dir) / "manifest.json");
  std::cout << "best " << (cfg.variant == vcm::TrainingVariant::vcm_od ? "phase-2 " : "")
            << "validation metric " << result.best_metric << " at epoch " << result.best_epoch
            << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& dataset_dir,
                 const std::string& mode_str, const std::string& split_str,
                 const std::string& r_csv, const std::string& out_dir, std::size_t threads) {
  const vcm::PredictionMode mode = parse_mode(mode_str);
  const vcm::EvalSplit split = parse_split(split_str);
  const std::vector<std::size_t> r_values = parse_size_list(r_csv, "R");

  const vcm::ModelParams model = vcm::ModelParams::load(checkpoint_path);
  const vcm::ProcessedDataset ds = vcm::load_dataset(dataset_dir);

  fs::create_directories(out_dir);
  vcm::RunManifest manifest;
  manifest.command = "evaluate";
  manifest.config = {{"checkpoint", checkpoint_path},
                     {"mode", mode_str},
                     {"split", split_str},
                     {"R", r_values}};
  manifest.dataset_path = dataset_dir;
  manifest.dataset_hash = vcm::hash_directory(dataset_dir);
  manifest.output_paths = {{"metrics_csv", (fs::path(out_dir) / "metrics.csv").string()},
                           {"summary", (fs::path(out_dir) / "summary.json").string()}};
  manifest.started_at = vcm::iso8601_now();
  manifest.write(fs::path(out_dir) / "manifest.json");

  const vcm::MetricReport report =
      vcm::evaluate(model, ds.split, ds.reviews, mode, r_values, split, threads);
  vcm::write_metric_csv(report, fs::path(out_dir) / "metrics.csv");
  const json summary =
      vcm::metric_summary_json(report, vcm::hash_file_hex(checkpoint_path), manifest.config);
  {
    std::ofstream out(fs::path(out_dir) / "summary.json", std::ios::binary);
    out << summary.dump(2) << '\n';
  }
  std::cout << summary.dump(2) << '\n';

  manifest.finished_at = vcm::iso8601_now();
  manifest.status = "completed";
  manifest.write(fs::path(out_dir) / "manifest.json");
  return kExitOk;
}

int cmd_ablate(const std::string& dataset_dir, const std::string& config_path,
               const std::string& out_dir, const std::string& seeds_csv, std::size_t table_r,
               std::size_t threads) {
  const vcm::TrainConfig base = vcm::load_train_config(config_path);
  const std::vector<std::uint64_t> seeds = parse_seed_list(seeds_csv);
  const vcm::ProcessedDataset ds = vcm::load_dataset(dataset_dir);

  fs::create_directories(out_dir);
  vcm::RunManifest manifest;
  manifest.command = "ablate";
  manifest.config = vcm::train_config_to_json(base);
  manifest.config["seeds"] = seeds;
  manifest.config["table_R"] = table_r;
  manifest.dataset_path = dataset_dir;
  manifest.dataset_hash = vcm::hash_directory(dataset_dir);
  manifest.seed = base.seed;
  manifest.output_paths = {{"table", (fs::path(out_dir) / "ablation.csv").string()},
                           {"summary", (fs::path(out_dir) / "ablation_summary.json").string()}};
  manifest.started_at = vcm::iso8601_now();
  manifest.write(fs::path(out_dir) / "manifest.json");

  const std::vector<vcm::TrainingVariant> variants = {
      vcm::TrainingVariant::vcm_se, vcm::TrainingVariant::vcm_od, vcm::TrainingVariant::vcm_nv,
      vcm::TrainingVariant::vcm};

  std::ofstream runs_csv(fs::path(out_dir) / "ablation.csv", std::ios::binary);
  runs_csv << "variant,seed,ndcg@" << table_r << ",status\n";
  json summary = json::array();
  bool any_failed = false;
  for (const auto variant : variants) {
    std::vector<double> scores;
    for (const std::uint64_t seed : seeds) {
      vcm::TrainConfig cfg = base;
      cfg.variant = variant;
      cfg.seed = seed;
      try {
        vcm::TrainResult result = vcm::train(cfg, ds.split, ds.reviews, threads);
        const double ndcg = vcm::mean_ndcg(result.best, ds.split, ds.reviews, table_r,
                                           vcm::EvalSplit::test, threads);
        scores.push_back(ndcg);
        runs_csv << vcm::variant_name(variant) << ',' << seed << ','
                 << vcm::format_double(ndcg) << ",ok\n";
      } catch (const std::exception& e) {
        any_failed = true;
        runs_csv << vcm::variant_name(variant) << ',' << seed << ",,failed\n";
        std::cerr << vcm::variant_name(variant) << " seed " << seed << " failed: " << e.what()
                  << "\n";
      }
    }
    double mean = 0.0, se = 0.0;
    if (!scores.empty()) {
      for (double s : scores) mean += s;
      mean /= static_cast<double>(scores.size());
      if (scores.size() > 1) {
        double ss = 0.0;
        for (double s : scores) ss += (s - mean) * (s - mean);
        se = std::sqrt(ss / static_cast<double>(scores.size() - 1) /
                       static_cast<double>(scores.size()));
      }
    }
    summary.push_back({{"variant", vcm::variant_name(variant)},
                       {"R", table_r},
                       {"runs", scores.size()},
                       {"ndcg_mean", mean},
                       {"ndcg_se", se}});
    std::cout << vcm::variant_name(variant) << ": NDCG@" << table_r << " = " << mean << " +- "
              << se << " over " << scores.size() << " seed(s)\n";
  }
  {
    std::ofstream out(fs::path(out_dir) / "ablation_summary.json", std::ios::binary);
    out << summary.dump(2) << '\n';
  }

  manifest.finished_at = vcm::iso8601_now();
  manifest.status = any_failed ? "completed_with_failures" : "completed";
  manifest.write(fs::path(out_dir) / "manifest.json");
  return kExitOk;
}

int cmd_diagnose(const std::string& checkpoint_path, const std::string& dataset_dir,
                 const std::string& out_dir, const std::string& buckets_csv, std::size_t ndcg_r,
                 const std::string& split_str, std::size_t top_k, long user_index,
                 bool restrict_used) {
  const vcm::EvalSplit split = parse_split(split_str);
  const std::vector<std::size_t> edges = parse_size_list(buckets_csv, "bucket edge");
  const vcm::ModelParams model = vcm::ModelParams::load(checkpoint_path);
  const vcm::ProcessedDataset ds = vcm::load_dataset(dataset_dir);
  if (user_index < 0 || static_cast<std::size_t>(user_index) >= ds.split.n_users) {
    throw vcm::ConfigError("--user out of range; dataset has " +
                           std::to_string(ds.split.n_users) + " users");
  }

  fs::create_directories(out_dir);
  vcm::RunManifest manifest;
  manifest.command = "diagnose";
  manifest.config = {{"checkpoint", checkpoint_path}, {"buckets", edges},
                     {"ndcg_R", ndcg_r},              {"split", split_str},
                     {"top_words", top_k},            {"user", user_index},
                     {"restrict_used", restrict_used}};
  manifest.dataset_path = dataset_dir;
  manifest.dataset_hash = vcm::hash_directory(dataset_dir);
  manifest.output_paths = {{"capacity", (fs::path(out_dir) / "capacity.csv").string()},
                           {"buckets", (fs::path(out_dir) / "capacity_buckets.csv").string()},
                           {"top_words", (fs::path(out_dir) / "top_words.csv").string()},
                           {"summary", (fs::path(out_dir) / "diagnose_summary.json").string()}};
  manifest.started_at = vcm::iso8601_now();
  manifest.write(fs::path(out_dir) / "manifest.json");

  const vcm::CapacityReport cap = vcm::capacity_report(model, ds.split, edges, ndcg_r, split);
  {
    std::ofstream out(fs::path(out_dir) / "capacity.csv", std::ios::binary);
    out << "user,activity,capacity\n";
    for (std::size_t u = 0; u < cap.capacity.size(); ++u) {
      out << u << ',' << cap.activity[u] << ',' << vcm::format_double(cap.capacity[u]) << '\n';
    }
  }
  {
    std::ofstream out(fs::path(out_dir) / "capacity_buckets.csv", std::ios::binary);
    out << "lo,hi,count,mean_capacity,mean_ndcg@" << ndcg_r << "\n";
    for (const auto& b : cap.buckets) {
      out << b.lo << ',';
      if (b.hi == std::numeric_limits<std::size_t>::max()) {
        out << "max";
      } else {
        out << b.hi;
      }
      out << ',' << b.count << ',' << vcm::format_double(b.mean_capacity) << ','
          << vcm::format_double(b.mean_ndcg) << '\n';
    }
  }

  const auto words = vcm::top_words_report(model, ds.reviews.rows[user_index], ds.vocab, top_k,
                                           restrict_used);
  {
    std::ofstream out(fs::path(out_dir) / "top_words.csv", std::ios::binary);
    out << "rank,word,probability\n";
    for (std::size_t i = 0; i < words.size(); ++i) {
      out << (i + 1) << ',' << words[i].first << ',' << vcm::format_double(words[i].second)
          << '\n';
    }
  }

  std::vector<double> activity_d(cap.activity.begin(), cap.activity.end());
  const double rho = vcm::spearman(activity_d, cap.capacity);
  double mean_cap = 0.0;
  for (double c : cap.capacity) mean_cap += c;
  mean_cap /= static_cast<double>(cap.capacity.size());
  json summary = {{"spearman_activity_capacity", rho},
                  {"mean_capacity", mean_cap},
                  {"n_users", cap.capacity.size()},
                  {"checkpoint_hash", vcm::hash_file_hex(checkpoint_path)}};
  {
    std::ofstream out(fs::path(out_dir) / "diagnose_summary.json", std::ios::binary);
    out << summary.dump(2) << '\n';
  }
  std::cout << summary.dump(2) << '\n';

  manifest.finished_at = vcm::iso8601_now();
  manifest.status = "completed";
  manifest.write(fs::path(out_dir) / "manifest.json");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational collaborative model for user preference"};
  app.require_subcommand(1);

  std::string interactions_path, reviews_path, config_path, out_dir, dataset_dir;
  std::string checkpoint_path;
  std::string mode_str = "standard", split_str = "test", r_csv = "10,100";
  std::string seeds_csv = "1,2,3,4,5", buckets_csv = "5,20,40,60,80";
  std::size_t threads = 1, table_r = 10, ndcg_r = 10, top_k = 10;
  long user_index = 0;
  bool restrict_used = false;

  auto* pre = app.add_subcommand("preprocess", "build a processed dataset directory");
  pre->add_option("--interactions", interactions_path, "interactions.tsv (user, item, rating)")
      ->required();
  pre->add_option("--reviews", reviews_path, "reviews.tsv (user, text)")->required();
  pre->add_option("--config", config_path, "preprocess config JSON (defaults when omitted)");
  pre->add_option("--out", out_dir, "output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "train a model on a processed dataset");
  tr->add_option("--dataset", dataset_dir, "processed dataset directory")->required();
  tr->add_option("--config", config_path, "train config JSON")->required();
  tr->add_option("--out", out_dir, "output run directory")->required();
  tr->add_option("--threads", threads, "worker threads (1 = fully deterministic)");

  auto* ev = app.add_subcommand("evaluate", "compute ranking metrics for a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint.json")->required();
  ev->add_option("--dataset", dataset_dir, "processed dataset directory")->required();
  ev->add_option("--mode", mode_str, "standard | cross-domain");
  ev->add_option("--split", split_str, "test | validation");
  ev->add_option("--R", r_csv, "comma-separated truncation depths");
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--threads", threads, "worker threads");

  auto* ab = app.add_subcommand("ablate", "train all variants and tabulate NDCG");
  ab->add_option("--dataset", dataset_dir, "processed dataset directory")->required();
  ab->add_option("--config", config_path, "base train config JSON")->required();
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--seeds", seeds_csv, "comma-separated seeds shared across variants");
  ab->add_option("--R", table_r, "truncation depth for the table");
  ab->add_option("--threads", threads, "worker threads");

  auto* di = app.add_subcommand("diagnose", "capacity and top-word reports for a checkpoint");
  di->add_option("--checkpoint", checkpoint_path, "checkpoint.json")->required();
  di->add_option("--dataset", dataset_dir, "processed dataset directory")->required();
  di->add_option("--out", out_dir, "output directory")->required();
  di->add_option("--buckets", buckets_csv, "activity bucket lower edges");
  di->add_option("--ndcg-R", ndcg_r, "truncation depth for bucket NDCG");
  di->add_option("--split", split_str, "test | validation");
  di->add_option("--top-words", top_k, "words per top-word report");
  di->add_option("--user", user_index, "user index for the top-word report");
  di->add_flag("--restrict-used", restrict_used, "restrict top words to the user's document");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*pre) return cmd_preprocess(interactions_path, reviews_path, config_path, out_dir);
    if (*tr) return cmd_train(dataset_dir, config_path, out_dir, threads);
    if (*ev) {
      return cmd_evaluate(checkpoint_path, dataset_dir, mode_str, split_str, r_csv, out_dir,
                          threads);
    }
    if (*ab) return cmd_ablate(dataset_dir, config_path, out_dir, seeds_csv, table_r, threads);
    if (*di) {
      return cmd_diagnose(checkpoint_path, dataset_dir, out_dir, buckets_csv, ndcg_r, split_str,
                          top_k, user_index, restrict_used);
    }
  } catch (const vcm::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
