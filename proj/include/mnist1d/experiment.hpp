#pragma once
// Experiment plumbing shared by the CLI and the acceptance harness: resolved
// configuration, the bench / shuffle-bench / meta runners, and their CSV, JSON
// and SVG outputs.
//
// Seeding: one master seed drives everything. The dataset uses master_seed,
// run i of a bench uses master_seed + i for init (stream 2), batches (6) and
// dropout (3); the shuffle permutation comes from derive(master_seed, 4) and
// the meta problems from derive(master_seed, 5).

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mnist1d/dataset.hpp"
#include "mnist1d/io.hpp"
#include "mnist1d/metalearn.hpp"
#include "mnist1d/models.hpp"
#include "mnist1d/prng.hpp"
#include "mnist1d/svg.hpp"
#include "mnist1d/train.hpp"

namespace mnist1d {

inline constexpr double kHumanAccuracy = 0.96;
inline constexpr double kReferenceMetaLr = 0.62;

/// Noise and scale are not pinned by the dataset description; these values put
/// the default bench in the target accuracy bands.
inline GenConfig default_experiment_dataset() {
  GenConfig c;
  c.noise_sigma = 0.03;
  c.scale_lo = 0.0;
  c.scale_hi = 2.0;
  return c;
}

/// A horizon and clip at which the meta-lr runs from both starting points
/// settle in the same basin on the default seed.
inline MetaConfig default_experiment_meta() {
  MetaConfig c;
  c.inner_steps = 100;
  c.outer_steps = 300;
  c.hidden = {100};
  c.meta_lr = 0.1;
  c.grad_clip = 0.1;
  return c;
}

/// The activation net is applied to every hidden unit, so its unrolled graph
/// is far larger than the meta-lr one: shorter horizon, smaller batches.
inline MetaConfig default_experiment_meta_act() {
  MetaConfig c;
  c.inner_steps = 30;
  c.outer_steps = 50;
  c.hidden = {100};
  c.batch_size = 32;
  c.init_lr = 1.0;
  c.meta_lr = 0.003;
  c.grad_clip = 0.1;
  return c;
}

struct ExperimentConfig {
  GenConfig dataset = default_experiment_dataset();
  TrainConfig train;  // train.steps / train.seed are overridden per run by the bench
  Hyper hyper;
  MetaConfig meta = default_experiment_meta();  // meta-lr
  MetaConfig meta_act = default_experiment_meta_act();
  std::vector<std::string> archs{"logreg", "mlp", "cnn", "gru", "resnet", "tcn", "dcnn"};
  std::vector<std::size_t> steps{1000, 2000, 10000};
  std::size_t seeds = 3;
  std::map<std::string, double> lr_overrides{{"cnn", 0.04}, {"logreg", 0.003}};
  std::vector<double> init_lrs{0.01, 5.0};
  std::uint64_t master_seed = 0;
  std::string output_dir = "out";
  std::size_t threads = 1;

  /// Pushes master_seed into the component configs so every output records
  /// the seeds that were actually used.
  void resolve() {
    dataset.seed = master_seed;
    train.seed = master_seed;
    meta.seed = master_seed;
    meta_act.seed = master_seed;
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("ExperimentConfig: " + m); };
    dataset.validate();
    if (dataset.out_len != kInputLen) fail("dataset.out_len must be " + std::to_string(kInputLen) + " for the models");
    if (archs.empty()) fail("archs must not be empty");
    for (const auto& a : archs) parse_arch(a);
    for (const auto& [a, lr] : lr_overrides) {
      parse_arch(a);
      if (!(lr > 0.0)) fail("lr override for " + a + " must be positive");
    }
    if (steps.empty()) fail("steps must not be empty");
    if (seeds == 0) fail("seeds must be positive");
    if (threads == 0) fail("threads must be positive");
    for (auto s : steps) {
      TrainConfig t = train;
      t.steps = s;
      t.validate(dataset.n_train);
      if (s % train.eval_every != 0) fail("every step budget must be a multiple of eval_every");
    }
    for (double lr : init_lrs)
      if (!(lr > 0.0)) fail("init_lrs must be positive");
  }

  double lr_for(const std::string& arch) const {
    auto it = lr_overrides.find(arch);
    return it == lr_overrides.end() ? train.lr : it->second;
  }

  bool operator==(const ExperimentConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"dataset", c.dataset},         {"train", c.train},       {"hyper", c.hyper},
                     {"meta", c.meta},               {"meta_act", c.meta_act}, {"archs", c.archs},       {"steps", c.steps},
                     {"seeds", c.seeds},             {"lr_overrides", c.lr_overrides},
                     {"init_lrs", c.init_lrs},       {"master_seed", c.master_seed},
                     {"output_dir", c.output_dir},   {"threads", c.threads}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::vector<std::string> known = {"dataset", "train",    "hyper",       "meta",       "meta_act",
                                                 "archs",   "steps",    "seeds",       "lr_overrides",
                                                 "init_lrs", "master_seed", "output_dir", "threads"};
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::invalid_argument("config: unknown key '" + k + "'");
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("dataset", c.dataset);
  get("train", c.train);
  get("hyper", c.hyper);
  get("meta", c.meta);
  get("meta_act", c.meta_act);
  get("archs", c.archs);
  get("steps", c.steps);
  get("seeds", c.seeds);
  get("lr_overrides", c.lr_overrides);
  get("init_lrs", c.init_lrs);
  get("master_seed", c.master_seed);
  get("output_dir", c.output_dir);
  get("threads", c.threads);
}

/// The configuration embedded in artifacts: everything that can change a
/// result, nothing that cannot (output directory, worker count).
inline nlohmann::json artifact_config(const ExperimentConfig& c) {
  nlohmann::json j = c;
  j.erase("output_dir");
  j.erase("threads");
  return j;
}

/// One-line provenance header for CSV files.
inline std::string csv_comment(const nlohmann::json& config) {
  const nlohmann::json j = {{"config", config}, {"version", std::string(kGeneratorVersion)}};
  return "# " + j.dump() + "\n";
}

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
inline double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------
// Worker pool

/// Runs job(i) for i in [0, n) on `threads` workers. Results must be stored by
/// index by the caller; the first exception (lowest index) is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::max<std::size_t>(1, std::min(threads, n));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Bench

struct BenchRun {
  std::string arch;
  std::size_t seed_index = 0;
  std::uint64_t run_seed = 0;
  std::map<std::size_t, RunRecord> by_budget;  // one record per step budget
  double wall_time = 0;                        // full (longest) run, seconds
};

struct BenchSummaryRow {
  std::string arch;
  std::size_t steps = 0;
  std::size_t n = 0;
  double mean_best = 0, std_best = 0, mean_final = 0, std_final = 0;
};

struct BenchResult {
  nlohmann::json config;  // artifact_config of the resolved experiment
  std::vector<BenchRun> runs;

  std::size_t record_count() const {
    std::size_t n = 0;
    for (const auto& r : runs) n += r.by_budget.size();
    return n;
  }

  std::vector<BenchSummaryRow> summary() const {
    std::vector<BenchSummaryRow> rows;
    std::vector<std::string> order;
    for (const auto& r : runs)
      if (std::find(order.begin(), order.end(), r.arch) == order.end()) order.push_back(r.arch);
    for (const auto& arch : order) {
      std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> acc;
      for (const auto& r : runs)
        if (r.arch == arch)
          for (const auto& [b, rec] : r.by_budget) {
            acc[b].first.push_back(rec.best_test_acc);
            acc[b].second.push_back(rec.final_test_acc);
          }
      for (const auto& [b, v] : acc)
        rows.push_back({arch, b, v.first.size(), mean_of(v.first), sample_std(v.first), mean_of(v.second),
                        sample_std(v.second)});
    }
    return rows;
  }

  std::optional<BenchSummaryRow> find(const std::string& arch, std::size_t steps) const {
    for (auto& r : summary())
      if (r.arch == arch && r.steps == steps) return r;
    return std::nullopt;
  }
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains one model per (arch, seed) for the longest budget; shorter budgets
/// are exact prefixes of that run (see RunRecord::truncated).
inline BenchResult run_bench(const ExperimentConfig& cfg, const Dataset& data, const ProgressFn& progress = {}) {
  cfg.validate();
  BenchResult res;
  res.config = artifact_config(cfg);
  const std::size_t max_steps = cfg.steps.back();
  for (const auto& a : cfg.archs)
    for (std::size_t s = 0; s < cfg.seeds; ++s) res.runs.push_back({a, s, cfg.master_seed + s, {}, 0});

  std::mutex mu;
  std::size_t finished = 0;
  parallel_for(res.runs.size(), cfg.threads, [&](std::size_t i) {
    BenchRun& run = res.runs[i];
    RngStream init_rng = derive(run.run_seed, stream_id::kInit);
    Model model = build_model(parse_arch(run.arch), cfg.hyper, init_rng);
    TrainConfig tc = cfg.train;
    tc.steps = max_steps;
    tc.seed = run.run_seed;
    tc.lr = cfg.lr_for(run.arch);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult tr = train(model, data, tc);
    run.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto b : cfg.steps) run.by_budget.emplace(b, tr.record.truncated(b));
    if (progress) {
      std::lock_guard lk(mu);
      char buf[256];
      std::snprintf(buf, sizeof buf, "[%zu/%zu] %s seed %zu: best test acc %.4f (%.1f s)", ++finished,
                    res.runs.size(), run.arch.c_str(), run.seed_index, tr.record.best_test_acc, run.wall_time);
      progress(buf);
    }
  });
  return res;
}

inline std::string bench_results_csv(const BenchResult& r) {
  std::string s = csv_comment(r.config);
  s += "arch,steps,seed,run_seed,best_test_acc,final_test_acc,best_step,selected_test_acc\n";
  for (const auto& run : r.runs)
    for (const auto& [b, rec] : run.by_budget)
      s += run.arch + "," + std::to_string(b) + "," + std::to_string(run.seed_index) + "," +
           std::to_string(run.run_seed) + "," + fmt_g17(rec.best_test_acc) + "," + fmt_g17(rec.final_test_acc) + "," +
           std::to_string(rec.best_step) + "," + fmt_g17(rec.selected_test_acc) + "\n";
  return s;
}

inline std::string bench_summary_csv(const BenchResult& r) {
  std::string s = csv_comment(r.config);
  s += "arch,steps,n,mean_best_test_acc,std_best_test_acc,mean_final_test_acc,std_final_test_acc\n";
  for (const auto& row : r.summary())
    s += row.arch + "," + std::to_string(row.steps) + "," + std::to_string(row.n) + "," + fmt_g17(row.mean_best) +
         "," + fmt_g17(row.std_best) + "," + fmt_g17(row.mean_final) + "," + fmt_g17(row.std_final) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Results CSV -> chart (the `plot` command and bench.svg share this path)

struct ResultRow {
  std::string arch;
  std::size_t steps;
  double best_test_acc;
};

struct ParsedResults {
  std::string comment;  // first '#' line without the marker, may be empty
  std::vector<ResultRow> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

/// Parses a results CSV (needs arch, steps and best_test_acc columns).
inline ParsedResults parse_results_csv(const std::string& text) {
  ParsedResults p;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (line[0] == '#') {
      if (p.comment.empty()) p.comment = line.size() > 2 ? line.substr(2) : "";
      continue;
    }
    if (header.empty()) {
      header = split_csv_line(line);
      continue;
    }
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw std::invalid_argument("results CSV: ragged row: " + line);
    auto col = [&](const char* name) -> const std::string& {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw std::invalid_argument(std::string("results CSV: missing column ") + name);
      return cells[static_cast<std::size_t>(it - header.begin())];
    };
    try {
      p.rows.push_back({col("arch"), std::stoull(col("steps")), std::stod(col("best_test_acc"))});
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("results CSV: malformed number in row: " + line);
    }
  }
  if (header.empty()) throw std::invalid_argument("results CSV: empty file");
  if (p.rows.empty()) throw std::invalid_argument("results CSV: no data rows");
  return p;
}

/// Mean best test accuracy vs step budget per arch, sample-std error bars,
/// log-x, y fixed to [0, 1], dashed human reference.
inline std::string results_svg(const ParsedResults& p) {
  LineChart c;
  c.title = "Test accuracy vs training steps";
  c.x_label = "training steps";
  c.y_label = "test accuracy (mean of best, +/- 1 std)";
  c.x_log = true;
  c.y_range = {{0.0, 1.0}};
  c.metadata = p.comment;
  c.hlines.push_back({kHumanAccuracy, "human (0.96)"});
  std::vector<std::string> order;
  for (const auto& r : p.rows)
    if (std::find(order.begin(), order.end(), r.arch) == order.end()) order.push_back(r.arch);
  for (const auto& arch : order) {
    std::map<std::size_t, std::vector<double>> by;
    for (const auto& r : p.rows)
      if (r.arch == arch) by[r.steps].push_back(r.best_test_acc);
    Series s{arch, std::string(arch_color(arch)), {}, {}};
    for (const auto& [steps, v] : by) {
      s.points.emplace_back(static_cast<double>(steps), mean_of(v));
      s.errors.push_back(sample_std(v));
    }
    c.series.push_back(std::move(s));
  }
  return render_svg(c);
}

inline nlohmann::json bench_json(const BenchResult& r) {
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& row : r.summary())
    summary.push_back({{"arch", row.arch},
                       {"steps", row.steps},
                       {"n", row.n},
                       {"mean_best_test_acc", row.mean_best},
                       {"std_best_test_acc", row.std_best},
                       {"mean_final_test_acc", row.mean_final},
                       {"std_final_test_acc", row.std_final}});
  return {{"config", r.config},
          {"version", std::string(kGeneratorVersion)},
          {"records", r.record_count()},
          {"summary", std::move(summary)}};
}

inline std::string run_file_stem(const BenchRun& run, std::size_t budget) {
  return run.arch + "_seed" + std::to_string(run.seed_index) + "_steps" + std::to_string(budget);
}

inline void write_bench_outputs(const BenchResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "runs");
  for (const auto& run : r.runs)
    for (const auto& [b, rec] : run.by_budget) {
      const auto stem = run_file_stem(run, b);
      write_text_atomic(dir / "runs" / (stem + ".json"), rec.to_json().dump(2) + "\n");
      write_text_atomic(dir / "runs" / (stem + ".csv"), csv_comment(rec.config) + rec.curve_csv());
    }
  const std::string results = bench_results_csv(r);
  write_text_atomic(dir / "results.csv", results);
  write_text_atomic(dir / "summary.csv", bench_summary_csv(r));
  write_text_atomic(dir / "bench.svg", results_svg(parse_results_csv(results)));
  write_text_atomic(dir / "bench.json", bench_json(r).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shuffle ablation

struct ShufflePair {
  std::string arch;
  std::size_t seed_index;
  double original_acc;  // best test accuracy at the longest budget
  double shuffled_acc;
  double delta() const { return shuffled_acc - original_acc; }
};

struct ShuffleResult {
  nlohmann::json config;
  std::vector<std::size_t> permutation;
  std::vector<ShufflePair> pairs;

  /// Mean paired delta (shuffled - original) for one arch.
  double mean_delta(const std::string& arch) const {
    std::vector<double> d;
    for (const auto& p : pairs)
      if (p.arch == arch) d.push_back(p.delta());
    return mean_of(d);
  }
};

inline Dataset shuffled_dataset(const Dataset& data, std::uint64_t master_seed) {
  RngStream rng = derive(master_seed, stream_id::kShuffle);
  return shuffle_features(data, rng);
}

/// Trains every arch on the original and on the feature-shuffled data with
/// identical seeds. `original` may supply already-finished runs on the
/// unshuffled data (same config) to avoid repeating them.
inline ShuffleResult run_shuffle_bench(const ExperimentConfig& cfg, const Dataset& data,
                                       const BenchResult* original = nullptr, const ProgressFn& progress = {}) {
  ExperimentConfig c = cfg;
  c.steps = {cfg.steps.back()};
  const Dataset shuffled = shuffled_dataset(data, cfg.master_seed);
  const BenchResult orig = original ? *original : run_bench(c, data, progress);
  const BenchResult shuf = run_bench(c, shuffled, progress);
  ShuffleResult r;
  r.config = artifact_config(c);
  r.permutation = *shuffled.feature_perm;
  for (std::size_t i = 0; i < shuf.runs.size(); ++i) {
    const auto& s = shuf.runs[i];
    const auto it = std::find_if(orig.runs.begin(), orig.runs.end(), [&](const BenchRun& o) {
      return o.arch == s.arch && o.seed_index == s.seed_index;
    });
    if (it == orig.runs.end() || !it->by_budget.count(c.steps.back()))
      throw std::invalid_argument("shuffle bench: missing original run for " + s.arch);
    r.pairs.push_back({s.arch, s.seed_index, it->by_budget.at(c.steps.back()).best_test_acc,
                       s.by_budget.at(c.steps.back()).best_test_acc});
  }
  return r;
}

inline void write_shuffle_outputs(const ShuffleResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string s = csv_comment(r.config) + "arch,seed,original_test_acc,shuffled_test_acc,delta\n";
  for (const auto& p : r.pairs)
    s += p.arch + "," + std::to_string(p.seed_index) + "," + fmt_g17(p.original_acc) + "," +
         fmt_g17(p.shuffled_acc) + "," + fmt_g17(p.delta()) + "\n";
  write_text_atomic(dir / "shuffle_pairs.csv", s);

  std::vector<std::string> order;
  for (const auto& p : r.pairs)
    if (std::find(order.begin(), order.end(), p.arch) == order.end()) order.push_back(p.arch);
  std::string d = csv_comment(r.config) + "arch,n,mean_original,mean_shuffled,mean_delta\n";
  nlohmann::json deltas = nlohmann::json::object();
  for (const auto& a : order) {
    std::vector<double> o, sh;
    for (const auto& p : r.pairs)
      if (p.arch == a) o.push_back(p.original_acc), sh.push_back(p.shuffled_acc);
    d += a + "," + std::to_string(o.size()) + "," + fmt_g17(mean_of(o)) + "," + fmt_g17(mean_of(sh)) + "," +
         fmt_g17(r.mean_delta(a)) + "\n";
    deltas[a] = r.mean_delta(a);
  }
  write_text_atomic(dir / "shuffle_deltas.csv", d);
  const nlohmann::json j = {{"config", r.config},
                            {"version", std::string(kGeneratorVersion)},
                            {"permutation", r.permutation},
                            {"mean_delta", deltas}};
  write_text_atomic(dir / "shuffle.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Meta-learning outputs

/// True when each of the last `window` outer updates changed lr by less than
/// `tol` relative (the final update is the one producing learned_lr).
inline bool lr_converged(const MetaLrResult& r, std::size_t window = 5, double tol = 0.01) {
  std::vector<double> lrs;
  for (const auto& s : r.trajectory) lrs.push_back(s.lr);
  lrs.push_back(r.learned_lr);
  if (lrs.size() < window + 1) return false;
  for (std::size_t i = lrs.size() - window; i < lrs.size(); ++i)
    if (std::abs(lrs[i] - lrs[i - 1]) >= tol * lrs[i - 1]) return false;
  return true;
}

inline double relative_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

struct MetaLrRun {
  double init_lr;
  MetaLrResult result;
};

inline std::vector<MetaLrRun> run_meta_lr(const ExperimentConfig& cfg, const Dataset& data) {
  std::vector<MetaLrRun> runs(cfg.init_lrs.size());
  parallel_for(runs.size(), cfg.threads, [&](std::size_t i) {
    MetaConfig mc = cfg.meta;
    mc.init_lr = cfg.init_lrs[i];
    runs[i] = {mc.init_lr, meta_learn_lr(data, mc)};
  });
  return runs;
}

inline std::string lr_label(double lr) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", lr);
  return buf;
}

inline nlohmann::json meta_lr_json(const ExperimentConfig& cfg, const std::vector<MetaLrRun>& runs) {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : runs)
    rs.push_back({{"init_lr", r.init_lr}, {"learned_lr", r.result.learned_lr}, {"converged", lr_converged(r.result)}});
  nlohmann::json j = {{"config", artifact_config(cfg)},
                      {"version", std::string(kGeneratorVersion)},
                      {"runs", std::move(rs)},
                      {"reference_lr", kReferenceMetaLr}};
  if (runs.size() >= 2) j["relative_diff"] = relative_diff(runs.front().result.learned_lr, runs.back().result.learned_lr);
  return j;
}

inline void write_meta_lr_outputs(const ExperimentConfig& cfg, const std::vector<MetaLrRun>& runs,
                                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto config = artifact_config(cfg);
  std::size_t rows = 0;
  for (const auto& r : runs) {
    std::string s = csv_comment(config) + "outer_step,lr,meta_loss,meta_grad\n";
    for (const auto& t : r.result.trajectory)
      s += std::to_string(t.outer_step) + "," + fmt_g17(t.lr) + "," + fmt_g17(t.meta_loss) + "," +
           fmt_g17(t.meta_grad) + "\n";
    write_text_atomic(dir / ("meta_lr_init" + lr_label(r.init_lr) + ".csv"), s);
    rows = std::max(rows, r.result.trajectory.size());
  }
  std::string side = csv_comment(config) + "outer_step";
  for (const auto& r : runs) side += ",lr_init" + lr_label(r.init_lr) + ",meta_loss_init" + lr_label(r.init_lr);
  side += "\n";
  for (std::size_t i = 0; i < rows; ++i) {
    side += std::to_string(i);
    for (const auto& r : runs) {
      const auto& t = r.result.trajectory;
      side += i < t.size() ? "," + fmt_g17(t[i].lr) + "," + fmt_g17(t[i].meta_loss) : ",,";
    }
    side += "\n";
  }
  write_text_atomic(dir / "meta_lr.csv", side);
  write_text_atomic(dir / "meta_lr.json", meta_lr_json(cfg, runs).dump(2) + "\n");

  LineChart c;
  c.title = "Meta-learned learning rate";
  c.x_label = "outer step";
  c.y_label = "inner learning rate";
  c.metadata = csv_comment(config).substr(2);
  c.markers = false;
  c.hlines.push_back({kReferenceMetaLr, "reference 0.62"});
  for (std::size_t i = 0; i < runs.size(); ++i) {
    Series s{"init " + lr_label(runs[i].init_lr), std::string(kColorCycle[i % kColorCycle.size()]), {}, {}};
    for (const auto& t : runs[i].result.trajectory) s.points.emplace_back(static_cast<double>(t.outer_step), t.lr);
    s.points.emplace_back(static_cast<double>(runs[i].result.trajectory.size()), runs[i].result.learned_lr);
    c.series.push_back(std::move(s));
  }
  write_text_atomic(dir / "meta_lr.svg", render_svg(c));
}

inline nlohmann::json meta_act_json(const ExperimentConfig& cfg, const MetaActResult& r) {
  nlohmann::json theta = nlohmann::json::array();
  for (const auto& t : r.theta.theta) theta.push_back({{"shape", t.shape()}, {"data", t.data()}});
  return {{"config", artifact_config(cfg)},
          {"version", std::string(kGeneratorVersion)},
          {"elu_test_acc", r.report.elu_test_acc},
          {"learned_test_acc", r.report.learned_test_acc},
          {"difference", r.report.diff()},
          {"elu_val_loss", r.report.elu_val_loss},
          {"learned_val_loss", r.report.learned_val_loss},
          {"theta", std::move(theta)}};
}

inline void write_meta_act_outputs(const ExperimentConfig& cfg, const MetaActResult& r,
                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto config = artifact_config(cfg);
  std::string t = csv_comment(config) + "outer_step,meta_loss\n";
  for (const auto& s : r.trajectory) t += std::to_string(s.outer_step) + "," + fmt_g17(s.meta_loss) + "\n";
  write_text_atomic(dir / "meta_act.csv", t);

  const auto curve = sample_activation(r.theta);
  std::vector<double> xs;
  for (const auto& p : curve) xs.push_back(p.first);
  const Tensor elu_y = [&] {
    NoGradGuard ng;
    return elu(Tensor({xs.size()}, xs));
  }();
  std::string a = csv_comment(config) + "x,learned,elu\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    a += fmt_g17(curve[i].first) + "," + fmt_g17(curve[i].second) + "," + fmt_g17(elu_y.data()[i]) + "\n";
  write_text_atomic(dir / "activation.csv", a);
  write_text_atomic(dir / "meta_act.json", meta_act_json(cfg, r).dump(2) + "\n");

  LineChart c;
  c.title = "Learned activation vs ELU";
  c.x_label = "x";
  c.y_label = "a(x)";
  c.metadata = csv_comment(config).substr(2);
  c.markers = false;
  Series learned{"learned", std::string(kColorCycle[0]), {}, {}};
  Series elu{"elu", std::string(kColorCycle[1]), {}, {}};
  for (std::size_t i = 0; i < curve.size(); ++i) {
    learned.points.push_back(curve[i]);
    elu.points.emplace_back(xs[i], elu_y.data()[i]);
  }
  c.series = {std::move(learned), std::move(elu)};
  write_text_atomic(dir / "activation.svg", render_svg(c));
}

}  // namespace mnist1d
