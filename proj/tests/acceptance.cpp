// Acceptance runner: one PASS/FAIL line per criterion, exit status 0 only if
// all pass. Runs the full default bench, the shuffle ablation, both
// meta-learning experiments and the property checks.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mnist1d/cli.hpp"
#include "mnist1d/experiment.hpp"
#include "mnist1d/platform.hpp"
#include "op_cases.hpp"

using namespace mnist1d;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string pct(double v) { return fmt("%.2f%%", 100.0 * v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void log(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Byte comparison of every regular file under two directories.
Verdict compare_trees(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) return {false, "differs: " + rel.string()};
    ++files;
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file();
  if (files != files_b) return {false, fmt("file counts differ (%zu vs %zu)", files, files_b)};
  return {true, fmt("%zu files byte-identical", files)};
}

Verdict band(const BenchResult& b, const std::string& arch, double lo, double hi) {
  const auto row = b.find(arch, 10000);
  if (!row) return {false, "no " + arch + " runs at 10000 steps"};
  const bool ok = row->mean_best >= lo && row->mean_best <= hi;
  return {ok, arch + " mean " + pct(row->mean_best) + " (std " + pct(row->std_best) + ", n=" + std::to_string(row->n) +
                  ") vs band [" + pct(lo) + ", " + pct(hi) + "]"};
}

double max_wall(const BenchResult& b, const std::string& arch) {
  double m = 0;
  for (const auto& r : b.runs)
    if (r.arch == arch) m = std::max(m, r.wall_time);
  return m;
}

double mean10k(const BenchResult& b, const std::string& arch) {
  const auto row = b.find(arch, 10000);
  return row ? row->mean_best : std::nan("");
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Runs every acceptance criterion and prints one PASS/FAIL line each", "mnist1d_acceptance"};
  std::string out_dir = "acceptance_out";
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--out-dir", out_dir, "directory for all experiment artifacts");
  app.add_option("--threads", threads, "worker threads for independent runs")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const fs::path root = out_dir;
  fs::create_directories(root);
  std::map<int, Verdict> v;

  ExperimentConfig cfg;
  cfg.threads = threads;
  cfg.output_dir = (root / "bench").string();
  cfg.resolve();
  cfg.validate();
  log("config: " + artifact_config(cfg).dump());
  log("threads " + std::to_string(threads) + ", hardware threads " +
      std::to_string(std::thread::hardware_concurrency()));

  // --- Property criteria ---------------------------------------------------
  {
    double worst1 = 0, worst2 = 0;
    std::string worst1_name, worst2_name;
    std::size_t n1 = 0, n2 = 0;
    for (const auto& c : testutil::first_order_cases()) {
      const double e = testutil::grad_check(c.f, c.inputs);
      if (!(e <= worst1)) worst1 = e, worst1_name = c.name;
      ++n1;
    }
    for (const auto& c : testutil::second_order_cases()) {
      const double e = testutil::hvp_check(c.f, c.inputs);
      if (!(e <= worst2)) worst2 = e, worst2_name = c.name;
      ++n2;
    }
    v[10] = {worst1 <= testutil::kFirstOrderTol && worst2 <= testutil::kSecondOrderTol,
             fmt("%zu first-order cases, worst %.2e (%s) <= 1e-4; %zu second-order cases, worst %.2e (%s) <= 1e-3", n1,
                 worst1, worst1_name.c_str(), n2, worst2, worst2_name.c_str())};
  }
  {
    const auto s = testutil::conv_brute_force_sweep(1e-12);
    v[11] = {s.mismatches == 0 && s.cases > 0,
             fmt("%zu configurations match brute force (max abs error %.2e), %zu too-short inputs refused, %zu mismatches",
                 s.cases, s.max_abs_error, s.rejected, s.mismatches)};
  }
  const Dataset data = generate(cfg.dataset);
  {
    bool ok = data.out_len == 40 && data.x_train.size() == data.n_train() * 40 && data.x_test.size() == data.n_test() * 40;
    std::vector<std::size_t> ctr(10, 0), cte(10, 0);
    for (int y : data.y_train) ++ctr[std::size_t(y)];
    for (int y : data.y_test) ++cte[std::size_t(y)];
    for (std::size_t k = 0; k < 10; ++k) ok = ok && ctr[k] == data.n_train() / 10 && cte[k] == data.n_test() / 10;
    const fs::path f = root / "dataset.bin";
    save_dataset(data, f);
    const Dataset back = load_dataset(f);
    const bool round_trip = back == data && encode_dataset(back) == encode_dataset(data);
    double worst_kernel = 0;
    for (double sigma : {0.5, 1.0, 2.0, 3.7, 8.0}) {
      const auto k = gaussian_kernel(sigma);
      double s = 0;
      for (double x : k) s += x;
      worst_kernel = std::max(worst_kernel, std::abs(s - 1.0));
    }
    v[13] = {ok && round_trip && worst_kernel <= 1e-12,
             fmt("40-point signals, %zu/%zu per class, round trip %s, kernel sum error %.1e", data.n_train() / 10,
                 data.n_test() / 10, round_trip ? "bit-exact" : "MISMATCH", worst_kernel)};
  }
  {
    const Tensor x({data.n_test(), data.out_len}, data.x_test);
    double worst = 0;
    std::string worst_arch;
    for (Arch a : kAllArchs)
      for (std::uint64_t s = 0; s < cfg.seeds; ++s) {
        RngStream r = derive(cfg.master_seed + s, stream_id::kInit);
        Model m = build_model(a, cfg.hyper, r);
        RngStream unused(0, 0);
        NoGradGuard ng;
        const double loss = softmax_cross_entropy(m.forward(x, Mode::kEval, unused), data.y_test).loss.item();
        if (std::abs(loss - std::log(10.0)) >= worst) worst = std::abs(loss - std::log(10.0)), worst_arch = std::string(arch_name(a));
      }
    v[14] = {worst <= 0.3, fmt("7 archs x %zu seeds, worst |loss - ln 10| = %.3f (%s) <= 0.3", cfg.seeds, worst,
                               worst_arch.c_str())};
  }
  log("property criteria done");

  // --- Determinism: the bench command twice, byte-compared -------------------
  {
    ExperimentConfig small = cfg;
    small.dataset.n_train = 400;
    small.dataset.n_test = 200;
    small.steps = {100, 200};
    small.seeds = 2;
    const fs::path cf = root / "determinism_config.json";
    std::ofstream(cf) << nlohmann::json(small).dump(2);
    std::ostringstream sink;
    const auto a = root / "determinism_a", b = root / "determinism_b";
    fs::remove_all(a);
    fs::remove_all(b);
    const int ca = run_cli({"mnist1d", "--config", cf.string(), "--out-dir", a.string(), "--threads", "1", "bench"}, sink, sink);
    const int cb = run_cli({"mnist1d", "--config", cf.string(), "--out-dir", b.string(), "--threads",
                            std::to_string(std::max<std::size_t>(2, threads)), "bench"}, sink, sink);
    Verdict t = (ca == 0 && cb == 0) ? compare_trees(a, b) : Verdict{false, "bench exited with error"};
    t.detail = "7 archs x {100,200} steps x 2 seeds, 1 vs " + std::to_string(std::max<std::size_t>(2, threads)) +
               " threads: " + t.detail;
    v[12] = t;
  }
  log("determinism check done");

  // --- Full default bench ----------------------------------------------------
  const auto t_bench = std::chrono::steady_clock::now();
  const BenchResult bench = run_bench(cfg, data, [](const std::string& s) { log(s); });
  const double bench_secs = seconds_since(t_bench);
  write_bench_outputs(bench, root / "bench");
  {
    auto t = band(bench, "logreg", 0.26, 0.40);
    const double w = max_wall(bench, "logreg");
    t.pass = t.pass && w < 60.0;
    t.detail += fmt("; slowest run %.1f s < 60 s", w);
    v[1] = t;
  }
  v[2] = band(bench, "mlp", 0.58, 0.78);
  v[3] = band(bench, "cnn", 0.85, 0.97);
  {
    auto t = band(bench, "gru", 0.80, 0.95);
    const double w = max_wall(bench, "gru");
    t.pass = t.pass && w < 900.0;
    t.detail += fmt("; slowest run %.1f s < 900 s", w);
    v[4] = t;
  }
  {
    const double lg = mean10k(bench, "logreg"), mlp = mean10k(bench, "mlp"), cnn = mean10k(bench, "cnn"),
                 gru = mean10k(bench, "gru"), res = mean10k(bench, "resnet"), tcn = mean10k(bench, "tcn"),
                 dcnn = mean10k(bench, "dcnn");
    const bool order = lg < mlp && mlp < std::min(cnn, gru);
    const bool near_cnn = res >= cnn - 0.02 && tcn >= cnn - 0.02 && dcnn >= cnn - 0.02;
    const bool top = std::max(tcn, dcnn) >= 0.90;
    v[5] = {order && near_cnn && top,
            fmt("logreg %.4f < mlp %.4f < min(cnn %.4f, gru %.4f): %s; resnet %.4f, tcn %.4f, dcnn %.4f >= cnn-0.02: "
                "%s; max(tcn, dcnn) >= 0.90: %s",
                lg, mlp, cnn, gru, order ? "yes" : "no", res, tcn, dcnn, near_cnn ? "yes" : "no", top ? "yes" : "no")};
  }
  {
    bool ok = true;
    std::string d;
    for (const auto& arch : cfg.archs) {
      const auto a = bench.find(arch, 1000), b = bench.find(arch, 2000), c = bench.find(arch, 10000);
      if (!a || !b || !c) {
        ok = false;
        d += arch + " missing; ";
        continue;
      }
      const bool m = c->mean_best >= b->mean_best - 0.01 && b->mean_best >= a->mean_best - 0.01;
      ok = ok && m;
      d += fmt("%s %.3f/%.3f/%.3f%s; ", arch.c_str(), a->mean_best, b->mean_best, c->mean_best, m ? "" : " (FAIL)");
    }
    v[6] = {ok, "1k/2k/10k means: " + d.substr(0, d.size() - 2)};
  }
  v[15] = {bench_secs < 90 * 60.0,
           fmt("full bench (%zu archs x %zu budgets x %zu seeds = %zu records) took %.1f min on %zu thread(s) < 90 min",
               cfg.archs.size(), cfg.steps.size(), cfg.seeds, bench.record_count(), bench_secs / 60.0, threads)};
  log(fmt("bench done in %.1f min", bench_secs / 60.0));

  // --- Shuffle ablation --------------------------------------------------------
  {
    ExperimentConfig sc = cfg;
    sc.archs = {"cnn", "dcnn", "logreg"};
    const ShuffleResult s = run_shuffle_bench(sc, data, &bench, [](const std::string& m) { log("shuffle " + m); });
    write_shuffle_outputs(s, root / "shuffle");
    const double cnn = -s.mean_delta("cnn"), dcnn = -s.mean_delta("dcnn"), lg = -s.mean_delta("logreg");
    v[7] = {cnn >= 0.10 && dcnn >= 0.10 && std::abs(lg) <= 0.02,
            fmt("accuracy drop: cnn %.2fpp, dcnn %.2fpp (>= 10pp); logreg %.2fpp (|drop| <= 2pp)", 100 * cnn,
                100 * dcnn, 100 * lg)};
  }
  log("shuffle done");

  // --- Meta-learning -----------------------------------------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto runs = run_meta_lr(cfg, data);
      const double secs = seconds_since(t0);
      write_meta_lr_outputs(cfg, runs, root / "meta_lr");
      bool conv = true;
      std::string d;
      for (const auto& r : runs) {
        const bool c = lr_converged(r.result);
        conv = conv && c;
        d += fmt("init %g -> %.4f (%s); ", r.init_lr, r.result.learned_lr, c ? "converged" : "not converged");
      }
      const double rel = runs.size() == 2 ? relative_diff(runs[0].result.learned_lr, runs[1].result.learned_lr) : 1.0;
      v[8] = {conv && rel <= 0.15 && secs < 600.0,
              d + fmt("relative difference %.1f%% <= 15%%; reference lr %.2f (reported only); %.1f s < 600 s",
                      100 * rel, kReferenceMetaLr, secs)};
    } catch (const std::exception& e) {
      v[8] = {false, std::string("meta-lr failed: ") + e.what()};
    }
  }
  log("meta-lr done");
  {
    try {
      const InnerProblem p = make_inner_problem(data, cfg.meta_act);
      RngStream theta_rng = derive(cfg.meta_act.seed, stream_id::kMeta).split(3);
      const LearnedActivation zero = LearnedActivation::init(theta_rng);
      std::vector<Tensor> w_learned, w_elu;
      const double l1 =
          unrolled_loss(p, Tensor::scalar(cfg.meta_act.init_lr), learned_activation_fn(zero.theta), false, &w_learned).item();
      const double l2 =
          unrolled_loss(p, Tensor::scalar(cfg.meta_act.init_lr), standard_activation(Activation::kElu), false, &w_elu).item();
      bool identical = l1 == l2;
      for (std::size_t i = 0; i < w_learned.size(); ++i) identical = identical && w_learned[i].vec() == w_elu[i].vec();
      const MetaActResult r = meta_learn_activation(data, cfg.meta_act);
      write_meta_act_outputs(cfg, r, root / "meta_act");
      v[9] = {identical && r.report.diff() > 0,
              fmt("zero-init inner run bit-identical to ELU: %s; test acc ELU %.4f vs learned %.4f, difference %+.2fpp "
                  "(> 0)",
                  identical ? "yes" : "no", r.report.elu_test_acc, r.report.learned_test_acc, 100 * r.report.diff())};
    } catch (const std::exception& e) {
      v[9] = {false, std::string("meta-act failed: ") + e.what()};
    }
  }
  log("meta-act done");

  bool all = true;
  for (int k = 1; k <= 15; ++k) {
    const auto it = v.find(k);
    const Verdict t = it == v.end() ? Verdict{false, "not evaluated"} : it->second;
    all = all && t.pass;
    std::cout << "criterion " << k << ": " << (t.pass ? "PASS" : "FAIL") << " - " << t.detail << "\n";
  }
  std::cout << (all ? "all criteria passed" : "some criteria failed") << std::endl;
  return all ? 0 : 1;
}
