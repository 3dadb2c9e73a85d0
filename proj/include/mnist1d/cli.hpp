#pragma once
// Command-line front end. Subcommands: generate, train, bench, shuffle-bench,
// meta-lr, meta-act, plot. Common flags: --seed, --config, --out-dir,
// --threads. A JSON --config supplies an ExperimentConfig; explicit flags
// override it; the resolved config is embedded in every output.
//
// Exit codes: 0 success, 1 usage error (bad flags, invalid config),
// 2 runtime failure (divergence, I/O, corrupt files).

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mnist1d/dataset.hpp"
#include "mnist1d/experiment.hpp"
#include "mnist1d/io.hpp"
#include "mnist1d/metalearn.hpp"
#include "mnist1d/models.hpp"
#include "mnist1d/train.hpp"

namespace mnist1d {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace cli_detail {

class UsageError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

template <class T>
void set_if(const CLI::Option* opt, const std::optional<T>& v, T& dst) {
  if (opt && opt->count() > 0 && v) dst = *v;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    return j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file " + path + ": " + e.what());
  }
}

inline std::string stats_line(const char* name, const std::vector<double>& xs) {
  double lo = xs.empty() ? 0 : xs[0], hi = lo;
  for (double v : xs) lo = std::min(lo, v), hi = std::max(hi, v);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: mean %.6f  std %.6f  min %.6f  max %.6f", name, mean_of(xs),
                sample_std(xs), lo, hi);
  return buf;
}

}  // namespace cli_detail

/// Runs the CLI on argv-style arguments (args[0] is the program name).
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  using cli_detail::set_if;
  CLI::App app{"MNIST-1D workbench: dataset generation, model benchmarks and meta-learning", "mnist1d"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kGeneratorVersion));

  // Common flags (accepted before or after the subcommand).
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> threads;
  bool print_config = false;
  auto* o_seed = app.add_option("--seed", seed, "master seed (dataset, runs, shuffles, meta problems)");
  app.add_option("--config", config_path, "JSON experiment config; explicit flags override it")
      ->check(CLI::ExistingFile);
  auto* o_out = app.add_option("--out-dir", out_dir, "output directory");
  auto* o_threads = app.add_option("--threads", threads, "worker threads for independent runs")
                        ->check(CLI::PositiveNumber);
  app.add_flag("--print-config", print_config, "print the resolved config as JSON and exit");
  app.fallthrough();

  // Dataset overrides shared by all data-consuming commands.
  std::optional<std::size_t> n_train, n_test;
  std::optional<double> noise;
  std::string data_path;
  auto add_data_flags = [&](CLI::App* sub, std::vector<CLI::Option*>& opts) {
    opts.push_back(sub->add_option("--n-train", n_train, "training examples"));
    opts.push_back(sub->add_option("--n-test", n_test, "test examples"));
    opts.push_back(sub->add_option("--noise", noise, "per-point Gaussian noise sigma"));
  };

  std::vector<CLI::Option*> gen_opts, train_opts, bench_opts, shuf_opts, mlr_opts, mact_opts;

  auto* gen = app.add_subcommand("generate", "generate a dataset file");
  add_data_flags(gen, gen_opts);
  bool write_csv = false;
  gen->add_flag("--csv", write_csv, "also write train.csv and test.csv");

  auto* trn = app.add_subcommand("train", "train one model; writes run.json, curve.csv and model.ckpt");
  add_data_flags(trn, train_opts);
  std::optional<std::string> arch;
  std::optional<std::size_t> steps1, batch_size, eval_every;
  std::optional<double> lr;
  bool no_early_stop = false;
  auto* o_arch = trn->add_option("--arch", arch, "architecture: " + valid_arch_list());
  auto* o_steps1 = trn->add_option("--steps", steps1, "optimizer steps");
  auto* o_lr = trn->add_option("--lr", lr, "Adam learning rate");
  auto* o_bs = trn->add_option("--batch-size", batch_size, "mini-batch size");
  auto* o_ee = trn->add_option("--eval-every", eval_every, "evaluation cadence in steps");
  trn->add_flag("--no-early-stop", no_early_stop, "keep the final rather than the best checkpoint");
  trn->add_option("--data", data_path, "dataset file to train on (default: generate from config)")
      ->check(CLI::ExistingFile);

  std::optional<std::vector<std::string>> archs;
  std::optional<std::vector<std::size_t>> steps_list;
  std::optional<std::size_t> n_seeds;
  auto* bench = app.add_subcommand("bench", "train archs x step budgets x seeds; writes tables and a chart");
  add_data_flags(bench, bench_opts);
  auto* o_archs = bench->add_option("--archs", archs, "architectures")->delimiter(',');
  auto* o_steps = bench->add_option("--steps", steps_list, "step budgets")->delimiter(',');
  auto* o_seeds = bench->add_option("--seeds", n_seeds, "seeds per (arch, budget)");

  auto* shuf = app.add_subcommand("shuffle-bench", "paired original vs feature-shuffled training");
  add_data_flags(shuf, shuf_opts);
  auto* o_sarchs = shuf->add_option("--archs", archs, "architectures")->delimiter(',');
  auto* o_ssteps = shuf->add_option("--steps", steps1, "optimizer steps");
  auto* o_sseeds = shuf->add_option("--seeds", n_seeds, "seeds per arch");

  std::optional<std::size_t> inner_steps, outer_steps;
  std::optional<double> meta_lr, init_lr, grad_clip;
  std::optional<std::vector<double>> init_lrs;
  std::optional<std::vector<std::size_t>> hidden;
  auto add_meta_flags = [&](CLI::App* sub, std::vector<CLI::Option*>& opts) {
    opts.push_back(sub->add_option("--inner-steps", inner_steps, "unrolled SGD steps"));
    opts.push_back(sub->add_option("--outer-steps", outer_steps, "meta-optimizer steps"));
    opts.push_back(sub->add_option("--meta-lr", meta_lr, "Adam learning rate of the outer loop"));
    opts.push_back(sub->add_option("--grad-clip", grad_clip, "clip meta-gradients elementwise (0 = off)"));
    opts.push_back(sub->add_option("--hidden", hidden, "inner MLP hidden widths")->delimiter(','));
  };
  auto* mlr = app.add_subcommand("meta-lr", "meta-learn the inner SGD learning rate from several starts");
  add_data_flags(mlr, mlr_opts);
  add_meta_flags(mlr, mlr_opts);
  auto* o_init_lrs = mlr->add_option("--init-lrs", init_lrs, "starting learning rates")->delimiter(',');

  auto* mact = app.add_subcommand("meta-act", "meta-learn an activation perturbation of ELU");
  add_data_flags(mact, mact_opts);
  add_meta_flags(mact, mact_opts);
  auto* o_init_lr = mact->add_option("--init-lr", init_lr, "fixed inner SGD learning rate");

  auto* plot = app.add_subcommand("plot", "render a results CSV as an SVG chart");
  std::string plot_in, plot_out;
  plot->add_option("input", plot_in, "results CSV (from bench)")->required();
  plot->add_option("-o,--output", plot_out, "output SVG (default: <input>.svg)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = cli_detail::load_config(config_path);
    set_if(o_seed, seed, cfg.master_seed);
    set_if(o_out, out_dir, cfg.output_dir);
    set_if(o_threads, threads, cfg.threads);
    for (auto* opts : {&gen_opts, &train_opts, &bench_opts, &shuf_opts, &mlr_opts, &mact_opts})
      for (auto* o : *opts) {
        if (o->count() == 0) continue;
        MetaConfig& mc = opts == &mact_opts ? cfg.meta_act : cfg.meta;
        const auto& n = o->get_name();
        if (n == "--n-train") cfg.dataset.n_train = *n_train;
        if (n == "--n-test") cfg.dataset.n_test = *n_test;
        if (n == "--noise") cfg.dataset.noise_sigma = *noise;
        if (n == "--inner-steps") mc.inner_steps = *inner_steps;
        if (n == "--outer-steps") mc.outer_steps = *outer_steps;
        if (n == "--meta-lr") mc.meta_lr = *meta_lr;
        if (n == "--grad-clip") mc.grad_clip = *grad_clip;
        if (n == "--hidden") mc.hidden = *hidden;
      }
    std::string train_arch = cfg.archs.empty() ? "logreg" : cfg.archs.front();
    set_if(o_arch, arch, train_arch);
    if (o_steps1->count() || o_ssteps->count()) cfg.steps = {*steps1};
    set_if(o_lr, lr, cfg.train.lr);
    if (o_lr->count()) cfg.lr_overrides.erase(train_arch);  // an explicit --lr beats per-arch defaults
    set_if(o_bs, batch_size, cfg.train.batch_size);
    set_if(o_ee, eval_every, cfg.train.eval_every);
    if (no_early_stop) cfg.train.early_stop = false;
    if (o_archs->count() || o_sarchs->count()) cfg.archs = *archs;
    set_if(o_steps, steps_list, cfg.steps);
    if (o_seeds->count() || o_sseeds->count()) cfg.seeds = *n_seeds;
    set_if(o_init_lrs, init_lrs, cfg.init_lrs);
    set_if(o_init_lr, init_lr, cfg.meta_act.init_lr);
    if (trn->parsed()) {
      parse_arch(train_arch);
      cfg.archs = {train_arch};
      cfg.seeds = 1;
    }
    cfg.resolve();

    if (print_config) {
      out << nlohmann::json(cfg).dump(2) << "\n";
      return kExitOk;
    }
    const std::filesystem::path dir = cfg.output_dir;

    if (plot->parsed()) {
      const auto text = read_file(plot_in);
      const auto parsed = parse_results_csv(std::string(text.begin(), text.end()));
      const std::string dst = plot_out.empty() ? plot_in + ".svg" : plot_out;
      write_text_atomic(dst, results_svg(parsed));
      out << "wrote " << dst << "\n";
      return kExitOk;
    }

    if (!gen->parsed()) cfg.validate();
    if (gen->parsed()) {
      const Dataset d = generate(cfg.dataset);
      std::filesystem::create_directories(dir);
      const auto bytes = encode_dataset(d);
      write_file_atomic(dir / "dataset.bin", bytes);
      if (write_csv) {
        const auto comment = csv_comment(nlohmann::json{{"dataset", cfg.dataset}});
        write_text_atomic(dir / "train.csv", comment + dataset_csv(d.x_train, d.y_train, d.out_len));
        write_text_atomic(dir / "test.csv", comment + dataset_csv(d.x_test, d.y_test, d.out_len));
      }
      std::vector<std::size_t> counts(kNumClasses, 0);
      for (int y : d.y_train) ++counts[static_cast<std::size_t>(y)];
      out << "wrote " << (dir / "dataset.bin").string() << " (" << bytes.size() << " bytes, crc32 "
          << crc32_of(bytes) << ")\n";
      out << "n_train " << d.n_train() << "  n_test " << d.n_test() << "  length " << d.out_len << "\n";
      out << cli_detail::stats_line("train", d.x_train) << "\n" << cli_detail::stats_line("test", d.x_test) << "\n";
      out << "train class counts:";
      for (auto c : counts) out << " " << c;
      out << "\n";
      return kExitOk;
    }

    const Dataset data = data_path.empty() ? generate(cfg.dataset) : load_dataset(data_path);
    if (!data_path.empty()) cfg.dataset = data.config;
    auto progress = [&err](const std::string& s) { err << s << "\n"; };

    if (trn->parsed()) {
      TrainConfig tc = cfg.train;
      tc.steps = cfg.steps.back();
      tc.seed = cfg.master_seed;
      tc.lr = cfg.lr_for(train_arch);
      RngStream init_rng = derive(cfg.master_seed, stream_id::kInit);
      Model model = build_model(parse_arch(train_arch), cfg.hyper, init_rng);
      const auto t0 = std::chrono::steady_clock::now();
      TrainResult r = train(model, data, tc);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::filesystem::create_directories(dir);
      write_text_atomic(dir / "run.json", r.record.to_json().dump(2) + "\n");
      write_text_atomic(dir / "curve.csv", csv_comment(r.record.config) + r.record.curve_csv());
      save_checkpoint(r.checkpoint, dir / "model.ckpt", r.record.config);
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s: best test acc %.4f at step %zu, final %.4f (%.1f s)\n",
                    train_arch.c_str(), r.record.best_test_acc, r.record.best_step, r.record.final_test_acc, secs);
      out << buf;
      return kExitOk;
    }

    if (bench->parsed()) {
      const BenchResult r = run_bench(cfg, data, progress);
      write_bench_outputs(r, dir);
      out << "arch,steps,mean_best_test_acc,std_best_test_acc\n";
      for (const auto& row : r.summary()) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%zu,%.4f,%.4f\n", row.arch.c_str(), row.steps, row.mean_best,
                      row.std_best);
        out << buf;
      }
      out << r.record_count() << " run records written to " << dir.string() << "\n";
      return kExitOk;
    }

    if (shuf->parsed()) {
      const ShuffleResult r = run_shuffle_bench(cfg, data, nullptr, progress);
      write_shuffle_outputs(r, dir);
      std::vector<std::string> seen;
      for (const auto& p : r.pairs) {
        if (std::find(seen.begin(), seen.end(), p.arch) != seen.end()) continue;
        seen.push_back(p.arch);
        char buf[128];
        std::snprintf(buf, sizeof buf, "%s: mean delta (shuffled - original) %+.4f\n", p.arch.c_str(),
                      r.mean_delta(p.arch));
        out << buf;
      }
      return kExitOk;
    }

    if (mlr->parsed()) {
      std::vector<MetaLrRun> runs;
      try {
        runs = run_meta_lr(cfg, data);
      } catch (const MetaDiverged<LrStep>& e) {
        err << e.what() << "; trajectory so far:\n";
        for (const auto& s : e.trajectory) err << "  " << s.outer_step << " lr " << s.lr << " loss " << s.meta_loss << "\n";
        return kExitRuntime;
      }
      write_meta_lr_outputs(cfg, runs, dir);
      for (const auto& r : runs) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "init lr %g -> learned lr %.6f (%s)\n", r.init_lr, r.result.learned_lr,
                      lr_converged(r.result) ? "converged" : "not converged");
        out << buf;
      }
      char buf[128];
      std::snprintf(buf, sizeof buf, "reference learning rate %.2f\n", kReferenceMetaLr);
      out << buf;
      return kExitOk;
    }

    if (mact->parsed()) {
      MetaActResult r;
      try {
        r = meta_learn_activation(data, cfg.meta_act);
      } catch (const MetaDiverged<ActStep>& e) {
        err << e.what() << "; trajectory so far:\n";
        for (const auto& s : e.trajectory) err << "  " << s.outer_step << " loss " << s.meta_loss << "\n";
        return kExitRuntime;
      }
      write_meta_act_outputs(cfg, r, dir);
      char buf[256];
      std::snprintf(buf, sizeof buf, "ELU test acc %.4f, learned test acc %.4f, difference %+.4f\n",
                    r.report.elu_test_acc, r.report.learned_test_acc, r.report.diff());
      out << buf;
      return kExitOk;
    }
  } catch (const cli_detail::UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mnist1d
