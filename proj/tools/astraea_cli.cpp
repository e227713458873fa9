#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "astraea/config.hpp"
#include "astraea/diffusion.hpp"
#include "astraea/flops.hpp"
#include "astraea/io.hpp"
#include "astraea/metrics.hpp"
#include "astraea/search.hpp"
#include "astraea/verify.hpp"

namespace {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("ASTRAEA_LOG");
    const std::string v = env ? env : "warn";
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "[astraea " << names[static_cast<int>(level)] << "] " << msg << "\n";
}

struct CommonOptions {
  std::string config;
  std::string mode;
  std::optional<double> budget;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--mode", o.mode, "full|astraea|timestep|fixed");
  cmd->add_option("--budget", o.budget,
                  "generate/flops: uniform theta per step; search: budget as a fraction of the searchable steps");
  cmd->add_option("--seed", o.seed, "generate: prompt seed; search: search seed; sweep: weight seed");
  cmd->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "output directory");
}

astraea::RunConfig load(const CommonOptions& o) {
  astraea::RunConfig cfg = o.config.empty() ? astraea::RunConfig{} : astraea::load_config(o.config);
  if (!o.mode.empty()) {
    try {
      cfg.mode = astraea::parse_run_mode(o.mode);
    } catch (const astraea::ConfigError& e) {
      throw astraea::ConfigError("--mode", e.what());
    }
  }
  if (o.jobs) cfg.jobs = *o.jobs;
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.validate();
  return cfg;
}

std::filesystem::path prepare_out(const astraea::RunConfig& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

int cmd_generate(const CommonOptions& o, bool wall_time) {
  astraea::RunConfig cfg = load(o);
  if (o.budget) {
    if (!(*o.budget >= 0.0 && *o.budget <= 1.0)) throw astraea::ConfigError("--budget", "must lie in [0, 1]");
    cfg.budget = *o.budget;
    cfg.schedule_path.reset();
  }
  if (o.seed) cfg.prompt_seed = *o.seed;
  const auto dir = prepare_out(cfg);
  const astraea::ToyModel model = astraea::build_toy_model(cfg.model);
  const astraea::NoiseSchedule noise = cfg.noise_schedule();
  const astraea::Schedule schedule = cfg.run_schedule();
  astraea::RunOptions opts;
  opts.selection = cfg.selection;

  log(Level::info, "generate: mode " + std::string(astraea::to_string(cfg.mode)) + ", prompt seed " +
                       std::to_string(cfg.prompt_seed));
  const auto start = std::chrono::steady_clock::now();
  const astraea::RunResult run = astraea::run_inference(model, schedule, cfg.mode, noise, cfg.prompt_seed, opts);
  const auto stop = std::chrono::steady_clock::now();

  astraea::MetricsRecord metrics;
  metrics.flops_total = run.stats.flops.total();
  metrics.selected_tokens = run.stats.selected_tokens;
  if (cfg.mode == astraea::RunMode::full) {
    metrics.reference_flops_total = metrics.flops_total;
    metrics.psnr_peak = astraea::max_abs(run.output);
  } else {
    const astraea::Schedule ones = astraea::Schedule::uniform(cfg.model.timesteps, astraea::Schedule::kGridSteps);
    const astraea::RunResult ref =
        astraea::run_inference(model, ones, astraea::RunMode::full, noise, cfg.prompt_seed, opts);
    metrics.reference_flops_total = ref.stats.flops.total();
    metrics.psnr_peak = astraea::max_abs(ref.output);
    metrics.mse = astraea::compute_mse(ref.output, run.output);
    metrics.psnr = astraea::psnr_from_mse(*metrics.mse, metrics.psnr_peak);
  }
  if (wall_time) metrics.wall_time_ms = std::chrono::duration<double, std::milli>(stop - start).count();

  astraea::write_file((dir / "grid.csv").string(), astraea::grid_to_csv(run.output));
  astraea::write_file((dir / "metrics.json").string(), astraea::to_json(metrics).dump(2) + "\n");
  astraea::write_file((dir / "run_stats.json").string(), astraea::to_json(run.stats).dump(2) + "\n");
  astraea::write_file((dir / "schedule.txt").string(), astraea::render_schedule(schedule));

  std::cout << "mode " << astraea::to_string(cfg.mode) << "  mse "
            << (metrics.mse ? astraea::format_double(*metrics.mse) : "NA") << "  psnr "
            << (metrics.psnr ? astraea::format_double(*metrics.psnr) : "NA") << "  flops " << metrics.flops_total
            << " / " << metrics.reference_flops_total << "\n";
  return 0;
}

int cmd_search(const CommonOptions& o) {
  astraea::RunConfig cfg = load(o);
  if (o.budget) {
    cfg.search_budget_fraction = *o.budget;
    cfg.search_budget_explicit = false;
  }
  if (o.seed) cfg.search.seed = *o.seed;
  const astraea::SearchConfig search = cfg.resolved_search();
  search.validate(cfg.model.timesteps - 1);
  const auto dir = prepare_out(cfg);
  const astraea::ToyModel model = astraea::build_toy_model(cfg.model);
  const astraea::FitnessEvaluator evaluator(model, cfg.noise_schedule(), search.prompt_seeds, cfg.selection, cfg.mode,
                                            cfg.jobs);
  log(Level::info, "search: budget " + astraea::format_double(search.budget) + ", " +
                       std::to_string(search.max_generations) + " generations");
  const astraea::SearchResult result = astraea::run_search(search, evaluator);
  for (const auto& h : result.history) {
    log(Level::info, "generation " + std::to_string(h.generation) + " best " + astraea::format_double(h.best_mse));
  }
  const astraea::Schedule best = astraea::run_schedule_from_genome(result.best.schedule);
  astraea::write_file((dir / "history.csv").string(), astraea::history_to_csv(result.history));
  astraea::write_file((dir / "best_schedule.txt").string(), astraea::render_schedule(best));
  std::cout << "best mse " << astraea::format_double(*result.best.fitness) << "  schedule "
            << astraea::schedule_compact(best) << "\n";
  return 0;
}

int cmd_sweep(const CommonOptions& o) {
  astraea::RunConfig cfg = load(o);
  if (o.seed) cfg.model.weight_seed = *o.seed;
  const auto dir = prepare_out(cfg);
  const astraea::ToyModel model = astraea::build_toy_model(cfg.model);
  const astraea::NoiseSchedule noise = cfg.noise_schedule();
  std::vector<std::vector<double>> columns;
  for (std::uint64_t p : cfg.sweep_prompts) {
    log(Level::info, "sweep: prompt seed " + std::to_string(p));
    columns.push_back(astraea::skip_one_sweep(model, noise, p, cfg.jobs, cfg.selection));
  }
  astraea::write_file((dir / "sweep.csv").string(), astraea::sweep_to_csv(cfg.sweep_prompts, columns));
  for (std::size_t i = 1; i < columns.size(); ++i) {
    std::cout << "spearman(prompt_" << cfg.sweep_prompts[0] << ", prompt_" << cfg.sweep_prompts[i]
              << ") = " << astraea::format_double(astraea::spearman(columns[0], columns[i])) << "\n";
  }
  return 0;
}

int cmd_flops(const CommonOptions& o) {
  astraea::RunConfig cfg = load(o);
  if (o.budget) {
    if (!(*o.budget >= 0.0 && *o.budget <= 1.0)) throw astraea::ConfigError("--budget", "must lie in [0, 1]");
    cfg.budget = *o.budget;
    cfg.schedule_path.reset();
  }
  const auto dir = prepare_out(cfg);
  const astraea::Schedule schedule = cfg.run_schedule();
  const astraea::FlopsReport full = astraea::flops_sparse_run(cfg.model, schedule, astraea::RunMode::full);
  const astraea::FlopsReport run = astraea::flops_sparse_run(cfg.model, schedule, cfg.mode);

  std::ostringstream table;
  auto row = [&](const std::string& name, std::uint64_t a, std::uint64_t b) {
    table << std::left << std::setw(14) << name << std::right << std::setw(16) << a << std::setw(16) << b;
    table << std::setw(10) << std::fixed << std::setprecision(4)
          << (a == 0 ? 0.0 : static_cast<double>(b) / static_cast<double>(a)) << "\n";
  };
  table << std::left << std::setw(14) << "component" << std::right << std::setw(16) << "full" << std::setw(16)
        << astraea::to_string(cfg.mode) << std::setw(10) << "ratio" << "\n";
  row("qkv_proj", full.qkv_proj, run.qkv_proj);
  row("attn_scores", full.attn_scores, run.attn_scores);
  row("attn_output", full.attn_output, run.attn_output);
  row("out_proj", full.out_proj, run.out_proj);
  row("self_attn", full.self_attn(), run.self_attn());
  row("cross_attn", full.cross_attn, run.cross_attn);
  row("mlp", full.mlp, run.mlp);
  row("softmax", full.softmax, run.softmax);
  row("total", full.total(), run.total());
  std::cout << table.str();

  nlohmann::ordered_json j;
  j["mode"] = std::string(astraea::to_string(cfg.mode));
  j["schedule"] = astraea::schedule_compact(schedule);
  j["full"] = astraea::to_json(full);
  j["run"] = astraea::to_json(run);
  astraea::write_file((dir / "flops.json").string(), j.dump(2) + "\n");
  astraea::write_file((dir / "flops.txt").string(), table.str());
  return 0;
}

int cmd_verify(const CommonOptions& o, const std::string& schedule) {
  const astraea::RunConfig cfg = load(o);
  std::optional<std::string> path;
  if (!schedule.empty()) path = schedule;
  const auto results = astraea::run_verify(cfg, path);
  std::size_t failures = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(44) << r.name << " " << r.detail << "\n";
    if (!r.passed) ++failures;
  }
  std::cout << results.size() - failures << "/" << results.size() << " checks passed\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-selective sparse diffusion inference on a toy transformer"};
  app.require_subcommand(1);

  CommonOptions gen_opts, search_opts, sweep_opts, flops_opts, verify_opts;
  bool wall_time = false;
  std::string verify_schedule;

  auto* gen = app.add_subcommand("generate", "run inference and report quality against the full run");
  add_common(gen, gen_opts);
  gen->add_flag("--wall-time", wall_time, "record wall time in metrics.json");
  auto* search = app.add_subcommand("search", "evolutionary search for a per-step budget schedule");
  add_common(search, search_opts);
  auto* sweep = app.add_subcommand("sweep", "skip-one sensitivity sweep over timesteps");
  add_common(sweep, sweep_opts);
  auto* flops = app.add_subcommand("flops", "analytic FLOPs of a schedule against full compute");
  add_common(flops, flops_opts);
  auto* verify = app.add_subcommand("verify", "run the built-in self-check suite");
  add_common(verify, verify_opts);
  verify->add_option("--schedule", verify_schedule, "schedule file to validate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_opts, wall_time);
    if (search->parsed()) return cmd_search(search_opts);
    if (sweep->parsed()) return cmd_sweep(sweep_opts);
    if (flops->parsed()) return cmd_flops(flops_opts);
    if (verify->parsed()) return cmd_verify(verify_opts, verify_schedule);
  } catch (const astraea::ConfigError& e) {
    log(Level::error, std::string("config error: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log(Level::error, e.what());
    return 3;
  }
  return 0;
}
