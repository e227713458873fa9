#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "astraea/diffusion.hpp"
#include "astraea/io.hpp"
#include "astraea/schedule.hpp"
#include "astraea/search.hpp"
#include "astraea/selection.hpp"

namespace astraea {

/// How the noise schedule is built: `cosine` (DDIM-style) or `constant`.
struct NoiseSpec {
  std::string kind = "cosine";
  double eta = 0.0;
  double abar_min = 0.05;
  double alpha = 1.0;
  double beta = 0.0;
  double sigma = 0.0;

  NoiseSchedule build(std::size_t timesteps) const {
    if (kind == "cosine") return NoiseSchedule::cosine(timesteps, eta, abar_min);
    if (kind == "constant") return NoiseSchedule::constant(timesteps, alpha, beta, sigma);
    throw ConfigError("noise.kind", "unknown noise schedule '" + kind + "' (cosine|constant)");
  }
};

/// Everything a CLI command needs. Parsed from an INI-style file:
///
///   [model]     n_tokens channels context_tokens n_blocks timesteps weight_seed noise_seed
///   [noise]     kind eta abar_min alpha beta sigma
///   [selection] w_alpha w_beta delta_metric(abs|squared) delta_source(live|pair)
///   [run]       mode budget schedule prompt_seed
///   [search]    population elite offspring generations p_initial p_final
///               budget_fraction | budget, prompt_seeds, seed
///   [sweep]     prompt_seeds
///   [output]    dir
///   [exec]      jobs
struct RunConfig {
  ModelConfig model;
  NoiseSpec noise;
  SelectionConfig selection;
  RunMode mode = RunMode::astraea;
  /// Uniform theta for every step after the first, unless `schedule_path` is set.
  double budget = 0.5;
  std::optional<std::string> schedule_path;
  std::uint64_t prompt_seed = 11;
  SearchConfig search;
  /// Search budget as a fraction of the searchable steps; ignored when
  /// [search] budget is given explicitly.
  double search_budget_fraction = 0.5;
  bool search_budget_explicit = false;
  std::vector<std::uint64_t> sweep_prompts = {11, 12};
  std::string out_dir = "out";
  std::size_t jobs = 1;

  NoiseSchedule noise_schedule() const { return noise.build(model.timesteps); }

  /// Search budget (sum of theta over the T - 1 searchable steps).
  double search_budget() const {
    return search_budget_explicit ? search.budget
                                  : search_budget_fraction * static_cast<double>(model.timesteps - 1);
  }

  SearchConfig resolved_search() const {
    SearchConfig s = search;
    s.budget = search_budget();
    s.jobs = jobs;
    return s;
  }

  /// The schedule file if one is configured, else a uniform schedule at
  /// `budget` (step 0 is recorded as 1.0 since it always runs in full).
  Schedule run_schedule() const {
    if (schedule_path) {
      Schedule s;
      try {
        s = load_schedule(*schedule_path);
      } catch (const ScheduleFormatError& e) {
        throw ConfigError("run.schedule", e.what());
      }
      if (s.size() != model.timesteps) {
        throw ConfigError("run.schedule", "has " + std::to_string(s.size()) + " entries, model.timesteps is " +
                                              std::to_string(model.timesteps));
      }
      return s;
    }
    Schedule s = Schedule::from_fractions(std::vector<double>(model.timesteps, budget));
    s.set(0, Schedule::kGridSteps);
    return s;
  }

  void validate() const {
    model.validate();
    selection.validate();
    noise_schedule().validate(model.timesteps);
    if (!(budget >= 0.0 && budget <= 1.0)) throw ConfigError("run.budget", "must lie in [0, 1]");
    if (jobs < 1) throw ConfigError("exec.jobs", "must be >= 1");
    if (sweep_prompts.empty()) throw ConfigError("sweep.prompt_seeds", "at least one prompt seed required");
  }
};

namespace detail {

template <typename T>
T parse_value(const std::string& field, const std::string& text);

template <>
inline double parse_value<double>(const std::string& field, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(field, "expected a number, got '" + text + "'");
  }
}

template <>
inline std::uint64_t parse_value<std::uint64_t>(const std::string& field, const std::string& text) {
  try {
    if (text.empty() || text.front() == '-') throw std::invalid_argument(text);
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(field, "expected a non-negative integer, got '" + text + "'");
  }
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& field, const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = std::string(trim(item));
    if (t.empty()) continue;
    out.push_back(parse_value<std::uint64_t>(field, t));
  }
  if (out.empty()) throw ConfigError(field, "expected a comma-separated list of seeds");
  return out;
}

}  // namespace detail

/// Parses config text. Relative schedule paths resolve against `base_dir`.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("", std::string("config syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  RunConfig cfg;
  using Setter = std::function<void(const std::string& field, const std::string& value)>;
  auto u64 = [](std::uint64_t& dst) -> Setter {
    return [&dst](const std::string& f, const std::string& v) { dst = detail::parse_value<std::uint64_t>(f, v); };
  };
  auto count = [](std::size_t& dst) -> Setter {
    return [&dst](const std::string& f, const std::string& v) {
      dst = static_cast<std::size_t>(detail::parse_value<std::uint64_t>(f, v));
    };
  };
  auto real = [](double& dst) -> Setter {
    return [&dst](const std::string& f, const std::string& v) { dst = detail::parse_value<double>(f, v); };
  };

  const std::map<std::string, Setter> setters = {
      {"model.n_tokens", count(cfg.model.n_tokens)},
      {"model.channels", count(cfg.model.channels)},
      {"model.context_tokens", count(cfg.model.context_tokens)},
      {"model.n_blocks", count(cfg.model.n_blocks)},
      {"model.timesteps", count(cfg.model.timesteps)},
      {"model.weight_seed", u64(cfg.model.weight_seed)},
      {"model.noise_seed", u64(cfg.model.noise_seed)},
      {"noise.kind", [&](const std::string&, const std::string& v) { cfg.noise.kind = v; }},
      {"noise.eta", real(cfg.noise.eta)},
      {"noise.abar_min", real(cfg.noise.abar_min)},
      {"noise.alpha", real(cfg.noise.alpha)},
      {"noise.beta", real(cfg.noise.beta)},
      {"noise.sigma", real(cfg.noise.sigma)},
      {"selection.w_alpha", real(cfg.selection.w_alpha)},
      {"selection.w_beta", real(cfg.selection.w_beta)},
      {"selection.delta_metric",
       [&](const std::string& f, const std::string& v) {
         if (v == "abs") {
           cfg.selection.delta_metric = DeltaMetric::mean_abs;
         } else if (v == "squared") {
           cfg.selection.delta_metric = DeltaMetric::mean_squared;
         } else {
           throw ConfigError(f, "expected abs|squared, got '" + v + "'");
         }
       }},
      {"selection.delta_source",
       [&](const std::string& f, const std::string& v) {
         if (v == "live") {
           cfg.selection.delta_source = DeltaSource::live;
         } else if (v == "pair") {
           cfg.selection.delta_source = DeltaSource::pair;
         } else {
           throw ConfigError(f, "expected live|pair, got '" + v + "'");
         }
       }},
      {"run.mode",
       [&](const std::string& f, const std::string& v) {
         try {
           cfg.mode = parse_run_mode(v);
         } catch (const ConfigError& e) {
           throw ConfigError(f, e.what());
         }
       }},
      {"run.budget", real(cfg.budget)},
      {"run.schedule",
       [&](const std::string&, const std::string& v) {
         std::filesystem::path p(v);
         if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
         cfg.schedule_path = p.string();
       }},
      {"run.prompt_seed", u64(cfg.prompt_seed)},
      {"search.population", count(cfg.search.population_size)},
      {"search.elite", count(cfg.search.elite_count)},
      {"search.offspring", count(cfg.search.offspring_per_generation)},
      {"search.generations", count(cfg.search.max_generations)},
      {"search.p_initial", real(cfg.search.p_initial)},
      {"search.p_final", real(cfg.search.p_final)},
      {"search.budget_fraction", real(cfg.search_budget_fraction)},
      {"search.budget",
       [&](const std::string& f, const std::string& v) {
         cfg.search.budget = detail::parse_value<double>(f, v);
         cfg.search_budget_explicit = true;
       }},
      {"search.prompt_seeds",
       [&](const std::string& f, const std::string& v) { cfg.search.prompt_seeds = detail::parse_seed_list(f, v); }},
      {"search.seed", u64(cfg.search.seed)},
      {"sweep.prompt_seeds",
       [&](const std::string& f, const std::string& v) { cfg.sweep_prompts = detail::parse_seed_list(f, v); }},
      {"output.dir", [&](const std::string&, const std::string& v) { cfg.out_dir = v; }},
      {"exec.jobs", count(cfg.jobs)},
  };

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(section, "keys must live inside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string field = section + "." + key;
      const auto it = setters.find(field);
      if (it == setters.end()) throw ConfigError(field, "unknown configuration key");
      it->second(field, std::string(detail::trim(value.data())));
    }
  }

  if (cfg.schedule_path && !std::filesystem::exists(*cfg.schedule_path)) {
    throw ConfigError("run.schedule", "file '" + *cfg.schedule_path + "' does not exist");
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  const std::filesystem::path p(path);
  return parse_config(read_file(path), p.parent_path());
}

}  // namespace astraea
