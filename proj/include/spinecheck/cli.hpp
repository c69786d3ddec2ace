#pragma once

// Experiment driver behind the `spinecheck` executable: configuration,
// the three verification commands and report rendering.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "spinecheck/bbm.hpp"
#include "spinecheck/gw.hpp"
#include "spinecheck/offspring.hpp"
#include "spinecheck/oracle.hpp"
#include "spinecheck/report.hpp"
#include "spinecheck/stats.hpp"

namespace spinecheck::cli {

enum ExitCode : int { kPass = 0, kCheckFailed = 1, kUsage = 2 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BBMConfig {
  double branch_rate = 1.0;
  double lambda = 0.5;
  double horizon_t = 2.0;
  double time_step = 0.05;
  std::vector<std::pair<double, double>> martingale_checks{{0.5, 1.0}, {0.5, 2.0}, {1.0, 1.0}};
  std::vector<double> passage_levels{0.5, 1.0};
  std::size_t particle_cap = kParticleCap;
};

struct ExperimentConfig {
  std::vector<Atom> offspring;
  std::optional<unsigned> horizon;
  std::optional<std::size_t> samples;
  std::optional<std::uint64_t> seed;
  unsigned oracle_max_n = 6;
  std::vector<double> ui_thresholds{1, 2, 4, 8, 16, 32, 64};
  double ui_tolerance = 1e-2;
  double convergence_tolerance = 0.02;
  std::optional<BBMConfig> bbm;
  std::string output;
  std::string format = "json";
};

namespace detail {

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

// Accepts {"k": 2, "p": 0.6} objects or "2:0.6" strings.
inline Atom parse_atom(const Json& entry) {
  if (entry.is_object()) {
    if (!entry.contains("k") || !entry.contains("p")) {
      throw ConfigError("offspring entry needs 'k' and 'p'");
    }
    const auto k = entry.at("k").get<long long>();
    if (k < 0) throw ConfigError("offspring count must be non-negative");
    return {static_cast<std::uint32_t>(k), entry.at("p").get<double>()};
  }
  if (entry.is_string()) {
    const auto text = entry.get<std::string>();
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw ConfigError("offspring entry '" + text + "' is not k:p");
    std::size_t used_k = 0;
    std::size_t used_p = 0;
    const std::string k_text = text.substr(0, colon);
    const std::string p_text = text.substr(colon + 1);
    long long k = 0;
    double p = 0.0;
    try {
      k = std::stoll(k_text, &used_k);
      p = std::stod(p_text, &used_p);
    } catch (const std::exception&) {
      throw ConfigError("offspring entry '" + text + "' is not k:p");
    }
    if (used_k != k_text.size() || used_p != p_text.size() || k < 0) {
      throw ConfigError("offspring entry '" + text + "' is not k:p");
    }
    return {static_cast<std::uint32_t>(k), p};
  }
  throw ConfigError("offspring entries must be objects or 'k:p' strings");
}

inline Json pairs_to_json(const std::vector<std::pair<double, double>>& pairs) {
  Json out = Json::array();
  for (const auto& [a, b] : pairs) out.push_back(Json::array({a, b}));
  return out;
}

}  // namespace detail

inline OffspringDistribution offspring_of(const ExperimentConfig& config) {
  try {
    return make_offspring(config.offspring);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("offspring law: ") + e.what());
  }
}

inline BBMParams bbm_params(const ExperimentConfig& config, double lambda, double horizon) {
  const BBMConfig& b = *config.bbm;
  BBMParams params{.branch_rate = b.branch_rate,
                   .lambda = lambda,
                   .offspring = offspring_of(config),
                   .horizon = horizon,
                   .time_step = b.time_step,
                   .particle_cap = b.particle_cap,
                   .record_particles = false};
  return params;
}

// Parses and validates; every module precondition is re-checked here so that
// bad input exits with the usage code before any simulation starts.
inline ExperimentConfig parse_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  ExperimentConfig c;
  if (!j.contains("offspring") || !j.at("offspring").is_array()) {
    throw ConfigError("'offspring' must be an array of {k, p} entries");
  }
  try {
    for (const Json& entry : j.at("offspring")) c.offspring.push_back(detail::parse_atom(entry));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("offspring: ") + e.what());
  }
  offspring_of(c);

  if (j.contains("horizon")) {
    const auto h = detail::get_or<long long>(j, "horizon", 0);
    if (h < 1 || h > 100000) throw ConfigError("'horizon' must lie in [1, 100000]");
    c.horizon = static_cast<unsigned>(h);
  }
  if (j.contains("samples")) {
    const auto s = detail::get_or<long long>(j, "samples", 0);
    if (s < 2) throw ConfigError("'samples' must be at least 2");
    c.samples = static_cast<std::size_t>(s);
  }
  if (j.contains("seed")) c.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  c.oracle_max_n = detail::get_or<unsigned>(j, "oracle_max_n", c.oracle_max_n);
  if (c.oracle_max_n > kExactMaxGeneration) {
    throw ConfigError("'oracle_max_n' must be at most " + std::to_string(kExactMaxGeneration));
  }
  c.ui_thresholds = detail::get_or(j, "ui_thresholds", c.ui_thresholds);
  if (c.ui_thresholds.empty()) throw ConfigError("'ui_thresholds' is empty");
  for (std::size_t k = 0; k < c.ui_thresholds.size(); ++k) {
    if (!(c.ui_thresholds[k] > 0.0) || (k > 0 && !(c.ui_thresholds[k] > c.ui_thresholds[k - 1]))) {
      throw ConfigError("'ui_thresholds' must be positive and strictly increasing");
    }
  }
  c.ui_tolerance = detail::get_or(j, "ui_tolerance", c.ui_tolerance);
  c.convergence_tolerance = detail::get_or(j, "convergence_tolerance", c.convergence_tolerance);
  if (!(c.ui_tolerance > 0.0) || !(c.convergence_tolerance > 0.0)) {
    throw ConfigError("tolerances must be positive");
  }

  if (j.contains("bbm")) {
    const Json& b = j.at("bbm");
    if (!b.is_object()) throw ConfigError("'bbm' must be an object");
    BBMConfig bc;
    bc.branch_rate = detail::get_or(b, "branch_rate", bc.branch_rate);
    bc.lambda = detail::get_or(b, "lambda", bc.lambda);
    bc.horizon_t = detail::get_or(b, "horizon_t", bc.horizon_t);
    bc.time_step = detail::get_or(b, "time_step", bc.time_step);
    bc.martingale_checks = detail::get_or(b, "martingale_checks", bc.martingale_checks);
    bc.passage_levels = detail::get_or(b, "passage_levels", bc.passage_levels);
    bc.particle_cap = detail::get_or(b, "particle_cap", bc.particle_cap);
    c.bbm = bc;
    try {
      validate(bbm_params(c, bc.lambda, bc.horizon_t));
      for (const auto& [lambda, t] : bc.martingale_checks) validate(bbm_params(c, lambda, t));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("bbm: ") + e.what());
    }
  }
  c.output = detail::get_or<std::string>(j, "output", "");
  c.format = detail::get_or<std::string>(j, "format", c.format);
  if (c.format != "json" && c.format != "csv") throw ConfigError("'format' must be json or csv");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

// Every field that influences results; output path and format are excluded.
inline Json canonical(const ExperimentConfig& c) {
  Json law = Json::array();
  for (const Atom& a : c.offspring) law.push_back(Json{{"k", a.k}, {"p", a.p}});
  Json j{{"offspring", law},
         {"horizon", c.horizon ? Json(*c.horizon) : Json(nullptr)},
         {"samples", c.samples ? Json(*c.samples) : Json(nullptr)},
         {"seed", c.seed ? Json(*c.seed) : Json(nullptr)},
         {"oracle_max_n", c.oracle_max_n},
         {"ui_thresholds", c.ui_thresholds},
         {"ui_tolerance", c.ui_tolerance},
         {"convergence_tolerance", c.convergence_tolerance}};
  if (c.bbm) {
    const BBMConfig& b = *c.bbm;
    j["bbm"] = Json{{"branch_rate", b.branch_rate},
                    {"lambda", b.lambda},
                    {"horizon_t", b.horizon_t},
                    {"time_step", b.time_step},
                    {"martingale_checks", detail::pairs_to_json(b.martingale_checks)},
                    {"passage_levels", b.passage_levels},
                    {"particle_cap", b.particle_cap}};
  }
  return j;
}

struct RunOptions {
  unsigned threads = default_threads();
  bool timestamp = true;
};

struct CommandResult {
  int exit_code = kPass;
  Json report;
  std::vector<TableRow> table;
};

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects checks and assembles the report in a fixed field order.
class ReportBuilder {
 public:
  ReportBuilder(std::string command, const ExperimentConfig& config, const RunOptions& options)
      : command_(std::move(command)),
        digest_(digest_hex(canonical(config).dump())),
        timestamp_(options.timestamp) {}

  void add(Check check) { checks_.push_back(std::move(check)); }
  void extra(const std::string& key, Json value) { extras_[key] = std::move(value); }
  void row(TableRow r) { table_.push_back(std::move(r)); }

  [[nodiscard]] bool all_pass() const {
    for (const Check& c : checks_) {
      if (!c.pass) return false;
    }
    return !checks_.empty();
  }

  CommandResult finish() {
    Json report;
    report["command"] = command_;
    if (timestamp_) report["timestamp"] = utc_timestamp();
    report["config_digest"] = digest_;
    Json checks = Json::array();
    for (const Check& c : checks_) checks.push_back(to_json(c));
    report["checks"] = checks;
    report["pass"] = all_pass();
    for (auto& [k, v] : extras_.items()) report[k] = v;
    Json rows = Json::array();
    for (const TableRow& r : table_) rows.push_back(to_json(r));
    report["table"] = rows;
    return {all_pass() ? kPass : kCheckFailed, std::move(report), std::move(table_)};
  }

 private:
  std::string command_;
  std::string digest_;
  bool timestamp_;
  std::vector<Check> checks_;
  Json extras_ = Json::object();
  std::vector<TableRow> table_;
};

inline Check z_check(std::string name, std::string ref, const MCEstimate& est, double exact,
                     double sigmas) {
  const Verdict v = compare_two_sided(est, exact, sigmas);
  return {std::move(name), std::move(ref), est.mean, exact, sigmas, v.pass,
          Json{{"estimate", to_json(est)}, {"verdict", to_json(v)}}};
}

inline Check two_sided_check(std::string name, std::string ref, const MCEstimate& a,
                             const MCEstimate& b, double sigmas) {
  const Verdict v = compare_two_sided(a, b, sigmas);
  return {std::move(name), std::move(ref), a.mean, b.mean, sigmas, v.pass,
          Json{{"p_side", to_json(a)}, {"q_side", to_json(b)}, {"verdict", to_json(v)}}};
}

// Per-atom comparison of an empirical law with an exact one; the standard
// error of each atom is taken from the exact probability.
inline Check law_match_check(std::string name, std::string ref, const ExactLaw& exact,
                             const std::vector<std::uint64_t>& draws, double sigmas) {
  std::map<std::uint64_t, std::size_t> counts;
  for (std::uint64_t x : draws) ++counts[x];
  const double n = static_cast<double>(draws.size());
  double worst = 0.0;
  std::size_t unexpected = 0;
  std::map<std::uint64_t, bool> support;
  for (const auto& [j, p] : exact.atoms) support[j] = true;
  for (const auto& [j, c] : counts) support[j] = true;
  for (const auto& [j, unused] : support) {
    const double p = exact.mass(j);
    const auto it = counts.find(j);
    const double freq = it == counts.end() ? 0.0 : static_cast<double>(it->second) / n;
    if (p == 0.0) {
      ++unexpected;
      continue;
    }
    const double se = std::sqrt(p * (1.0 - p) / n);
    const double z = se > 0.0 ? std::abs(freq - p) / se : (freq == p ? 0.0 : HUGE_VAL);
    worst = std::max(worst, z);
  }
  return {std::move(name),
          std::move(ref),
          worst,
          0.0,
          sigmas,
          worst <= sigmas && unexpected == 0,
          Json{{"atoms", exact.atoms.size()}, {"unexpected_atoms", unexpected},
               {"samples", draws.size()}}};
}

inline Check failure_check(std::string name, const std::string& message) {
  return {std::move(name), "", 0.0, std::nullopt, 0.0, false, Json{{"error", message}}};
}

inline std::uint64_t require_seed(const ExperimentConfig& config) {
  if (!config.seed) throw ConfigError("a master seed is required (config 'seed' or --seed)");
  return *config.seed;
}

// Largest n <= cap for which the exact law is computable.
inline unsigned exact_limit(const OffspringDistribution& dist, unsigned cap) {
  unsigned n = 0;
  while (n < cap) {
    try {
      exact_law_p(dist, n + 1, 1);
    } catch (const SupportExplosion&) {
      break;
    }
    ++n;
  }
  return n;
}

}  // namespace detail

inline constexpr double kExactTolerance = 1e-10;
inline constexpr double kMeasureTolerance = 1e-12;
inline constexpr double kLawSigmas = 4.0;
inline constexpr double kMeanSigmas = 4.0;

inline CommandResult cmd_verify_discrete(const ExperimentConfig& config,
                                         const RunOptions& options) {
  const OffspringDistribution dist = offspring_of(config);
  const std::uint64_t seed = detail::require_seed(config);
  const unsigned horizon = config.horizon.value_or(10);
  const std::size_t samples = config.samples.value_or(100000);
  const double m = dist.mean();
  detail::ReportBuilder rb("verify-discrete", config, options);

  // Exact part.
  const unsigned limit = detail::exact_limit(dist, std::min(config.oracle_max_n, horizon));
  std::vector<double> q_inv_z;
  double martingale_dev = 0.0;
  for (unsigned n = 0; n <= limit; ++n) {
    const double value = q_inverse_z(exact_law_q(dist, n), m, n);
    const double survival = survival_after_n(dist, n);
    q_inv_z.push_back(value);
    martingale_dev = std::max(martingale_dev, std::abs(value - 1.0));
    rb.add({"q_inv_z[" + std::to_string(n) + "]", "Q[1/Z_n] = P(Z_n > 0) = P(extinction time > n)",
            value, survival, kExactTolerance, std::abs(value - survival) <= kExactTolerance, {}});
  }
  const TrendVerdict exact_trend = supermartingale_trend(q_inv_z);
  rb.add({"exact_supermartingale_trend", "Q[1/Z_{n+1}] <= Q[1/Z_n]",
          exact_trend.worst_excess, 0.0, 0.0, exact_trend.non_increasing,
          Json{{"first_violation", exact_trend.first_violation}}});
  if (dist.mass(0) == 0.0) {
    rb.add({"extinction_dichotomy", "no extinction under P implies 1/Z is a Q-martingale",
            martingale_dev, 0.0, kMeasureTolerance, martingale_dev <= kMeasureTolerance,
            Json{{"regime", "martingale"}}});
  } else if (limit >= 1) {
    rb.add({"extinction_dichotomy", "extinction under P implies Q[1/Z_1] < Q[1/Z_0] = 1",
            q_inv_z[1], 1.0, 0.0, q_inv_z[1] < 1.0 && std::abs(q_inv_z[0] - 1.0) <= kMeasureTolerance,
            Json{{"regime", "strict supermartingale"}}});
  }
  for (unsigned n = 1; n <= limit; ++n) {
    const OracleReport r = check_change_of_measure(dist, n, kMeasureTolerance);
    rb.add({"change_of_measure[" + std::to_string(n) + "]", "Q(A) = P[Z_n 1_A] for A in F_n",
            r.max_abs_deviation, 0.0, r.tolerance, r.pass, to_json(r)});
  }
  for (unsigned n = 1; n <= 2; ++n) {
    for (unsigned s = 1; s <= 2; ++s) {
      if (n + s > detail::exact_limit(dist, std::min(n + s, kExactMaxGeneration))) continue;
      try {
        const OracleReport r = check_supermartingale_identity(dist, n, s, kExactTolerance);
        rb.add({"supermartingale_identity[" + std::to_string(n) + "," + std::to_string(s) + "]",
                "Q[1/Z_{n+s} | F_n] = (1/Z_n) P(Z_{n+s} > 0 | F_n)", r.max_abs_deviation, 0.0,
                r.tolerance, r.pass, to_json(r)});
      } catch (const SupportExplosion&) {
        // conditional laws from large atoms do not fit; skip this pair
      }
    }
  }

  // Monte Carlo part.
  std::vector<GWTrajectory> p_runs;
  std::vector<SpineTrajectory> q_runs;
  try {
    p_runs = simulate_p_batch(dist, horizon, samples, stream_seed(seed, 1), options.threads);
    q_runs = simulate_q_spine_batch(dist, horizon, samples, stream_seed(seed, 2), options.threads);
  } catch (const PopulationOverflow& e) {
    rb.add(detail::failure_check("population_cap", e.what()));
    return rb.finish();
  }

  const unsigned law_n = std::min({4u, horizon, limit});
  for (unsigned n = 1; n <= law_n; ++n) {
    std::vector<std::uint64_t> p_draws;
    std::vector<std::uint64_t> q_draws;
    p_draws.reserve(samples);
    q_draws.reserve(samples);
    for (const auto& t : p_runs) p_draws.push_back(t.sizes[n]);
    for (const auto& t : q_runs) q_draws.push_back(t.sizes[n]);
    rb.add(detail::law_match_check("p_law_match[" + std::to_string(n) + "]",
                                   "simulated P-law of X_n = exact P-law", exact_law_p(dist, n, 1),
                                   p_draws, kLawSigmas));
    rb.add(detail::law_match_check("q_law_match[" + std::to_string(n) + "]",
                                   "spine-simulated law of X_n = exact Q-law",
                                   exact_law_q(dist, n), q_draws, kLawSigmas));
  }

  std::vector<MCEstimate> q_side;
  double worst_mean_z = 0.0;
  std::vector<double> buf(samples);
  for (unsigned n = 0; n <= horizon; ++n) {
    for (std::size_t i = 0; i < samples; ++i) buf[i] = p_runs[i].sizes[n] > 0 ? 1.0 : 0.0;
    const MCEstimate p_est = mc_estimate(buf);
    for (std::size_t i = 0; i < samples; ++i) buf[i] = 1.0 / z_value(q_runs[i], n);
    const MCEstimate q_est = mc_estimate(buf);
    q_side.push_back(q_est);
    if (n >= 1 && n <= 10) {
      for (std::size_t i = 0; i < samples; ++i) buf[i] = z_value(p_runs[i], n);
      const Verdict v = compare_two_sided(mc_estimate(buf), 1.0, kMeanSigmas);
      worst_mean_z = std::max(worst_mean_z, std::abs(v.z_score));
    }
    const double exact = survival_after_n(dist, n);
    rb.row({static_cast<double>(n), "p_survival", p_est.mean, p_est.std_error, exact});
    rb.row({static_cast<double>(n), "q_mean_inverse_z", q_est.mean, q_est.std_error, exact});
    if (n == horizon) {
      rb.add(detail::two_sided_check("two_sided[" + std::to_string(n) + "]",
                                     "P(Z_n > 0) = Q[1/Z_n], both sides simulated", p_est, q_est,
                                     kTwoSidedSigmas));
      rb.add(detail::z_check("q_inv_z_mc[" + std::to_string(n) + "]",
                             "Q[1/Z_n] = 1 - f^(n)(0)", q_est, exact, kTwoSidedSigmas));
    }
  }
  rb.add({"p_martingale_mean", "E_P[Z_n] = 1 for n <= 10 (max |z-score|)", worst_mean_z, 0.0,
          kMeanSigmas, worst_mean_z <= kMeanSigmas, {}});
  const TrendVerdict mc_trend = supermartingale_trend(q_side);
  rb.add({"mc_supermartingale_trend", "Q[1/Z_{n+1}] <= Q[1/Z_n] + 3 combined stderr",
          mc_trend.worst_excess, 0.0, kTwoSidedSigmas, mc_trend.non_increasing, {}});
  rb.extra("q_inv_z", q_inv_z);
  return rb.finish();
}

inline CommandResult cmd_ui_diagnostic(const ExperimentConfig& config, const RunOptions& options) {
  const OffspringDistribution dist = offspring_of(config);
  const std::uint64_t seed = detail::require_seed(config);
  const unsigned horizon = config.horizon.value_or(20);
  const std::size_t samples = config.samples.value_or(100000);
  if (samples < kMinFamilySamples) {
    throw ConfigError("ui-diagnostic needs at least " + std::to_string(kMinFamilySamples) +
                      " samples");
  }
  detail::ReportBuilder rb("ui-diagnostic", config, options);

  const double q_star = extinction_probability(dist, 1e-13);
  const double limit_value = 1.0 - q_star;
  std::vector<double> exact(horizon + 1);
  for (unsigned n = 0; n <= horizon; ++n) exact[n] = survival_after_n(dist, n);
  const TrendVerdict exact_trend = supermartingale_trend(exact);
  rb.add({"exact_monotone", "Q[1/Z_n] = 1 - f^(n)(0) is non-increasing", exact_trend.worst_excess,
          0.0, 0.0, exact_trend.non_increasing, {}});
  const double gap = std::abs(exact[horizon] - limit_value);
  rb.add({"convergence[" + std::to_string(horizon) + "]",
          "Q[1/Z_n] -> P(extinction time = infinity) = 1 - q*", exact[horizon], limit_value,
          config.convergence_tolerance, gap <= config.convergence_tolerance, {}});

  std::vector<SpineTrajectory> q_runs;
  try {
    q_runs = simulate_q_spine_batch(dist, horizon, samples, stream_seed(seed, 3), options.threads);
  } catch (const PopulationOverflow& e) {
    rb.add(detail::failure_check("population_cap", e.what()));
    return rb.finish();
  }
  std::vector<std::vector<double>> families(horizon + 1, std::vector<double>(samples));
  std::vector<MCEstimate> estimates;
  for (unsigned n = 0; n <= horizon; ++n) {
    for (std::size_t i = 0; i < samples; ++i) families[n][i] = 1.0 / z_value(q_runs[i], n);
    estimates.push_back(mc_estimate(families[n]));
    rb.row({static_cast<double>(n), "q_mean_inverse_z", estimates.back().mean,
            estimates.back().std_error, exact[n]});
  }
  rb.add(detail::z_check("mc_agreement[" + std::to_string(horizon) + "]",
                         "spine estimate of Q[1/Z_n] = 1 - f^(n)(0)", estimates.back(),
                         exact[horizon], kTwoSidedSigmas));
  const TrendVerdict mc_trend = supermartingale_trend(estimates);
  rb.add({"mc_supermartingale_trend", "Q[1/Z_{n+1}] <= Q[1/Z_n] + 3 combined stderr",
          mc_trend.worst_excess, 0.0, kTwoSidedSigmas, mc_trend.non_increasing, {}});

  rb.extra("extinction_probability", number(q_star));
  rb.extra("limit", number(limit_value));
  rb.extra("geometric_rate", number(pgf_derivative(dist, q_star)));
  rb.extra("exact_table", exact);
  rb.extra("ui_profile",
           to_json(ui_tail_profile(families, config.ui_thresholds, config.ui_tolerance)));
  return rb.finish();
}

inline CommandResult cmd_verify_bbm(const ExperimentConfig& config, const RunOptions& options) {
  if (!config.bbm) throw ConfigError("verify-bbm needs a 'bbm' block in the config");
  const BBMConfig& bc = *config.bbm;
  const OffspringDistribution dist = offspring_of(config);
  const std::uint64_t seed = detail::require_seed(config);
  const std::size_t samples = config.samples.value_or(10000);
  detail::ReportBuilder rb("verify-bbm", config, options);

  try {
    for (std::size_t c = 0; c < bc.martingale_checks.size(); ++c) {
      const auto [lambda, t] = bc.martingale_checks[c];
      const auto runs = simulate_bbm_p_batch(bbm_params(config, lambda, t), samples,
                                             stream_seed(seed, 100 + c), options.threads);
      std::vector<double> z;
      z.reserve(samples);
      for (const auto& r : runs) z.push_back(r.z.back());
      std::ostringstream name;
      name << "p_mean_z[lambda=" << lambda << ",t=" << t << "]";
      rb.add(detail::z_check(name.str(), "E_P[Z_lambda(t)] = 1", mc_estimate(z), 1.0,
                             kMeanSigmas));
    }

    const BBMParams params = bbm_params(config, bc.lambda, bc.horizon_t);
    const auto p_runs =
        simulate_bbm_p_batch(params, samples, stream_seed(seed, 200), options.threads);
    const auto q_runs = simulate_bbm_spine_batch(params, samples, stream_seed(seed, 201),
                                                 bc.passage_levels, options.threads);
    const std::vector<double> times = observation_times(params);
    std::vector<double> buf(samples);
    for (std::size_t k = 0; k < times.size(); ++k) {
      for (std::size_t i = 0; i < samples; ++i) buf[i] = p_runs[i].counts[k] > 0 ? 1.0 : 0.0;
      const MCEstimate p_est = mc_estimate(buf);
      for (std::size_t i = 0; i < samples; ++i) buf[i] = 1.0 / q_runs[i].z[k];
      const MCEstimate q_est = mc_estimate(buf);
      rb.row({times[k], "p_survival", p_est.mean, p_est.std_error, std::nullopt});
      rb.row({times[k], "q_mean_inverse_z", q_est.mean, q_est.std_error, std::nullopt});
      if (k + 1 == times.size()) {
        rb.add(detail::two_sided_check("two_sided[t=" + format_double(times[k]) + "]",
                                       "P(Z_lambda(t) > 0) = Q[1/Z_lambda(t)], both simulated",
                                       p_est, q_est, kTwoSidedSigmas));
      }
    }
    for (std::size_t i = 0; i < samples; ++i) {
      buf[i] = static_cast<double>(p_runs[i].counts.back());
    }
    rb.add(detail::z_check("p_mean_count", "E_P[|N(t)|] = exp(r (m - 1) t)", mc_estimate(buf),
                           std::exp(params.growth_rate() * params.horizon), kMeanSigmas));
    for (std::size_t i = 0; i < samples; ++i) {
      buf[i] = spine_exponential(q_runs[i].spine_position.back(), params.horizon, params);
    }
    rb.add(detail::z_check("spine_martingale_mean",
                           "spine exponential exp(-lambda (xi_t - lambda t) - lambda^2 t / 2) "
                           "has mean 1",
                           mc_estimate(buf), 1.0, kMeanSigmas));

    std::size_t checks = 0;
    std::size_t violations = 0;
    double max_ratio = 0.0;
    double min_ratio = HUGE_VAL;
    std::vector<std::vector<double>> stopped(bc.passage_levels.size());
    for (const auto& r : q_runs) {
      checks += r.bound.checks;
      violations += r.bound.violations;
      max_ratio = std::max(max_ratio, r.bound.max_ratio);
      min_ratio = std::min(min_ratio, r.bound.min_ratio);
      for (std::size_t l = 0; l < r.bound.stopped.size(); ++l) {
        stopped[l].push_back(r.bound.stopped[l].inverse_z);
      }
    }
    rb.add({"spine_bound", "1/Z_lambda(T) <= C(t) exp(-lambda (xi_T - lambda T) - lambda^2 T / 2)",
            static_cast<double>(violations), 0.0, 0.0, violations == 0,
            Json{{"checks", checks},
                 {"paths", samples},
                 {"constant", number(spine_bound_constant(params, params.horizon))},
                 {"max_ratio_to_spine_term", number(max_ratio)},
                 {"min_ratio_to_spine_term", number(min_ratio)}}});
    if (dist.atoms().size() == 1 && dist.max_k() == 1) {
      const double dev = std::max(std::abs(max_ratio - 1.0), std::abs(min_ratio - 1.0));
      rb.add({"spine_bound_equality", "spine-only population: bound attained with equality", dev,
              0.0, kMeasureTolerance, dev <= kMeasureTolerance, {}});
    }
    if (!bc.passage_levels.empty() && samples >= kMinFamilySamples) {
      rb.extra("stopped_ui_profile",
               to_json(ui_tail_profile(stopped, config.ui_thresholds, config.ui_tolerance)));
    }
  } catch (const ParticleOverflow& e) {
    rb.add(detail::failure_check("particle_cap", e.what()));
  }
  return rb.finish();
}

inline std::string render(const CommandResult& result, const std::string& format) {
  if (format == "csv") {
    std::ostringstream out;
    write_table_csv(out, result.table);
    return out.str();
  }
  return result.report.dump(2) + "\n";
}

// Full command-line entry point; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Change-of-measure verification for branching processes"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples;
  std::string out_path;
  std::string format;
  bool no_timestamp = false;
  unsigned threads = default_threads();
  for (const char* name : {"verify-discrete", "ui-diagnostic", "verify-bbm"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON experiment configuration")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--samples", samples, "trajectories per Monte Carlo run");
    sub->add_option("--out", out_path, "report path (default: stdout)");
    sub->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sub->add_flag("--no-timestamp", no_timestamp, "omit the timestamp field");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kPass : kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  auto write = [&](const std::string& text, const std::string& path) {
    if (path.empty()) {
      out << text;
      return true;
    }
    std::ofstream file(path, std::ios::binary);
    file << text;
    if (!file) {
      err << "cannot write " << path << "\n";
      return false;
    }
    return true;
  };

  ExperimentConfig config;
  try {
    config = load_config(config_path);
    if (seed) config.seed = seed;
    if (samples) {
      if (*samples < 2) throw ConfigError("--samples must be at least 2");
      config.samples = samples;
    }
    if (!format.empty()) config.format = format;
    if (!out_path.empty()) config.output = out_path;
    RunOptions options{threads, !no_timestamp};
    CommandResult result;
    if (command == "verify-discrete") {
      result = cmd_verify_discrete(config, options);
    } else if (command == "ui-diagnostic") {
      result = cmd_ui_diagnostic(config, options);
    } else {
      result = cmd_verify_bbm(config, options);
    }
    if (!write(render(result, config.format), config.output)) return kUsage;
    for (const Json& c : result.report["checks"]) {
      if (!c["pass"].get<bool>()) err << "FAILED " << c["name"].get<std::string>() << "\n";
    }
    return result.exit_code;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    const std::string path = out_path.empty() ? config.output : out_path;
    if (!path.empty()) {
      Json report{{"command", command}, {"error", e.what()}, {"checks", Json::array()},
                  {"pass", false}};
      write(report.dump(2) + "\n", path);
    }
    return kUsage;
  }
}

}  // namespace spinecheck::cli
