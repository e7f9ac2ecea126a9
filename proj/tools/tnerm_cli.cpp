// tnerm: fit, predict, interval and simulate from the command line.
//
// Exit codes: 0 ok, 2 usage or parameter error, 3 input data or linear algebra,
// 4 convergence failure, 5 numeric or internal error. Errors are written to
// stderr as a single JSON object.

#include "tnerm/bootstrap.hpp"
#include "tnerm/error.hpp"
#include "tnerm/estimation.hpp"
#include "tnerm/io.hpp"
#include "tnerm/prediction.hpp"
#include "tnerm/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace tnerm;

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ParameterError*>(&e)) return 2;
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const LinearAlgebraError*>(&e)) return 3;
  if (dynamic_cast<const ConvergenceError*>(&e)) return 4;
  return 5;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["error"] = {{"kind", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << "\n";
  return code;
}

struct DataOptions {
  std::string data;
  std::string area = "area";
  std::string response = "y";
  std::vector<std::string> covariates;
  bool no_intercept = false;
  double response_divisor = 1.0;
};

struct ModelOptions {
  std::string transform = "dp";
  std::vector<double> bounds;
  std::string estimator = "ml";
  std::string beta_formula = "standard";
  std::optional<double> lambda_fixed;
  double lambda_max = 5.0;
};

struct OutputOptions {
  std::string out;
  std::string format = "json";
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data", d.data, "Unit-level CSV file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--area", d.area, "Area id column")->capture_default_str();
  cmd->add_option("--response", d.response, "Response column")->capture_default_str();
  cmd->add_option("--covariates", d.covariates, "Covariate columns (comma separated)")->delimiter(',');
  cmd->add_flag("--no-intercept", d.no_intercept, "Do not prepend an intercept column");
  cmd->add_option("--response-divisor", d.response_divisor, "Divide the response by this before modelling")
      ->capture_default_str();
}

void add_model_options(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--transform", m.transform, "dp (dual power), dpl (dual power logistic) or identity")
      ->check(CLI::IsMember({"dp", "dpl", "identity"}))
      ->capture_default_str();
  cmd->add_option("--bounds", m.bounds, "Lower bound a, or a,b for dpl")->delimiter(',')->expected(1, 2);
  cmd->add_option("--estimator", m.estimator, "pr, ml or reml")
      ->check(CLI::IsMember({"pr", "ml", "reml"}))
      ->capture_default_str();
  cmd->add_option("--beta-formula", m.beta_formula, "standard or verbatim")
      ->check(CLI::IsMember({"standard", "gls", "verbatim"}))
      ->capture_default_str();
  cmd->add_option("--lambda-fixed", m.lambda_fixed, "Hold lambda at this value");
  cmd->add_option("--lambda-max", m.lambda_max, "Upper end of the lambda search")->capture_default_str();
}

void add_output_options(CLI::App* cmd, OutputOptions& o) {
  cmd->add_option("--out", o.out, "Output file (default: stdout)");
  cmd->add_option("--format", o.format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
}

CsvSchema schema_of(const DataOptions& d) {
  CsvSchema s;
  s.area_column = d.area;
  s.response_column = d.response;
  s.covariate_columns = d.covariates;
  s.intercept = !d.no_intercept;
  s.response_divisor = d.response_divisor;
  return s;
}

TransformSpec spec_of(const ModelOptions& m) {
  TransformSpec t;
  if (m.transform == "dp") {
    if (m.bounds.size() > 1) throw ParameterError("--bounds takes a single lower bound for dp");
    t = TransformSpec::dual_power(m.bounds.empty() ? 0.0 : m.bounds[0]);
  } else if (m.transform == "dpl") {
    if (m.bounds.size() == 1) throw ParameterError("--bounds needs a,b for dpl");
    t = m.bounds.empty() ? TransformSpec::dual_power_logistic() : TransformSpec::dual_power_logistic(m.bounds[0], m.bounds[1]);
  } else {
    t = TransformSpec::identity();
  }
  if (m.lambda_fixed) t = t.with_fixed_lambda(*m.lambda_fixed);
  t.check();
  return t;
}

FitConfig config_of(const ModelOptions& m) {
  FitConfig c;
  c.estimator = estimator_from_string(m.estimator);
  c.beta_formula = beta_formula_from_string(m.beta_formula);
  c.lambda_max = m.lambda_max;
  return c;
}

void emit(const OutputOptions& o, const std::string& bytes) {
  if (o.out.empty()) {
    std::cout << bytes;
    std::cout.flush();
  } else {
    write_file_atomic(o.out, bytes);
  }
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

struct Fitted {
  UnitLevelDataset data;
  FitResult fit;
  ResultEnvelope env;
};

Fitted fit_from_options(const DataOptions& d, const ModelOptions& m, const std::string& command) {
  Fitted f;
  const CsvSchema schema = schema_of(d);
  const TransformSpec spec = spec_of(m);
  const std::string bytes = read_file(d.data);
  f.data = parse_csv(bytes, schema, &spec);
  Diagnostics diag = validate(f.data, spec);
  f.fit = fit(f.data, spec, config_of(m));
  f.env.fit = f.fit;
  f.env.warnings = diag.warnings;
  f.env.response_divisor = d.response_divisor;
  f.env.areas = area_rows(f.fit, f.data, d.response_divisor);
  f.env.provenance.input_sha256 = sha256_hex(bytes);
  f.env.provenance.command = command;
  return f;
}

PredictionInterval to_raw(PredictionInterval iv, double divisor) {
  iv.teblup *= divisor;
  iv.lower *= divisor;
  iv.upper *= divisor;
  return iv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformed nested error regression: fitting, prediction and intervals for small areas"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  DataOptions data_opt;
  ModelOptions model_opt;
  OutputOptions out_opt;

  auto* fit_cmd = app.add_subcommand("fit", "Estimate lambda, beta and the variance components; report TEBLUPs");
  add_data_options(fit_cmd, data_opt);
  add_model_options(fit_cmd, model_opt);
  add_output_options(fit_cmd, out_opt);

  std::string fit_path;
  auto* predict_cmd = app.add_subcommand("predict", "TEBLUPs from a saved fit");
  predict_cmd->add_option("--fit", fit_path, "JSON written by `tnerm fit`")->required()->check(CLI::ExistingFile);
  add_output_options(predict_cmd, out_opt);

  std::vector<std::string> kinds{"naive", "unconditional"};
  int B = 200;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  int threads = 1;
  std::string quantile_rule = "equal";
  std::string degenerate = "exclude";
  auto* interval_cmd = app.add_subcommand("interval", "Fit, then naive and/or bootstrap prediction intervals");
  add_data_options(interval_cmd, data_opt);
  add_model_options(interval_cmd, model_opt);
  add_output_options(interval_cmd, out_opt);
  interval_cmd->add_option("--kind", kinds, "naive, unconditional, conditional (comma separated)")
      ->delimiter(',')
      ->check(CLI::IsMember({"naive", "unconditional", "conditional"}));
  interval_cmd->add_option("--alpha", alpha, "1 - nominal level")->capture_default_str();
  interval_cmd->add_option("--bootstrap", B, "Bootstrap replicates B")->capture_default_str();
  interval_cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
  interval_cmd->add_option("--threads", threads, "Worker threads (0: all cores)")->capture_default_str();
  interval_cmd->add_option("--quantile-rule", quantile_rule, "equal or shortest")
      ->check(CLI::IsMember({"equal", "shortest"}))
      ->capture_default_str();
  interval_cmd->add_option("--degenerate-pivots", degenerate, "exclude or keep")
      ->check(CLI::IsMember({"exclude", "keep"}))
      ->capture_default_str();

  std::string scenario_path;
  std::optional<int> sim_R, sim_B, sim_threads;
  std::optional<std::uint64_t> sim_seed;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a Monte Carlo study described by a scenario file");
  sim_cmd->add_option("--scenario", scenario_path, "Scenario file (key = value lines)")
      ->required()
      ->check(CLI::ExistingFile);
  sim_cmd->add_option("--R", sim_R, "Override the number of runs");
  sim_cmd->add_option("--B", sim_B, "Override the bootstrap size");
  sim_cmd->add_option("--seed", sim_seed, "Override the master seed");
  sim_cmd->add_option("--threads", sim_threads, "Worker threads (0: all cores)");
  add_output_options(sim_cmd, out_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2);
  }

  const std::string command = command_line(argc, argv);
  try {
    const ExportFormat format = export_format_from_string(out_opt.format);

    if (fit_cmd->parsed()) {
      Fitted f = fit_from_options(data_opt, model_opt, command);
      emit(out_opt, export_envelope(f.env, format));
    } else if (predict_cmd->parsed()) {
      const std::string bytes = read_file(fit_path);
      ResultEnvelope in = envelope_from_json(bytes);
      ResultEnvelope env;
      env.fit = in.fit;
      env.warnings = in.warnings;
      env.response_divisor = in.response_divisor;
      env.areas = area_rows(in.fit, in.response_divisor);
      // sample means are not part of a fit; carry them over when the ids line up
      for (auto& r : env.areas)
        for (const auto& old : in.areas)
          if (old.area_id == r.area_id) r.sample_mean = old.sample_mean;
      env.provenance.input_sha256 = sha256_hex(bytes);
      env.provenance.command = command;
      emit(out_opt, export_envelope(env, format));
    } else if (interval_cmd->parsed()) {
      Fitted f = fit_from_options(data_opt, model_opt, command);
      BootstrapConfig cfg;
      cfg.B = B;
      cfg.seed = seed;
      cfg.alpha = alpha;
      cfg.threads = threads;
      cfg.quantile_rule = quantile_rule == "shortest" ? QuantileRule::ShortestInterval : QuantileRule::EqualTailed;
      cfg.degenerate_pivots = degenerate == "keep" ? DegeneratePivots::KeepInfinite : DegeneratePivots::Exclude;
      bool any_bootstrap = false;
      for (const auto& k : kinds) {
        std::vector<PredictionInterval> ivs;
        if (k == "naive") {
          if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("--alpha must lie in (0, 1)");
          ivs = naive_intervals(f.fit, alpha);
        } else {
          cfg.check();
          any_bootstrap = true;
          ivs = k == "unconditional" ? unconditional_intervals(f.fit, f.data, cfg)
                                     : conditional_intervals(f.fit, f.data, cfg);
        }
        for (std::size_t i = 0; i < ivs.size(); ++i)
          f.env.areas[i].intervals.push_back(to_raw(ivs[i], data_opt.response_divisor));
      }
      if (any_bootstrap) {
        f.env.bootstrap = cfg;
        f.env.provenance.seed = seed;
      }
      emit(out_opt, export_envelope(f.env, format));
    } else if (sim_cmd->parsed()) {
      ScenarioSpec s = load_scenario(scenario_path);
      if (sim_R) s.R = *sim_R;
      if (sim_B) s.B = *sim_B;
      if (sim_seed) s.seed = *sim_seed;
      if (sim_threads) s.threads = *sim_threads;
      s.check();
      StudyReport report = run_study(s);
      emit(out_opt, format == ExportFormat::Json ? report.to_json() : report.to_csv());
    }
  } catch (const Error& e) {
    return report_error(e.kind(), e.what(), exit_code_for(e));
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 5);
  }
  return 0;
}
