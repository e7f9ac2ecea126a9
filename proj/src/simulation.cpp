#include "tnerm/simulation.hpp"

#include "csv.hpp"
#include "tnerm/error.hpp"
#include "tnerm/prediction.hpp"
#include "tnerm/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace tnerm {

std::string to_string(StudyKind k) {
  switch (k) {
    case StudyKind::Pmse: return "pmse";
    case StudyKind::Coverage: return "coverage";
    case StudyKind::ConditionalCoverage: return "conditional";
  }
  return "unknown";
}

StudyKind study_kind_from_string(const std::string& s) {
  if (s == "pmse") return StudyKind::Pmse;
  if (s == "coverage") return StudyKind::Coverage;
  if (s == "conditional" || s == "conditional_coverage") return StudyKind::ConditionalCoverage;
  throw ParameterError("unknown study '" + s + "'");
}

int ScenarioSpec::n_of(int area) const {
  return n_pattern.size() == 1 ? n_pattern.front() : n_pattern[std::size_t(area)];
}

void ScenarioSpec::check() const {
  transform.check();
  if (transform.fixed_lambda) throw ParameterError("scenario transform must leave lambda free");
  if (lambdas.empty()) throw ParameterError("scenario needs at least one true lambda");
  for (double l : lambdas)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ParameterError("true lambdas must be finite and >= 0");
  if (m < 2) throw ParameterError("scenario needs m >= 2");
  if (n_pattern.size() != 1 && n_pattern.size() != std::size_t(m))
    throw ParameterError("n pattern must have 1 or m entries");
  for (int n : n_pattern)
    if (n < 1) throw ParameterError("area sizes must be >= 1");
  if (beta.size() < 1) throw ParameterError("beta needs at least the intercept");
  if (!(sigma_v2 >= 0.0) || !(sigma_e2 > 0.0)) throw ParameterError("need sigma_v2 >= 0 and sigma_e2 > 0");
  if (R < 1) throw ParameterError("R must be positive");
  if (study != StudyKind::Pmse) {
    BootstrapConfig bc;
    bc.B = B;
    bc.alpha = alpha;
    bc.check();
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(x)) throw InputError("scenario key '" + key + "': bad number '" + v + "'");
  return x;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw InputError("scenario key '" + key + "': bad integer '" + v + "'");
  return x;
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw InputError("scenario key '" + key + "': bad seed '" + v + "'");
  return x;
}

std::vector<double> parse_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(parse_real(key, s));
  return out;
}

}  // namespace

ScenarioSpec parse_scenario(std::istream& in) {
  ScenarioSpec s;
  std::string family = "dp";
  std::optional<std::pair<double, double>> bounds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError("scenario line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "name") s.name = v;
    else if (key == "study") s.study = study_kind_from_string(v);
    else if (key == "family" || key == "transform") family = v;
    else if (key == "bounds") {
      const auto b = parse_reals(key, v);
      if (b.size() != 2) throw InputError("scenario key 'bounds' needs a,b");
      bounds = std::make_pair(b[0], b[1]);
    } else if (key == "lambdas" || key == "lambda") s.lambdas = parse_reals(key, v);
    else if (key == "m") s.m = int(parse_int(key, v));
    else if (key == "n") {
      s.n_pattern.clear();
      for (const auto& x : split_list(v)) s.n_pattern.push_back(int(parse_int(key, x)));
    } else if (key == "beta") {
      const auto b = parse_reals(key, v);
      s.beta = Eigen::Map<const Eigen::VectorXd>(b.data(), Eigen::Index(b.size()));
    } else if (key == "sigma_v2") s.sigma_v2 = parse_real(key, v);
    else if (key == "sigma_e2") s.sigma_e2 = parse_real(key, v);
    else if (key == "covariate_seed") s.covariate_seed = parse_seed(key, v);
    else if (key == "seed") s.seed = parse_seed(key, v);
    else if (key == "R") s.R = int(parse_int(key, v));
    else if (key == "B") s.B = int(parse_int(key, v));
    else if (key == "alpha") s.alpha = parse_real(key, v);
    else if (key == "estimator") s.fit.estimator = estimator_from_string(v);
    else if (key == "beta_formula") s.fit.beta_formula = beta_formula_from_string(v);
    else if (key == "lambda_max") s.fit.lambda_max = parse_real(key, v);
    else if (key == "degenerate_pivots") s.degenerate_pivots = degenerate_pivots_from_string(v);
    else if (key == "methods") {
      s.naive = s.bootstrap = false;
      for (const auto& mth : split_list(v)) {
        if (mth == "naive") s.naive = true;
        else if (mth == "bootstrap") s.bootstrap = true;
        else throw InputError("scenario key 'methods': unknown method '" + mth + "'");
      }
    } else if (key == "threads") s.threads = int(parse_int(key, v));
    else throw InputError("scenario line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  const Family f = family_from_string(family);
  if (f == Family::DualPower) s.transform = TransformSpec::dual_power(bounds ? bounds->first : 0.0);
  else if (f == Family::DualPowerLogistic)
    s.transform = bounds ? TransformSpec::dual_power_logistic(bounds->first, bounds->second)
                         : TransformSpec::dual_power_logistic();
  else throw ParameterError("scenario family must be dp or dpl");
  s.check();
  return s;
}

ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scenario file '" + path + "'");
  return parse_scenario(in);
}

UnitLevelDataset scenario_design(const ScenarioSpec& s) {
  Engine rng = derive_stream(s.covariate_seed, {});
  std::normal_distribution<double> normal;
  UnitLevelDataset d;
  d.p = s.beta.size();
  for (int i = 0; i < s.m; ++i) {
    Area a;
    a.id = std::to_string(i + 1);
    const int n = s.n_of(i);
    a.y = Eigen::VectorXd::Zero(n);
    a.X.resize(n, d.p);
    for (int j = 0; j < n; ++j) {
      a.X(j, 0) = 1.0;
      for (Eigen::Index k = 1; k < d.p; ++k) a.X(j, k) = normal(rng);
    }
    d.areas.push_back(std::move(a));
  }
  return d;
}

namespace {

using Clock = std::chrono::steady_clock;

ModelParams truth(const ScenarioSpec& s, double lambda) {
  ModelParams p;
  p.beta = s.beta;
  p.variance.sigma_v2 = s.sigma_v2;
  p.variance.sigma_e2 = s.sigma_e2;
  p.lambda = lambda;
  return p;
}

McEstimate mean_se(const std::vector<double>& x) {
  McEstimate e;
  if (x.empty()) return e;
  const double n = double(x.size());
  e.value = std::accumulate(x.begin(), x.end(), 0.0) / n;
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - e.value) * (v - e.value);
    e.se = std::sqrt(ss / (n - 1.0) / n);
  }
  return e;
}

// 100 (P1 - Pk) / Pk with a delta-method standard error for the ratio of means.
McEstimate improvement_ratio(const std::vector<double>& l1, const std::vector<double>& lk) {
  const McEstimate p1 = mean_se(l1), pk = mean_se(lk);
  McEstimate e;
  const double r = p1.value / pk.value;
  e.value = 100.0 * (r - 1.0);
  std::vector<double> lin(l1.size());
  for (std::size_t i = 0; i < l1.size(); ++i) lin[i] = l1[i] - r * lk[i];
  e.se = 100.0 * mean_se(lin).se / pk.value;
  return e;
}

McEstimate percent(const std::vector<double>& flags) {
  McEstimate e = mean_se(flags);
  e.value *= 100.0;
  e.se *= 100.0;
  return e;
}

std::uint64_t child_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  Engine e = derive_stream(seed, keys);
  return e();
}

}  // namespace

StudyReport run_pmse_study(const ScenarioSpec& s) {
  s.check();
  const auto t0 = Clock::now();
  StudyReport report;
  report.scenario = s.name;
  report.study = StudyKind::Pmse;
  report.family = to_string(s.transform.family);
  const UnitLevelDataset design = scenario_design(s);
  const TransformSpec specs[3] = {s.transform, s.transform.with_fixed_lambda(0.0), TransformSpec::identity()};

  struct RunOut {
    bool ok = false;
    double loss[3] = {0, 0, 0};
    bool zero_v[3] = {false, false, false};
    bool zero_e[3] = {false, false, false};
    std::string error;
  };

  for (std::size_t li = 0; li < s.lambdas.size(); ++li) {
    const double lambda = s.lambdas[li];
    const ModelParams theta = truth(s, lambda);
    std::vector<RunOut> runs(std::size_t(s.R));
    parallel_for(runs.size(), s.threads, [&](std::size_t r) {
      RunOut& out = runs[r];
      try {
        Engine rng = derive_stream(s.seed, {li, r});
        std::vector<double> xi;
        const UnitLevelDataset data = draw_dataset(design, s.transform, theta, rng, &xi);
        for (int k = 0; k < 3; ++k) {
          const FitResult f = fit(data, specs[k], s.fit);
          out.zero_v[k] = f.params.variance.truncated_v || f.params.variance.sigma_v2 == 0.0;
          out.zero_e[k] = f.params.variance.truncated_e || f.params.variance.sigma_e2 == 0.0;
          const auto preds = predict(f);
          double loss = 0.0;
          for (std::size_t i = 0; i < preds.size(); ++i) {
            const double target = inverse(xi[i], s.transform, lambda);
            loss += (preds[i].teblup - target) * (preds[i].teblup - target);
          }
          out.loss[k] = loss;
        }
        out.ok = true;
      } catch (const Error& e) {
        out.error = e.what();
      }
    });

    PmseRow row;
    row.lambda = lambda;
    std::vector<double> loss[3], zv[3], ze[3];
    for (std::size_t r = 0; r < runs.size(); ++r) {
      if (!runs[r].ok) {
        ++row.failed_runs;
        report.log.push_back("lambda=" + detail::format_double(lambda) + " run " + std::to_string(r) + ": " +
                             runs[r].error);
        continue;
      }
      for (int k = 0; k < 3; ++k) {
        loss[k].push_back(runs[r].loss[k]);
        zv[k].push_back(runs[r].zero_v[k] ? 1.0 : 0.0);
        ze[k].push_back(runs[r].zero_e[k] ? 1.0 : 0.0);
      }
    }
    row.runs = int(loss[0].size());
    if (row.runs == 0) throw ConvergenceError("every PMSE replicate failed at lambda=" + detail::format_double(lambda));
    for (int k = 0; k < 3; ++k) {
      row.pmse[k] = mean_se(loss[k]);
      row.zero_v[k] = percent(zv[k]);
      row.zero_e[k] = percent(ze[k]);
    }
    row.irp2 = improvement_ratio(loss[0], loss[1]);
    row.irp3 = improvement_ratio(loss[0], loss[2]);
    report.pmse.push_back(row);
  }
  report.runtime_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

StudyReport run_coverage_study(const ScenarioSpec& s) {
  s.check();
  const auto t0 = Clock::now();
  StudyReport report;
  report.scenario = s.name;
  report.study = StudyKind::Coverage;
  report.family = to_string(s.transform.family);
  const UnitLevelDataset design = scenario_design(s);
  const double m = double(s.m);

  struct RunOut {
    bool ok = false;
    double cp_nv = 0, el_nv = 0, cp_bt = 0, el_bt = 0, zero = 0;
    std::string error;
  };

  for (std::size_t li = 0; li < s.lambdas.size(); ++li) {
    const double lambda = s.lambdas[li];
    const ModelParams theta = truth(s, lambda);
    std::vector<RunOut> runs(std::size_t(s.R));
    parallel_for(runs.size(), s.threads, [&](std::size_t r) {
      RunOut& out = runs[r];
      try {
        Engine rng = derive_stream(s.seed, {li, r});
        std::vector<double> xi;
        const UnitLevelDataset data = draw_dataset(design, s.transform, theta, rng, &xi);
        const FitResult f = fit(data, s.transform, s.fit);
        std::vector<double> target(xi.size());
        for (std::size_t i = 0; i < xi.size(); ++i) target[i] = inverse(xi[i], s.transform, lambda);
        auto score = [&](const std::vector<PredictionInterval>& pis, double& cp, double& el) {
          for (std::size_t i = 0; i < pis.size(); ++i) {
            if (pis[i].lower <= target[i] && target[i] <= pis[i].upper) cp += 100.0 / m;
            el += pis[i].length() / m;
          }
        };
        if (s.naive) score(naive_intervals(f, s.alpha), out.cp_nv, out.el_nv);
        if (s.bootstrap) {
          BootstrapConfig bc;
          bc.B = s.B;
          bc.alpha = s.alpha;
          bc.seed = child_seed(s.seed, {li, r, 1});
          bc.threads = 1;
          bc.degenerate_pivots = s.degenerate_pivots;
          const auto pis = unconditional_intervals(f, data, bc);
          score(pis, out.cp_bt, out.el_bt);
          out.zero = 100.0 * double(pis.front().zero_variance_replicates) / double(s.B);
        }
        out.ok = true;
      } catch (const Error& e) {
        out.error = e.what();
      }
    });

    CoverageRow row;
    row.lambda = lambda;
    std::vector<double> cp_nv, el_nv, cp_bt, el_bt, zero;
    for (std::size_t r = 0; r < runs.size(); ++r) {
      if (!runs[r].ok) {
        ++row.failed_runs;
        report.log.push_back("lambda=" + detail::format_double(lambda) + " run " + std::to_string(r) + ": " +
                             runs[r].error);
        continue;
      }
      cp_nv.push_back(runs[r].cp_nv);
      el_nv.push_back(runs[r].el_nv);
      cp_bt.push_back(runs[r].cp_bt);
      el_bt.push_back(runs[r].el_bt);
      zero.push_back(runs[r].zero);
    }
    row.runs = int(cp_nv.size());
    if (row.runs == 0) throw ConvergenceError("every coverage replicate failed at lambda=" + detail::format_double(lambda));
    row.cp_naive = mean_se(cp_nv);
    row.el_naive = mean_se(el_nv);
    row.cp_boot = mean_se(cp_bt);
    row.el_boot = mean_se(el_bt);
    row.mean_zero_variance_replicates = mean_se(zero).value;
    report.coverage.push_back(row);
  }
  report.runtime_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

StudyReport run_conditional_coverage_study(const ScenarioSpec& s) {
  s.check();
  const auto t0 = Clock::now();
  StudyReport report;
  report.scenario = s.name;
  report.study = StudyKind::ConditionalCoverage;
  report.family = to_string(s.transform.family);
  const double lambda = s.lambdas.front();
  report.lambda = lambda;
  const ModelParams theta = truth(s, lambda);
  const UnitLevelDataset design = scenario_design(s);
  Engine frozen_rng = derive_stream(s.seed, {0xF407E4ULL});
  const UnitLevelDataset frozen = draw_dataset(design, s.transform, theta, frozen_rng);

  // True conditional law of xi_i given the frozen y_i.
  const auto summaries = area_summaries(frozen, s.transform, lambda);
  std::vector<double> mu(frozen.m()), sd(frozen.m());
  for (std::size_t i = 0; i < frozen.m(); ++i) {
    mu[i] = conditional_mean(summaries[i], theta);
    sd[i] = conditional_sd(summaries[i].n, theta.variance);
  }

  struct RunOut {
    bool ok = false;
    double hit = 0, length = 0;
    std::string error;
  };
  const std::size_t R = std::size_t(s.R);
  std::vector<RunOut> runs(frozen.m() * R);
  parallel_for(runs.size(), s.threads, [&](std::size_t task) {
    const std::size_t i = task / R, r = task % R;
    RunOut& out = runs[task];
    try {
      Engine rng = derive_stream(s.seed, {i, r});
      const UnitLevelDataset data = redraw_other_areas(frozen, s.transform, theta, i, rng);
      const FitResult f = fit(data, s.transform, s.fit);
      BootstrapConfig bc;
      bc.B = s.B;
      bc.alpha = s.alpha;
      bc.seed = child_seed(s.seed, {i, r, 1});
      bc.threads = 1;
      bc.degenerate_pivots = s.degenerate_pivots;
      const PredictionInterval pi = conditional_interval(f, data, data.areas[i].id, bc);
      std::normal_distribution<double> normal;
      const double target = inverse(mu[i] + sd[i] * normal(rng), s.transform, lambda);
      out.hit = (pi.lower <= target && target <= pi.upper) ? 100.0 : 0.0;
      out.length = pi.length();
      out.ok = true;
    } catch (const Error& e) {
      out.error = e.what();
    }
  });

  std::vector<double> el, ybar;
  for (std::size_t i = 0; i < frozen.m(); ++i) {
    ConditionalRow row;
    row.area = int(i) + 1;
    row.area_id = frozen.areas[i].id;
    row.ybar = frozen.areas[i].y.mean();
    std::vector<double> hits, lengths;
    for (std::size_t r = 0; r < R; ++r) {
      const RunOut& out = runs[i * R + r];
      if (!out.ok) {
        ++row.failed_runs;
        report.log.push_back("area " + row.area_id + " run " + std::to_string(r) + ": " + out.error);
        continue;
      }
      hits.push_back(out.hit);
      lengths.push_back(out.length);
    }
    row.runs = int(hits.size());
    row.cp = mean_se(hits);
    row.el = mean_se(lengths);
    el.push_back(row.el.value);
    ybar.push_back(row.ybar);
    report.conditional.push_back(row);
  }
  report.el_ybar_rank_correlation = spearman(el, ybar);
  report.runtime_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

StudyReport run_study(const ScenarioSpec& s) {
  switch (s.study) {
    case StudyKind::Pmse: return run_pmse_study(s);
    case StudyKind::Coverage: return run_coverage_study(s);
    case StudyKind::ConditionalCoverage: return run_conditional_coverage_study(s);
  }
  throw ParameterError("unknown study kind");
}

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ParameterError("spearman needs two equal-length samples");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = double(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::string StudyReport::to_csv() const {
  using detail::format_double;
  std::string out;
  auto est = [](std::vector<std::string>& f, const McEstimate& e) {
    f.push_back(format_double(e.value));
    f.push_back(format_double(e.se));
  };
  if (study == StudyKind::Pmse) {
    out += detail::csv_line({"lambda", "pmse_tnerm", "pmse_tnerm_se", "pmse_fixed0", "pmse_fixed0_se",
                             "pmse_identity", "pmse_identity_se", "irp2", "irp2_se", "irp3", "irp3_se",
                             "zero_v_tnerm", "zero_v_tnerm_se", "zero_v_fixed0", "zero_v_fixed0_se",
                             "zero_v_identity", "zero_v_identity_se", "zero_e_tnerm", "zero_e_tnerm_se",
                             "zero_e_fixed0", "zero_e_fixed0_se", "zero_e_identity", "zero_e_identity_se",
                             "runs", "failed_runs"});
    for (const auto& r : pmse) {
      std::vector<std::string> f{format_double(r.lambda)};
      for (const auto& e : r.pmse) est(f, e);
      est(f, r.irp2);
      est(f, r.irp3);
      for (const auto& e : r.zero_v) est(f, e);
      for (const auto& e : r.zero_e) est(f, e);
      f.push_back(std::to_string(r.runs));
      f.push_back(std::to_string(r.failed_runs));
      out += detail::csv_line(f);
    }
  } else if (study == StudyKind::Coverage) {
    out += detail::csv_line({"lambda", "cp_naive", "cp_naive_se", "el_naive", "el_naive_se", "cp_boot",
                             "cp_boot_se", "el_boot", "el_boot_se", "zero_variance_replicates_pct", "runs",
                             "failed_runs"});
    for (const auto& r : coverage) {
      std::vector<std::string> f{format_double(r.lambda)};
      est(f, r.cp_naive);
      est(f, r.el_naive);
      est(f, r.cp_boot);
      est(f, r.el_boot);
      f.push_back(format_double(r.mean_zero_variance_replicates));
      f.push_back(std::to_string(r.runs));
      f.push_back(std::to_string(r.failed_runs));
      out += detail::csv_line(f);
    }
  } else {
    out += detail::csv_line({"area", "area_id", "ybar", "cp", "cp_se", "el", "el_se", "runs", "failed_runs"});
    for (const auto& r : conditional) {
      std::vector<std::string> f{std::to_string(r.area), r.area_id, format_double(r.ybar)};
      est(f, r.cp);
      est(f, r.el);
      f.push_back(std::to_string(r.runs));
      f.push_back(std::to_string(r.failed_runs));
      out += detail::csv_line(f);
    }
  }
  return out;
}

std::string StudyReport::to_json() const {
  using nlohmann::ordered_json;
  auto est = [](const McEstimate& e) { return ordered_json{{"value", e.value}, {"se", e.se}}; };
  const char* methods[3] = {"tnerm", "fixed0", "identity"};
  ordered_json j;
  j["scenario"] = scenario;
  j["study"] = to_string(study);
  j["family"] = family;
  if (study == StudyKind::Pmse) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : pmse) {
      ordered_json row;
      row["lambda"] = r.lambda;
      for (int k = 0; k < 3; ++k) row["pmse"][methods[k]] = est(r.pmse[k]);
      row["irp2"] = est(r.irp2);
      row["irp3"] = est(r.irp3);
      for (int k = 0; k < 3; ++k) row["zero_v_pct"][methods[k]] = est(r.zero_v[k]);
      for (int k = 0; k < 3; ++k) row["zero_e_pct"][methods[k]] = est(r.zero_e[k]);
      row["runs"] = r.runs;
      row["failed_runs"] = r.failed_runs;
      rows.push_back(row);
    }
    j["rows"] = rows;
  } else if (study == StudyKind::Coverage) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : coverage) {
      rows.push_back({{"lambda", r.lambda},
                      {"cp_naive", est(r.cp_naive)},
                      {"el_naive", est(r.el_naive)},
                      {"cp_boot", est(r.cp_boot)},
                      {"el_boot", est(r.el_boot)},
                      {"zero_variance_replicates_pct", r.mean_zero_variance_replicates},
                      {"runs", r.runs},
                      {"failed_runs", r.failed_runs}});
    }
    j["rows"] = rows;
  } else {
    j["lambda"] = lambda;
    ordered_json rows = ordered_json::array();
    for (const auto& r : conditional) {
      rows.push_back({{"area", r.area},
                      {"area_id", r.area_id},
                      {"ybar", r.ybar},
                      {"cp", est(r.cp)},
                      {"el", est(r.el)},
                      {"runs", r.runs},
                      {"failed_runs", r.failed_runs}});
    }
    j["rows"] = rows;
    j["el_ybar_rank_correlation"] = el_ybar_rank_correlation;
  }
  j["runtime_seconds"] = runtime_seconds;
  j["log"] = log;
  return j.dump(2) + "\n";
}

}  // namespace tnerm
