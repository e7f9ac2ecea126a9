#include "tnerm/io.hpp"

#include "csv.hpp"
#include "tnerm/error.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cerrno>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unistd.h>

namespace tnerm {

using json = nlohmann::ordered_json;

void CsvSchema::check() const {
  if (area_column.empty()) throw ParameterError("schema: area column is empty");
  if (response_column.empty()) throw ParameterError("schema: response column is empty");
  if (!(response_divisor > 0.0) || !std::isfinite(response_divisor))
    throw ParameterError("schema: response divisor must be positive and finite");
  if (covariate_columns.empty() && !intercept)
    throw ParameterError("schema: no covariates and no intercept");
}

std::vector<std::vector<std::string>> parse_csv_records(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t i = 0;
  const std::size_t n = text.size();
  if (n >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;  // BOM
  auto end_record = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
    // skip blank lines
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (; i < n; ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < n && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw InputError("csv: unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_record();
  return rows;
}

namespace {

double parse_number(const std::string& s, std::size_t row, const std::string& column) {
  std::size_t b = s.find_first_not_of(" \t");
  std::size_t e = s.find_last_not_of(" \t");
  std::string t = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  double v = 0.0;
  const char* first = t.data();
  if (!t.empty() && t[0] == '+') ++first;
  auto res = std::from_chars(first, t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v))
    throw InputError("csv row " + std::to_string(row) + ", column '" + column + "': cannot parse '" + s +
                     "' as a finite number");
  return v;
}

}  // namespace

UnitLevelDataset parse_csv(const std::string& text, const CsvSchema& schema, const TransformSpec* domain) {
  schema.check();
  auto records = parse_csv_records(text);
  if (records.empty()) throw InputError("csv: no header row");
  const auto& header = records[0];
  auto column = [&](const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw InputError("csv: missing column '" + name + "'");
  };
  const std::size_t area_col = column(schema.area_column);
  const std::size_t y_col = column(schema.response_column);
  std::vector<std::size_t> x_cols;
  for (const auto& c : schema.covariate_columns) x_cols.push_back(column(c));
  if (records.size() < 2) throw InputError("csv: no data rows");

  const Eigen::Index p = static_cast<Eigen::Index>(x_cols.size()) + (schema.intercept ? 1 : 0);
  std::map<std::string, std::size_t> index;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> ys;
  std::vector<std::vector<std::vector<double>>> xs;

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::size_t line = r + 1;  // 1-based, header is line 1
    if (rec.size() != header.size())
      throw InputError("csv row " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(rec.size()));
    const std::string& id = rec[area_col];
    if (id.empty()) throw InputError("csv row " + std::to_string(line) + ": empty area id");
    double y = parse_number(rec[y_col], line, schema.response_column) / schema.response_divisor;
    if (domain && !domain->in_domain(y))
      throw InputError("csv row " + std::to_string(line) + ", column '" + schema.response_column + "': value " +
                       detail::format_double(y) + " outside domain " + domain->domain_string());
    std::vector<double> x;
    if (schema.intercept) x.push_back(1.0);
    for (std::size_t k = 0; k < x_cols.size(); ++k)
      x.push_back(parse_number(rec[x_cols[k]], line, schema.covariate_columns[k]));
    auto [it, inserted] = index.emplace(id, ids.size());
    if (inserted) {
      ids.push_back(id);
      ys.emplace_back();
      xs.emplace_back();
    }
    ys[it->second].push_back(y);
    xs[it->second].push_back(std::move(x));
  }

  UnitLevelDataset data;
  data.p = p;
  for (std::size_t a = 0; a < ids.size(); ++a) {
    Area area;
    area.id = ids[a];
    const auto ni = static_cast<Eigen::Index>(ys[a].size());
    area.y.resize(ni);
    area.X.resize(ni, p);
    for (Eigen::Index j = 0; j < ni; ++j) {
      area.y(j) = ys[a][j];
      for (Eigen::Index k = 0; k < p; ++k) area.X(j, k) = xs[a][j][k];
    }
    data.areas.push_back(std::move(area));
  }
  data.check_shapes();
  return data;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

UnitLevelDataset load_csv(const std::string& path, const CsvSchema& schema, const TransformSpec* domain) {
  return parse_csv(read_file(path), schema, domain);
}

std::string format_csv(const UnitLevelDataset& data, const CsvSchema& schema) {
  schema.check();
  const Eigen::Index skip = schema.intercept ? 1 : 0;
  if (data.p != static_cast<Eigen::Index>(schema.covariate_columns.size()) + skip)
    throw ParameterError("format_csv: schema covariates do not match the dataset");
  std::vector<std::string> header{schema.area_column, schema.response_column};
  header.insert(header.end(), schema.covariate_columns.begin(), schema.covariate_columns.end());
  std::string out = detail::csv_line(header);
  for (const auto& a : data.areas) {
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      std::vector<std::string> f{a.id, detail::format_double(a.y(j) * schema.response_divisor)};
      for (Eigen::Index k = skip; k < data.p; ++k) f.push_back(detail::format_double(a.X(j, k)));
      out += detail::csv_line(f);
    }
  }
  return out;
}

void write_csv(const UnitLevelDataset& data, const CsvSchema& schema, const std::string& path) {
  write_file_atomic(path, format_csv(data, schema));
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw InputError("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw InputError("cannot rename output into '" + path + "'");
  }
}

ExportFormat export_format_from_string(const std::string& s) {
  if (s == "json") return ExportFormat::Json;
  if (s == "csv") return ExportFormat::Csv;
  throw ParameterError("unknown export format '" + s + "' (expected json or csv)");
}

namespace {

// JSON has no inf/nan; those travel as strings.
json num(double v) {
  if (std::isfinite(v)) return v;
  return detail::format_double(v);
}

double get_num(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw InputError("json: expected a number, found " + j.dump());
}

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

Eigen::VectorXd get_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_num(j[i]);
  return v;
}

json transform_json(const TransformSpec& t) {
  json j;
  j["family"] = to_string(t.family);
  j["a"] = num(t.shift_a);
  j["b"] = num(t.scale_b);
  j["fixed_lambda"] = t.fixed_lambda ? num(*t.fixed_lambda) : json(nullptr);
  return j;
}

TransformSpec transform_from(const json& j) {
  TransformSpec t;
  t.family = family_from_string(j.at("family").get<std::string>());
  t.shift_a = get_num(j.at("a"));
  t.scale_b = get_num(j.at("b"));
  if (j.contains("fixed_lambda") && !j.at("fixed_lambda").is_null()) t.fixed_lambda = get_num(j.at("fixed_lambda"));
  t.check();
  return t;
}

json fit_json(const FitResult& f) {
  json j;
  j["transform"] = transform_json(f.transform);
  j["estimator"] = to_string(f.estimator_kind);
  j["beta_formula"] = to_string(f.beta_formula);
  j["lambda"] = num(f.params.lambda);
  j["beta"] = vec(f.params.beta);
  j["sigma_v2"] = num(f.params.variance.sigma_v2);
  j["sigma_e2"] = num(f.params.variance.sigma_e2);
  j["truncated_v"] = f.params.variance.truncated_v;
  j["truncated_e"] = f.params.variance.truncated_e;
  j["lambda_score_residual"] = num(f.lambda_score_residual);
  j["iterations"] = f.iterations;
  j["converged"] = f.converged;
  j["lambda_on_boundary"] = f.lambda_on_boundary;
  j["log_likelihood"] = num(f.log_likelihood);
  json c;
  c["lambda_min"] = num(f.config.lambda_min);
  c["lambda_max"] = num(f.config.lambda_max);
  c["scan_points"] = f.config.scan_points;
  c["lambda_tolerance"] = num(f.config.lambda_tolerance);
  c["variance_tolerance"] = num(f.config.variance_tolerance);
  c["max_iter"] = f.config.max_iter;
  j["config"] = c;
  json s = json::array();
  for (const auto& a : f.summaries) {
    json e;
    e["area_id"] = a.area_id;
    e["n"] = a.n;
    e["xbar"] = vec(a.xbar);
    e["z"] = num(a.z);
    e["lambda"] = num(a.lambda);
    s.push_back(e);
  }
  j["summaries"] = s;
  return j;
}

FitResult fit_from(const json& j) {
  FitResult f;
  f.transform = transform_from(j.at("transform"));
  f.estimator_kind = estimator_from_string(j.at("estimator").get<std::string>());
  f.beta_formula = beta_formula_from_string(j.at("beta_formula").get<std::string>());
  f.params.lambda = get_num(j.at("lambda"));
  f.params.beta = get_vec(j.at("beta"));
  f.params.variance.sigma_v2 = get_num(j.at("sigma_v2"));
  f.params.variance.sigma_e2 = get_num(j.at("sigma_e2"));
  f.params.variance.truncated_v = j.at("truncated_v").get<bool>();
  f.params.variance.truncated_e = j.at("truncated_e").get<bool>();
  f.lambda_score_residual = get_num(j.at("lambda_score_residual"));
  f.iterations = j.at("iterations").get<int>();
  f.converged = j.at("converged").get<bool>();
  f.lambda_on_boundary = j.at("lambda_on_boundary").get<bool>();
  f.log_likelihood = get_num(j.at("log_likelihood"));
  f.config.estimator = f.estimator_kind;
  f.config.beta_formula = f.beta_formula;
  const auto& c = j.at("config");
  f.config.lambda_min = get_num(c.at("lambda_min"));
  f.config.lambda_max = get_num(c.at("lambda_max"));
  f.config.scan_points = c.at("scan_points").get<int>();
  f.config.lambda_tolerance = get_num(c.at("lambda_tolerance"));
  f.config.variance_tolerance = get_num(c.at("variance_tolerance"));
  f.config.max_iter = c.at("max_iter").get<int>();
  for (const auto& e : j.at("summaries")) {
    AreaSummary a;
    a.area_id = e.at("area_id").get<std::string>();
    a.n = e.at("n").get<int>();
    a.xbar = get_vec(e.at("xbar"));
    a.z = get_num(e.at("z"));
    a.lambda = get_num(e.at("lambda"));
    if (a.xbar.size() != f.params.beta.size())
      throw InputError("fit json: area '" + a.area_id + "' covariate mean has the wrong length");
    f.summaries.push_back(std::move(a));
  }
  return f;
}

json interval_json(const PredictionInterval& iv) {
  json j;
  j["kind"] = to_string(iv.kind);
  j["level"] = num(iv.level);
  j["lower"] = num(iv.lower);
  j["upper"] = num(iv.upper);
  j["length"] = num(iv.length());
  j["q1"] = num(iv.q1);
  j["q2"] = num(iv.q2);
  j["B_effective"] = iv.B_effective;
  j["degenerate"] = iv.degenerate;
  j["refit_failures"] = iv.refit_failures;
  j["zero_variance_replicates"] = iv.zero_variance_replicates;
  return j;
}

PredictionInterval interval_from(const json& j, const std::string& id, double teblup) {
  PredictionInterval iv;
  iv.area_id = id;
  iv.teblup = teblup;
  iv.kind = interval_kind_from_string(j.at("kind").get<std::string>());
  iv.level = get_num(j.at("level"));
  iv.lower = get_num(j.at("lower"));
  iv.upper = get_num(j.at("upper"));
  iv.q1 = get_num(j.at("q1"));
  iv.q2 = get_num(j.at("q2"));
  iv.B_effective = j.at("B_effective").get<int>();
  iv.degenerate = j.at("degenerate").get<bool>();
  iv.refit_failures = j.at("refit_failures").get<int>();
  iv.zero_variance_replicates = j.at("zero_variance_replicates").get<int>();
  return iv;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("json: ") + e.what());
  }
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw InputError(std::string("json: ") + e.what());
  }
}

}  // namespace

std::string fit_to_json(const FitResult& fit) { return fit_json(fit).dump(2) + "\n"; }

FitResult fit_from_json(const std::string& text) {
  return guarded([&] { return fit_from(parse_json(text)); });
}

std::vector<AreaRow> area_rows(const FitResult& fit, double response_divisor) {
  std::vector<AreaRow> rows;
  for (const auto& p : predict(fit)) {
    AreaRow r;
    r.area_id = p.area_id;
    r.n = p.n;
    r.sample_mean = std::numeric_limits<double>::quiet_NaN();
    r.teblup = p.teblup * response_divisor;
    r.xi_hat_eb = p.xi_hat_eb;
    r.sigma_hat = p.sigma_hat_i;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<AreaRow> area_rows(const FitResult& fit, const UnitLevelDataset& data, double response_divisor) {
  auto rows = area_rows(fit, response_divisor);
  for (auto& r : rows) r.sample_mean = data.areas[data.find_area(r.area_id)].y.mean() * response_divisor;
  return rows;
}

std::string envelope_to_json(const ResultEnvelope& env) {
  json j;
  j["version"] = env.provenance.version;
  j["fit"] = fit_json(env.fit);
  j["response_divisor"] = num(env.response_divisor);
  j["warnings"] = env.warnings;
  if (env.bootstrap) {
    const auto& b = *env.bootstrap;
    json bj;
    bj["B"] = b.B;
    bj["seed"] = b.seed;
    bj["alpha"] = num(b.alpha);
    bj["quantile_rule"] = to_string(b.quantile_rule);
    bj["max_refit_failure_rate"] = num(b.max_refit_failure_rate);
    bj["degenerate_pivots"] = to_string(b.degenerate_pivots);
    j["bootstrap"] = bj;
  } else {
    j["bootstrap"] = nullptr;
  }
  json areas = json::array();
  for (const auto& r : env.areas) {
    json a;
    a["area_id"] = r.area_id;
    a["n"] = r.n;
    a["sample_mean"] = num(r.sample_mean);
    a["teblup"] = num(r.teblup);
    a["xi_hat_eb"] = num(r.xi_hat_eb);
    a["sigma_hat"] = num(r.sigma_hat);
    json ivs = json::array();
    for (const auto& iv : r.intervals) ivs.push_back(interval_json(iv));
    a["intervals"] = ivs;
    areas.push_back(a);
  }
  j["areas"] = areas;
  json p;
  p["input_sha256"] = env.provenance.input_sha256;
  p["seed"] = env.provenance.seed;
  p["version"] = env.provenance.version;
  p["command"] = env.provenance.command;
  j["provenance"] = p;
  return j.dump(2) + "\n";
}

ResultEnvelope envelope_from_json(const std::string& text) {
  return guarded([&] {
    json j = parse_json(text);
    ResultEnvelope env;
    env.fit = fit_from(j.at("fit"));
    env.response_divisor = get_num(j.at("response_divisor"));
    env.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (!j.at("bootstrap").is_null()) {
      const auto& bj = j.at("bootstrap");
      BootstrapConfig b;
      b.B = bj.at("B").get<int>();
      b.seed = bj.at("seed").get<std::uint64_t>();
      b.alpha = get_num(bj.at("alpha"));
      b.quantile_rule = quantile_rule_from_string(bj.at("quantile_rule").get<std::string>());
      b.max_refit_failure_rate = get_num(bj.at("max_refit_failure_rate"));
      b.degenerate_pivots = degenerate_pivots_from_string(bj.at("degenerate_pivots").get<std::string>());
      env.bootstrap = b;
    }
    for (const auto& a : j.at("areas")) {
      AreaRow r;
      r.area_id = a.at("area_id").get<std::string>();
      r.n = a.at("n").get<int>();
      r.sample_mean = get_num(a.at("sample_mean"));
      r.teblup = get_num(a.at("teblup"));
      r.xi_hat_eb = get_num(a.at("xi_hat_eb"));
      r.sigma_hat = get_num(a.at("sigma_hat"));
      for (const auto& iv : a.at("intervals")) r.intervals.push_back(interval_from(iv, r.area_id, r.teblup));
      env.areas.push_back(std::move(r));
    }
    const auto& p = j.at("provenance");
    env.provenance.input_sha256 = p.at("input_sha256").get<std::string>();
    env.provenance.seed = p.at("seed").get<std::uint64_t>();
    env.provenance.version = p.at("version").get<std::string>();
    env.provenance.command = p.at("command").get<std::string>();
    return env;
  });
}

std::string envelope_to_csv(const ResultEnvelope& env) {
  std::vector<IntervalKind> kinds;
  for (const auto& r : env.areas)
    for (const auto& iv : r.intervals)
      if (std::find(kinds.begin(), kinds.end(), iv.kind) == kinds.end()) kinds.push_back(iv.kind);
  std::vector<std::string> header{"area", "n", "sample_mean", "teblup"};
  for (auto k : kinds) {
    const auto s = to_string(k);
    header.push_back(s + "_lower");
    header.push_back(s + "_upper");
    header.push_back(s + "_length");
  }
  std::string out = detail::csv_line(header);
  for (const auto& r : env.areas) {
    std::vector<std::string> f{r.area_id, std::to_string(r.n), detail::format_double(r.sample_mean),
                               detail::format_double(r.teblup)};
    for (auto k : kinds) {
      auto it = std::find_if(r.intervals.begin(), r.intervals.end(), [&](const auto& iv) { return iv.kind == k; });
      if (it == r.intervals.end()) {
        f.insert(f.end(), {"", "", ""});
      } else {
        f.push_back(detail::format_double(it->lower));
        f.push_back(detail::format_double(it->upper));
        f.push_back(detail::format_double(it->length()));
      }
    }
    out += detail::csv_line(f);
  }
  return out;
}

std::string export_envelope(const ResultEnvelope& env, ExportFormat format) {
  return format == ExportFormat::Json ? envelope_to_json(env) : envelope_to_csv(env);
}

}  // namespace tnerm
