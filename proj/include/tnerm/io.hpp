#pragma once

#include "tnerm/bootstrap.hpp"
#include "tnerm/estimation.hpp"
#include "tnerm/prediction.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tnerm {

inline constexpr const char* kVersion = "0.1.0";

struct CsvSchema {
  std::string area_column;
  std::string response_column;
  std::vector<std::string> covariate_columns;
  bool intercept = true;         // prepend a column of ones
  double response_divisor = 1.0; // model response = raw / divisor (e.g. 250 for hectares per segment)

  void check() const;
};

/// Groups rows by area in order of first appearance. When `domain` is given,
/// every rescaled response must lie inside it (the error names the row).
UnitLevelDataset load_csv(const std::string& path, const CsvSchema& schema,
                          const TransformSpec* domain = nullptr);
UnitLevelDataset parse_csv(const std::string& text, const CsvSchema& schema,
                           const TransformSpec* domain = nullptr);

/// Writes area, response (raw units) and covariate columns; the intercept
/// column is omitted when schema.intercept is set.
std::string format_csv(const UnitLevelDataset& data, const CsvSchema& schema);
void write_csv(const UnitLevelDataset& data, const CsvSchema& schema, const std::string& path);

/// RFC 4180 records (quoted fields, embedded commas, doubled quotes, CRLF or LF).
std::vector<std::vector<std::string>> parse_csv_records(const std::string& text);

std::string sha256_hex(const std::string& bytes);
std::string read_file(const std::string& path);
/// Writes via a temporary file and rename, so a failed run never leaves a partial file.
void write_file_atomic(const std::string& path, const std::string& bytes);

struct Provenance {
  std::string input_sha256;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::string command;
};

struct AreaRow {
  std::string area_id;
  int n = 0;
  double sample_mean = 0.0;  // raw units
  double teblup = 0.0;       // raw units
  double xi_hat_eb = 0.0;
  double sigma_hat = 0.0;
  std::vector<PredictionInterval> intervals;  // bounds in raw units
};

struct ResultEnvelope {
  FitResult fit;
  std::vector<std::string> warnings;
  double response_divisor = 1.0;
  std::vector<AreaRow> areas;
  std::optional<BootstrapConfig> bootstrap;
  Provenance provenance;
};

/// Per-area rows (sample means, TEBLUPs) for a fit of `data`; no intervals.
std::vector<AreaRow> area_rows(const FitResult& fit, const UnitLevelDataset& data, double response_divisor);
/// Same, from the fit alone (sample means unavailable: NaN).
std::vector<AreaRow> area_rows(const FitResult& fit, double response_divisor);

enum class ExportFormat { Json, Csv };
ExportFormat export_format_from_string(const std::string& s);

std::string fit_to_json(const FitResult& fit);
FitResult fit_from_json(const std::string& text);

std::string envelope_to_json(const ResultEnvelope& env);
ResultEnvelope envelope_from_json(const std::string& text);
/// Per-area table: area, n, sample_mean, teblup, then lower/upper/length per interval kind.
std::string envelope_to_csv(const ResultEnvelope& env);
std::string export_envelope(const ResultEnvelope& env, ExportFormat format);

}  // namespace tnerm
