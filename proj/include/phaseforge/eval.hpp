#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "phaseforge/data.hpp"
#include "phaseforge/metrics.hpp"
#include "phaseforge/network.hpp"
#include "phaseforge/solvers.hpp"

namespace phaseforge::eval {

struct Row {
  std::string id;
  metrics::FieldScores scores;
};

struct EvalReport {
  std::string method;  // "network" or a solver name
  std::string model_hash;
  std::string dataset_hash;
  std::vector<Row> rows;
  metrics::FieldScores aggregate;

  /// Arithmetic mean of every column over the rows.
  static metrics::FieldScores mean(const std::vector<Row>& rows);
};

/// Infinite PSNR is stored as the string "inf". Loading recomputes the aggregate and
/// rejects a report whose stored aggregate disagrees.
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

std::string report_csv(const EvalReport& r);
void save_report(const std::filesystem::path& dir, const EvalReport& r);
EvalReport load_report(const std::filesystem::path& json_path);

/// Digest of the model config and every parameter's bytes.
std::string model_hash(const net::ModelConfig& cfg, const net::ModelState& state);
/// Digest of the dataset's manifest.json.
std::string dataset_hash(const data::Dataset& ds);

/// Scores the network on a split; outputs are not ambiguity-aligned. Rows ordered by id.
EvalReport evaluate_model(const net::ModelConfig& cfg, const net::ModelState& state, const data::Dataset& ds,
                          data::Split split = data::Split::Test, int threads = 1, std::size_t limit = 0);

/// Runs a classical solver per sample, aligns it to the ground truth, then scores it.
EvalReport evaluate_solver(const solvers::SolverConfig& cfg, const data::Dataset& ds,
                           data::Split split = data::Split::Test, int threads = 1, std::size_t limit = 0);

struct InspectImage {
  std::size_t scale = 0;
  std::size_t channel = 0;
  std::size_t height = 0, width = 0;
  std::filesystem::path image;
};

/// For each expanding-path HUB, writes the gated FFB stack channel with the largest
/// attention weight as an 8-bit P5 image (min-max scaled) plus a sidecar JSON holding all
/// the attention weights.
std::vector<InspectImage> inspect(const net::ModelConfig& cfg, const net::ModelState& state,
                                  const optics::IntensityMeasurement& meas, const std::filesystem::path& out_dir);

}  // namespace phaseforge::eval
