#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dem/config.hpp"
#include "dem/graph.hpp"
#include "dem/reference.hpp"
#include "dem/training.hpp"

namespace dem::experiment {

/// Everything one training run produces, before any file is written.
struct RunResult {
  config::ExperimentConfig cfg;
  training::TrainReport report;
  MatX u;  // trained nodal displacements; empty when the run failed outright
  std::optional<reference::OracleSolution> oracle;
  std::optional<reference::RdReport> rd;
  bool localized = false;
  Real localization_metric = 0.0;
  Real final_loss = std::numeric_limits<Real>::quiet_NaN();
  std::string run_error;     // the run threw before producing a field
  std::string oracle_error;  // the oracle failed; rd stays empty

  Real mean_rd() const {
    return rd ? rd->mean : std::numeric_limits<Real>::quiet_NaN();
  }
};

/// Trains one model per the config. A prebuilt oracle or graph for the same
/// geometry may be shared across runs; null means build (or skip) locally.
/// Exceptions propagate; the cmd_* drivers record them per row instead.
RunResult run_single(const config::ExperimentConfig& cfg,
                     const reference::OracleSolution* shared_oracle = nullptr,
                     const graph::Graph* shared_graph = nullptr);

/// report.json, metrics.csv, field.vtk (and oracle.vtk when present).
void write_run_artifacts(const std::string& dir, const RunResult& result);

/// Compact dump of the "summary" object inside report.json; the line the
/// drivers echo to stdout, so re-reading the file reproduces it.
std::string summary_json(const RunResult& result);

/// RFC-4180: fields holding a comma, quote, CR, or LF are quoted with inner
/// quotes doubled; rows end in CRLF.
std::string csv_escape(const std::string& field);
std::string csv_row(const std::vector<std::string>& fields);

/// DEM_SOLVE_THREADS clamped to [1, n_jobs]; 1 when unset.
int worker_count(int n_jobs);

int cmd_run(const config::ExperimentConfig& cfg);
int cmd_sweep(const config::ExperimentConfig& cfg,
              const std::vector<Real>& loads);
int cmd_demo1d(Real du_max, int steps, const std::string& out_dir);
int cmd_refine(const config::ExperimentConfig& cfg,
               const std::vector<Vec3i>& dims_list);

}  // namespace dem::experiment
