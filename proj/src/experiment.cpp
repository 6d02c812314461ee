#include "dem/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

#include <json.hpp>

#include "dem/models.hpp"
#include "dem/vtk.hpp"

namespace dem::experiment {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt17(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_g(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string dims_label(const Vec3i& dims) {
  return std::to_string(dims.x()) + "x" + std::to_string(dims.y()) + "x" +
         std::to_string(dims.z());
}

const char* material_name(const materials::MaterialModel& mat) {
  return std::holds_alternative<materials::LinearElastic>(mat)
             ? "linear_elastic"
             : "neo_hookean";
}

/// NaN and inf dump as JSON null, which is the intended encoding for
/// "no value" fields like mean_rd without an oracle.
json build_report(const RunResult& r) {
  json summary = {
      {"backbone", config::to_string(r.cfg.network.kind)},
      {"mode", config::to_string(r.cfg.mode)},
      {"material", material_name(r.cfg.material)},
      {"final_loss", r.final_loss},
      {"diverged", r.report.diverged},
      {"localized", r.localized},
      {"mean_rd", r.mean_rd()},
      {"train_time_s", r.report.wall_time},
      {"stop_reason", training::to_string(r.report.stop_reason)},
      {"updates", r.report.updates},
  };
  if (!r.run_error.empty()) summary["error"] = r.run_error;

  json tractions = json::array();
  for (const auto& t : r.cfg.tractions)
    tractions.push_back({{"face", t.tag},
                         {"traction", {t.traction.x(), t.traction.y(),
                                       t.traction.z()}}});
  json doc = {
      {"summary", summary},
      {"loss_history", r.report.loss_history},
      {"epochs", r.report.epochs},
      {"localization_metric", r.localization_metric},
      {"config",
       {{"dims", {r.cfg.dims.x(), r.cfg.dims.y(), r.cfg.dims.z()}},
        {"lengths",
         {r.cfg.lengths.x(), r.cfg.lengths.y(), r.cfg.lengths.z()}},
        {"seed", r.cfg.network.seed},
        {"cheb_order", r.cfg.network.cheb_order},
        {"tractions", tractions}}},
  };
  if (r.rd) {
    doc["rd"] = {
        {"mean", r.rd->mean},
        {"component_mean",
         {r.rd->component_mean.x(), r.rd->component_mean.y(),
          r.rd->component_mean.z()}},
        {"absolute_mode",
         {r.rd->absolute_mode[0], r.rd->absolute_mode[1],
          r.rd->absolute_mode[2]}},
    };
  }
  if (r.oracle) {
    doc["oracle"] = {{"energy", r.oracle->energy},
                     {"iterations", r.oracle->iterations},
                     {"residual_norm", r.oracle->residual_norm}};
  }
  if (!r.oracle_error.empty()) doc["oracle_error"] = r.oracle_error;
  return doc;
}

Real last_finite_loss(const std::vector<Real>& history) {
  for (auto it = history.rbegin(); it != history.rend(); ++it)
    if (std::isfinite(*it)) return *it;
  return std::numeric_limits<Real>::quiet_NaN();
}

/// run_single that converts exceptions into a recorded per-row failure.
RunResult guarded_run(const config::ExperimentConfig& cfg,
                      const reference::OracleSolution* oracle,
                      const graph::Graph* graph) {
  try {
    return run_single(cfg, oracle, graph);
  } catch (const std::exception& e) {
    RunResult r;
    r.cfg = cfg;
    r.run_error = e.what();
    r.report.diverged = true;
    return r;
  }
}

struct Job {
  config::ExperimentConfig cfg;
  const reference::OracleSolution* oracle = nullptr;
  const graph::Graph* graph = nullptr;
  std::string dir;
};

/// Runs jobs on worker_count threads; results land in job order, so the
/// aggregate is identical for any worker count.
std::vector<RunResult> run_jobs(const std::vector<Job>& jobs) {
  std::vector<RunResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      results[i] = guarded_run(jobs[i].cfg, jobs[i].oracle, jobs[i].graph);
      write_run_artifacts(jobs[i].dir, results[i]);
    }
  };
  const int workers = worker_count(static_cast<int>(jobs.size()));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return results;
}

bool needs_graph(const config::ExperimentConfig& cfg) {
  return cfg.network.kind == models::Backbone::Gcn &&
         cfg.network.cheb_order > 1;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Config, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorKind::Config, "write failed for " + path);
}

}  // namespace

RunResult run_single(const config::ExperimentConfig& cfg,
                     const reference::OracleSolution* shared_oracle,
                     const graph::Graph* shared_graph) {
  RunResult r;
  r.cfg = cfg;

  grid::NodeGrid g = grid::build_grid(cfg.dims, cfg.lengths);
  grid::HexMesh mesh = grid::build_hex_mesh(g);

  graph::Graph local_graph;
  const graph::Graph* graph_ptr = nullptr;
  if (needs_graph(cfg)) {
    if (shared_graph) {
      graph_ptr = shared_graph;
    } else {
      local_graph = graph::build_graph(g);
      graph_ptr = &local_graph;
    }
  }

  assembly::LossConfig lc;
  lc.network = cfg.network;
  lc.material = cfg.material;
  lc.mode = cfg.mode;
  lc.volume_rule = cfg.volume_rule;
  lc.ad_scheme = cfg.ad_scheme;
  lc.tractions = cfg.tractions;
  assembly::TapedLoss tl = assembly::build_loss(mesh, graph_ptr, lc);

  VecX theta0 = models::init_params(cfg.network);
  auto [theta, report] = training::lbfgs_minimize(tl.program, theta0, cfg.train);
  r.report = std::move(report);
  r.final_loss = last_finite_loss(r.report.loss_history);

  // The plain forward pass never touches the energy terms, so the field is
  // recoverable even when the last loss evaluation threw.
  MatX u_raw = models::forward(cfg.network, theta, graph_ptr, g.coords);
  r.u = models::apply_dirichlet(u_raw, g.coords, g.lengths.x());

  auto [flag, metric] =
      training::detect_localization(r.u, mesh, cfg.localization_threshold);
  r.localized = flag;
  r.localization_metric = metric;

  if (shared_oracle) {
    r.oracle = *shared_oracle;
  } else if (cfg.oracle) {
    if (cfg.tractions.size() != 1)
      fail(ErrorKind::Config, "the oracle supports a single traction");
    try {
      r.oracle = reference::direct_minimize(mesh, cfg.material,
                                            cfg.tractions[0], cfg.volume_rule);
    } catch (const Error& e) {
      r.oracle_error = e.what();
    }
  }
  if (r.oracle) r.rd = reference::relative_difference(r.u, r.oracle->u_ref);
  return r;
}

void write_run_artifacts(const std::string& dir, const RunResult& r) {
  fs::create_directories(dir);

  write_text((fs::path(dir) / "report.json").string(),
             build_report(r).dump(2) + "\n");

  std::string metrics = csv_row({"update", "loss"});
  for (std::size_t i = 0; i < r.report.loss_history.size(); ++i)
    metrics += csv_row({std::to_string(i), fmt17(r.report.loss_history[i])});
  write_text((fs::path(dir) / "metrics.csv").string(), metrics);

  if (r.u.size() > 0) {
    grid::HexMesh mesh =
        grid::build_hex_mesh(grid::build_grid(r.cfg.dims, r.cfg.lengths));
    vtk::write_fields((fs::path(dir) / "field.vtk").string(), mesh, r.u);
    if (r.oracle)
      vtk::write_fields((fs::path(dir) / "oracle.vtk").string(), mesh,
                        r.oracle->u_ref);
  }
}

std::string summary_json(const RunResult& r) {
  return build_report(r)["summary"].dump();
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char c : field) {
    quoted += c;
    if (c == '"') quoted += '"';
  }
  quoted += '"';
  return quoted;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string row;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) row += ',';
    row += csv_escape(fields[i]);
  }
  row += "\r\n";
  return row;
}

int worker_count(int n_jobs) {
  const char* env = std::getenv("DEM_SOLVE_THREADS");
  int workers = 1;
  if (env && *env) {
    try {
      workers = std::stoi(env);
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "DEM_SOLVE_THREADS must be an integer");
    }
  }
  return std::max(1, std::min(workers, std::max(1, n_jobs)));
}

int cmd_run(const config::ExperimentConfig& cfg) {
  RunResult r = guarded_run(cfg, nullptr, nullptr);
  write_run_artifacts(cfg.output_dir, r);
  std::cout << summary_json(r) << "\n";
  if (!r.run_error.empty()) {
    std::cerr << "run failed: " << r.run_error << "\n";
    return 1;
  }
  return 0;  // divergence is a measurement, not a failure
}

int cmd_sweep(const config::ExperimentConfig& cfg,
              const std::vector<Real>& loads) {
  if (loads.empty()) {
    std::cerr << "sweep needs a nonempty load list\n";
    return 2;
  }
  fs::create_directories(cfg.output_dir);

  const std::string face = cfg.tractions.at(0).tag;
  grid::NodeGrid g = grid::build_grid(cfg.dims, cfg.lengths);

  // The oracle and graph depend only on geometry and load, so each is solved
  // once and shared by the four method rows.
  graph::Graph graph;
  bool have_graph = false;
  std::vector<std::optional<reference::OracleSolution>> oracles(loads.size());
  std::vector<std::string> oracle_errors(loads.size());
  if (cfg.oracle) {
    grid::HexMesh mesh = grid::build_hex_mesh(g);
    for (std::size_t li = 0; li < loads.size(); ++li) {
      assembly::TractionSpec t{face, loads[li] * cfg.load_pattern};
      try {
        oracles[li] = reference::direct_minimize(mesh, cfg.material, t,
                                                 cfg.volume_rule);
      } catch (const Error& e) {
        oracle_errors[li] = e.what();
      }
    }
  }

  std::vector<Job> jobs;
  using assembly::GradientMode;
  using models::Backbone;
  for (std::size_t li = 0; li < loads.size(); ++li) {
    for (GradientMode mode : {GradientMode::Ad, GradientMode::Sf}) {
      for (Backbone backbone : {Backbone::Mlp, Backbone::Gcn}) {
        Job job;
        job.cfg = cfg;
        job.cfg.mode = mode;
        job.cfg.network.kind = backbone;
        job.cfg.tractions = {{face, loads[li] * cfg.load_pattern}};
        job.cfg.oracle = false;
        job.cfg.train.verbose = false;
        if (oracles[li]) job.oracle = &*oracles[li];
        if (needs_graph(job.cfg)) {
          if (!have_graph) {
            graph = graph::build_graph(g);
            have_graph = true;
          }
          job.graph = &graph;
        }
        job.dir = (fs::path(cfg.output_dir) /
                   ("run_" + fmt_g(loads[li]) + "_" +
                    config::to_string(mode) + "_" +
                    config::to_string(backbone)))
                      .string();
        jobs.push_back(std::move(job));
      }
    }
  }

  std::vector<RunResult> results = run_jobs(jobs);

  for (std::size_t li = 0; li < loads.size(); ++li)
    if (!oracle_errors[li].empty())
      std::cerr << "oracle failed at load " << fmt_g(loads[li]) << ": "
                << oracle_errors[li] << "\n";

  std::string table = csv_row({"method", "mode", "load", "mean_RD",
                               "final_loss", "train_time_s", "diverged"});
  for (std::size_t i = 0; i < results.size(); ++i) {
    const RunResult& r = results[i];
    const Real load = loads[i / 4];
    table += csv_row({config::to_string(r.cfg.network.kind),
                      config::to_string(r.cfg.mode), fmt_g(load),
                      fmt17(r.mean_rd()), fmt17(r.final_loss),
                      fmt17(r.report.wall_time),
                      r.report.diverged ? "true" : "false"});
    std::cout << summary_json(r) << "\n";
  }
  write_text((fs::path(cfg.output_dir) / "table.csv").string(), table);
  return 0;
}

int cmd_demo1d(Real du_max, int steps, const std::string& out_dir) {
  if (!(du_max > 0) || steps < 1) {
    std::cerr << "demo1d needs du_max > 0 and steps >= 1\n";
    return 2;
  }
  fs::create_directories(out_dir);
  std::string csv = csv_row({"du", "psi_ad", "psi_sf"});
  for (int i = 0; i <= steps; ++i) {
    const Real du = (static_cast<Real>(i) * du_max) / steps;
    csv += csv_row(
        {fmt17(du),
         fmt17(assembly::demo_1d(du, assembly::Demo1dScheme::AdTrapezoid)),
         fmt17(assembly::demo_1d(du, assembly::Demo1dScheme::SfGauss1))});
  }
  write_text((fs::path(out_dir) / "demo1d.csv").string(), csv);
  return 0;
}

int cmd_refine(const config::ExperimentConfig& cfg,
               const std::vector<Vec3i>& dims_list) {
  if (!std::holds_alternative<materials::NeoHookean>(cfg.material)) {
    std::cerr << "refine reruns the neo_hookean study; material.type must be "
                 "neo_hookean\n";
    return 2;
  }
  if (dims_list.empty()) {
    std::cerr << "refine needs a nonempty dims list\n";
    return 2;
  }
  fs::create_directories(cfg.output_dir);

  const Real load = -15.0;
  const std::string face = cfg.tractions.at(0).tag;
  const assembly::TractionSpec traction{face, load * cfg.load_pattern};

  std::vector<Job> jobs;
  std::vector<std::unique_ptr<graph::Graph>> graphs;
  std::vector<std::unique_ptr<reference::OracleSolution>> oracles;
  std::vector<std::string> oracle_errors(dims_list.size());
  using assembly::GradientMode;
  using models::Backbone;
  for (std::size_t di = 0; di < dims_list.size(); ++di) {
    const Vec3i dims = dims_list[di];
    grid::NodeGrid g = grid::build_grid(dims, cfg.lengths);

    reference::OracleSolution* oracle = nullptr;
    if (cfg.oracle) {
      try {
        oracles.push_back(std::make_unique<reference::OracleSolution>(
            reference::direct_minimize(grid::build_hex_mesh(g), cfg.material,
                                       traction, cfg.volume_rule)));
        oracle = oracles.back().get();
      } catch (const Error& e) {
        oracle_errors[di] = e.what();
      }
    }

    graph::Graph* graph = nullptr;
    config::ExperimentConfig probe = cfg;
    probe.network.kind = Backbone::Gcn;
    if (needs_graph(probe)) {
      graphs.push_back(std::make_unique<graph::Graph>(graph::build_graph(g)));
      graph = graphs.back().get();
    }

    for (GradientMode mode : {GradientMode::Ad, GradientMode::Sf}) {
      for (Backbone backbone : {Backbone::Mlp, Backbone::Gcn}) {
        for (std::uint64_t seed : {0, 1, 2}) {
          Job job;
          job.cfg = cfg;
          job.cfg.dims = dims;
          job.cfg.mode = mode;
          job.cfg.network.kind = backbone;
          job.cfg.network.seed = seed;
          job.cfg.tractions = {traction};
          job.cfg.oracle = false;
          job.cfg.train.verbose = false;
          job.oracle = oracle;
          if (needs_graph(job.cfg)) job.graph = graph;
          job.dir = (fs::path(cfg.output_dir) /
                     ("refine_" + dims_label(dims) + "_" +
                      config::to_string(mode) + "_" +
                      config::to_string(backbone) + "_s" +
                      std::to_string(seed)))
                        .string();
          jobs.push_back(std::move(job));
        }
      }
    }
  }

  std::vector<RunResult> results = run_jobs(jobs);

  std::string table =
      csv_row({"method", "mode", "dims", "seed", "mean_RD", "final_loss",
               "train_time_s", "diverged", "localized"});
  for (const RunResult& r : results) {
    table += csv_row({config::to_string(r.cfg.network.kind),
                      config::to_string(r.cfg.mode), dims_label(r.cfg.dims),
                      std::to_string(r.cfg.network.seed), fmt17(r.mean_rd()),
                      fmt17(r.final_loss), fmt17(r.report.wall_time),
                      r.report.diverged ? "true" : "false",
                      r.localized ? "true" : "false"});
    std::cout << summary_json(r) << "\n";
  }
  for (std::size_t di = 0; di < dims_list.size(); ++di)
    if (!oracle_errors[di].empty())
      std::cerr << "oracle failed for dims " << dims_label(dims_list[di])
                << ": " << oracle_errors[di] << "\n";
  write_text((fs::path(cfg.output_dir) / "refine.csv").string(), table);
  return 0;
}

}  // namespace dem::experiment
