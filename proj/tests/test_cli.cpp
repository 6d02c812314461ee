#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dem/config.hpp"
#include "dem/experiment.hpp"
#include "dem/vtk.hpp"

using namespace dem;
namespace fs = std::filesystem;

namespace {

const std::string kMinimal =
    R"({"schema_version": 1,
        "material": {"type": "linear_elastic", "E": 1000.0, "nu": 0.3}})";

/// Patches the minimal document with extra top-level members.
std::string with(const std::string& extra) {
  std::string doc = kMinimal;
  doc.insert(doc.rfind('}'), "," + extra);
  return doc;
}

fs::path scratch_dir(const std::string& leaf) {
  fs::path dir = fs::temp_directory_path() / "dem_test_cli" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

config::ExperimentConfig tiny_config() {
  config::ExperimentConfig cfg;
  cfg.dims = {5, 3, 3};
  cfg.network.layer_widths = {3, 8, 3};
  cfg.train.max_epochs = 2;
  cfg.train.verbose = false;
  cfg.oracle = false;
  return cfg;
}

std::vector<std::string> split_crlf(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find("\r\n", pos);
    REQUIRE(end != std::string::npos);  // every line must end in CRLF
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 2;
  }
  return lines;
}

}  // namespace

TEST_CASE("minimal document fills every default") {
  config::ExperimentConfig cfg = config::parse(kMinimal);
  CHECK(cfg.dims == Vec3i(37, 10, 10));
  CHECK(cfg.lengths == Vec3(4, 1, 1));
  CHECK(std::holds_alternative<materials::LinearElastic>(cfg.material));
  CHECK(cfg.network.kind == models::Backbone::Mlp);
  CHECK(cfg.network.layer_widths == std::vector<int>{3, 16, 32, 64, 32, 16, 3});
  CHECK(cfg.mode == assembly::GradientMode::Sf);
  CHECK(cfg.volume_rule == assembly::VolumeRule::Gauss2x2x2);
  CHECK(cfg.ad_scheme == assembly::AdScheme::Trapezoid);
  REQUIRE(cfg.tractions.size() == 1);
  CHECK(cfg.tractions[0].tag == "x1");
  CHECK(cfg.tractions[0].traction == Vec3(0, -2.5, 0));
  CHECK(cfg.train.max_epochs == 20);
  CHECK(cfg.train.inner_iters_per_epoch == 20);
  CHECK(cfg.train.learning_rate == 0.01);
  CHECK(cfg.oracle);
  CHECK(cfg.localization_threshold == 5.0);
  CHECK(cfg.load_pattern == Vec3(0, 1, 0));
}

TEST_CASE("full document overrides stick") {
  config::ExperimentConfig cfg = config::parse(R"({
    "schema_version": 1,
    "geometry": {"lengths": [2.0, 1.0, 0.5], "dims": [5, 4, 3]},
    "material": {"type": "neo_hookean", "C10": 192.31, "D1": 0.0024},
    "network": {"backbone": "gcn", "layer_widths": [3, 8, 3],
                "cheb_order": 2, "seed": 7},
    "gradient_mode": "ad",
    "quadrature": {"volume_rule": "gauss1", "ad_scheme": "simpson"},
    "tractions": [{"face": "y1", "traction": [0.0, 0.0, -1.0]},
                  {"face": "x1", "traction": [0.0, -2.0, 0.0]}],
    "training": {"learning_rate": 0.5, "max_epochs": 3,
                 "inner_iters_per_epoch": 4, "rel_loss_tol": 1e-3,
                 "history_size": 5},
    "output_dir": "elsewhere",
    "oracle": false,
    "localization_threshold": 2.5,
    "load_pattern": [0.0, 0.0, 1.0]
  })");
  CHECK(cfg.dims == Vec3i(5, 4, 3));
  CHECK(std::holds_alternative<materials::NeoHookean>(cfg.material));
  CHECK(cfg.network.kind == models::Backbone::Gcn);
  CHECK(cfg.network.cheb_order == 2);
  CHECK(cfg.network.seed == 7);
  CHECK(cfg.mode == assembly::GradientMode::Ad);
  CHECK(cfg.volume_rule == assembly::VolumeRule::Gauss1);
  CHECK(cfg.ad_scheme == assembly::AdScheme::Simpson);
  REQUIRE(cfg.tractions.size() == 2);
  CHECK(cfg.tractions[1].tag == "x1");
  CHECK(cfg.train.learning_rate == 0.5);
  CHECK(cfg.train.history_size == 5);
  CHECK(cfg.output_dir == "elsewhere");
  CHECK_FALSE(cfg.oracle);
  CHECK(cfg.localization_threshold == 2.5);
  CHECK(cfg.load_pattern == Vec3(0, 0, 1));
}

TEST_CASE("missing or mistyped required members name the key") {
  auto message_of = [](const std::string& doc) {
    try {
      config::parse(doc);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message_of(R"({"material": {"type": "linear_elastic",
                       "E": 1.0, "nu": 0.3}})")
            .find("schema_version") != std::string::npos);
  CHECK(message_of(R"({"schema_version": 2, "material":
                       {"type": "linear_elastic", "E": 1.0, "nu": 0.3}})")
            .find("schema_version") != std::string::npos);
  CHECK(message_of(R"({"schema_version": 1})").find("material") !=
        std::string::npos);
  CHECK(message_of(R"({"schema_version": 1, "material": {"E": 1.0}})")
            .find("type") != std::string::npos);
  CHECK(message_of("not json at all").find("JSON") != std::string::npos);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(config::parse(with(R"("extra": 1)")), Error);
  CHECK_THROWS_AS(config::parse(with(R"("geometry": {"dimz": [3, 3, 3]})")),
                  Error);
  CHECK_THROWS_AS(
      config::parse(R"({"schema_version": 1, "material":
          {"type": "linear_elastic", "E": 1.0, "nu": 0.3, "rho": 1.0}})"),
      Error);
  CHECK_THROWS_AS(config::parse(with(R"("network": {"width": 4})")), Error);
  CHECK_THROWS_AS(config::parse(with(R"("quadrature": {"order": 2})")), Error);
  CHECK_THROWS_AS(
      config::parse(with(
          R"("tractions": [{"face": "x1", "traction": [0,0,0], "id": 9}])")),
      Error);
  CHECK_THROWS_AS(config::parse(with(R"("training": {"epochs": 3})")), Error);
}

TEST_CASE("enum and value validation") {
  CHECK_THROWS_AS(config::parse(with(R"("gradient_mode": "fd")")), Error);
  CHECK_THROWS_AS(config::parse(with(R"("network": {"backbone": "cnn"})")),
                  Error);
  CHECK_THROWS_AS(
      config::parse(with(R"("quadrature": {"volume_rule": "gauss3"})")),
      Error);
  CHECK_THROWS_AS(
      config::parse(with(R"("quadrature": {"ad_scheme": "booles"})")), Error);
  CHECK_THROWS_AS(
      config::parse(R"({"schema_version": 1,
                        "material": {"type": "mooney", "E": 1.0}})"),
      Error);
  // eager physics validation: nu = 0.5 is the incompressible limit
  CHECK_THROWS_AS(
      config::parse(R"({"schema_version": 1, "material":
                        {"type": "linear_elastic", "E": 1.0, "nu": 0.5}})"),
      Error);
  // network widths must start and end at 3
  CHECK_THROWS_AS(
      config::parse(with(R"("network": {"layer_widths": [3, 8, 4]})")), Error);
  CHECK_THROWS_AS(config::parse(with(R"("geometry": {"dims": [1, 3, 3]})")),
                  Error);
  CHECK_THROWS_AS(
      config::parse(with(R"("geometry": {"lengths": [0.0, 1.0, 1.0]})")),
      Error);
  CHECK_THROWS_AS(config::parse(with(R"("tractions": [])")), Error);
  CHECK_THROWS_AS(config::parse(with(R"("training": {"max_epochs": 0})")),
                  Error);
  CHECK_THROWS_AS(config::parse(with(R"("localization_threshold": 0.0)")),
                  Error);
  CHECK_THROWS_AS(config::parse(with(R"("geometry": {"dims": [3.5, 3, 3]})")),
                  Error);
}

TEST_CASE("load reads a file and rejects a missing one") {
  fs::path dir = scratch_dir("config_load");
  fs::path path = dir / "config.json";
  std::ofstream(path) << kMinimal;
  config::ExperimentConfig cfg = config::load(path.string());
  CHECK(cfg.dims == Vec3i(37, 10, 10));
  CHECK_THROWS_AS(config::load((dir / "absent.json").string()), Error);
}

TEST_CASE("enum names round-trip") {
  CHECK(std::string(config::to_string(assembly::GradientMode::Sf)) == "sf");
  CHECK(std::string(config::to_string(assembly::GradientMode::Ad)) == "ad");
  CHECK(std::string(config::to_string(models::Backbone::Mlp)) == "mlp");
  CHECK(std::string(config::to_string(models::Backbone::Gcn)) == "gcn");
}

TEST_CASE("csv rows quote per rfc 4180") {
  using experiment::csv_escape;
  using experiment::csv_row;
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_escape("line\nbreak") == "\"line\nbreak\"");
  CHECK(csv_row({"a", "b,c", "d"}) == "a,\"b,c\",d\r\n");
}

TEST_CASE("worker count obeys the env var") {
  unsetenv("DEM_SOLVE_THREADS");
  CHECK(experiment::worker_count(8) == 1);
  setenv("DEM_SOLVE_THREADS", "3", 1);
  CHECK(experiment::worker_count(8) == 3);
  CHECK(experiment::worker_count(2) == 2);  // clamped to the job count
  setenv("DEM_SOLVE_THREADS", "0", 1);
  CHECK(experiment::worker_count(8) == 1);
  setenv("DEM_SOLVE_THREADS", "many", 1);
  CHECK_THROWS_AS(experiment::worker_count(8), Error);
  unsetenv("DEM_SOLVE_THREADS");
}

TEST_CASE("demo1d scan hits the closed-form anchors") {
  fs::path dir = scratch_dir("demo1d");
  REQUIRE(experiment::cmd_demo1d(2.0, 200, dir.string()) == 0);
  std::vector<std::string> lines = split_crlf(slurp(dir / "demo1d.csv"));
  REQUIRE(lines.size() == 202);
  CHECK(lines[0] == "du,psi_ad,psi_sf");

  std::vector<std::array<double, 3>> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::array<double, 3> row{};
    std::istringstream ss(lines[i]);
    std::string cell;
    for (double& v : row) {
      REQUIRE(std::getline(ss, cell, ','));
      v = std::stod(cell);
    }
    rows.push_back(row);
  }
  CHECK(rows[0][0] == 0.0);
  CHECK(rows[0][1] == -0.5);  // exact at zero jump
  CHECK(rows[0][2] == -0.5);
  CHECK(rows[50][0] == 0.5);
  CHECK(rows[50][1] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(rows[50][2] == doctest::Approx(-0.375).epsilon(1e-6));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][1] < rows[i - 1][1]);  // psi_ad strictly decreasing
    CHECK(rows[i][2] >= -0.5 - 1e-12);   // psi_sf bounded below
  }

  CHECK(experiment::cmd_demo1d(0.0, 200, dir.string()) == 2);
  CHECK(experiment::cmd_demo1d(2.0, 0, dir.string()) == 2);
}

TEST_CASE("vtk writer emits a well-formed unstructured grid") {
  grid::HexMesh mesh = grid::build_hex_mesh(grid::build_grid({3, 2, 2}, {2, 1, 1}));
  const int n = mesh.grid.num_nodes();
  const int m = mesh.num_elements();
  MatX u = MatX::Zero(n, 3);
  u.col(0) = 0.25 * mesh.grid.coords.col(0);  // eps_11 = 0.25 everywhere

  fs::path dir = scratch_dir("vtk");
  fs::path path = dir / "field.vtk";
  vtk::write_fields(path.string(), mesh, u);

  std::istringstream in(slurp(path));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);

  REQUIRE(lines.size() > 10);
  CHECK(lines[0] == "# vtk DataFile Version 3.0");
  CHECK(lines[2] == "ASCII");
  CHECK(lines[3] == "DATASET UNSTRUCTURED_GRID");
  CHECK(lines[4] == "POINTS " + std::to_string(n) + " double");

  auto find_line = [&](const std::string& want) {
    for (std::size_t i = 0; i < lines.size(); ++i)
      if (lines[i] == want) return i;
    REQUIRE_MESSAGE(false, ("missing line: " + want).c_str());
    return std::size_t(0);
  };
  std::size_t cells = find_line("CELLS " + std::to_string(m) + " " +
                                std::to_string(9 * m));
  std::size_t types = find_line("CELL_TYPES " + std::to_string(m));
  std::size_t pdata = find_line("POINT_DATA " + std::to_string(n));
  std::size_t cdata = find_line("CELL_DATA " + std::to_string(m));
  CHECK(cells == 5 + n);
  CHECK(cells < types);
  CHECK(types < pdata);
  CHECK(pdata < cdata);
  CHECK(lines[pdata + 1] == "VECTORS u double");
  CHECK(lines[cdata + 1] == "TENSORS grad_u double");

  for (int e = 0; e < m; ++e) {
    CHECK(lines[types + 1 + e] == "12");
    std::istringstream row(lines[cells + 1 + e]);
    int count = -1;
    row >> count;
    CHECK(count == 8);
    for (int c = 0; c < 8; ++c) {
      int idx = -1;
      row >> idx;
      CHECK(idx == mesh.elements(e, c));
    }
  }

  std::size_t scalars = find_line("SCALARS eps_11 double 1");
  CHECK(lines[scalars + 1] == "LOOKUP_TABLE default");
  for (int e = 0; e < m; ++e)
    CHECK(std::stod(lines[scalars + 2 + e]) == doctest::Approx(0.25));

  CHECK_THROWS_AS(vtk::write_fields(path.string(), mesh, MatX::Zero(2, 3)),
                  Error);
}

TEST_CASE("run_single produces a report that round-trips its summary") {
  config::ExperimentConfig cfg = tiny_config();
  experiment::RunResult r = experiment::run_single(cfg);
  CHECK(r.run_error.empty());
  CHECK(std::isfinite(r.final_loss));
  CHECK(r.final_loss < 0.0);
  CHECK(r.u.rows() == 5 * 3 * 3);
  CHECK_FALSE(r.rd.has_value());  // oracle off

  fs::path dir = scratch_dir("run_artifacts");
  experiment::write_run_artifacts(dir.string(), r);
  CHECK(fs::exists(dir / "field.vtk"));
  CHECK_FALSE(fs::exists(dir / "oracle.vtk"));

  nlohmann::json doc = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(doc["summary"].dump() == experiment::summary_json(r));
  CHECK(doc["summary"]["mean_rd"].is_null());
  CHECK(doc["summary"]["final_loss"].get<double>() == r.final_loss);
  CHECK(doc["loss_history"].size() == r.report.loss_history.size());
  CHECK(doc["config"]["dims"] == nlohmann::json({5, 3, 3}));

  std::vector<std::string> lines = split_crlf(slurp(dir / "metrics.csv"));
  REQUIRE(lines.size() == r.report.loss_history.size() + 1);
  CHECK(lines[0] == "update,loss");
  CHECK(lines[1].rfind("0,", 0) == 0);
}

TEST_CASE("identical configs replay bitwise-identical artifacts") {
  config::ExperimentConfig cfg = tiny_config();
  fs::path a = scratch_dir("replay_a");
  fs::path b = scratch_dir("replay_b");
  experiment::write_run_artifacts(a.string(), experiment::run_single(cfg));
  experiment::write_run_artifacts(b.string(), experiment::run_single(cfg));
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "field.vtk") == slurp(b / "field.vtk"));
}

TEST_CASE("run with the oracle reports displacement differences") {
  config::ExperimentConfig cfg = tiny_config();
  cfg.oracle = true;
  cfg.train.max_epochs = 6;
  experiment::RunResult r = experiment::run_single(cfg);
  REQUIRE(r.oracle.has_value());
  REQUIRE(r.rd.has_value());
  CHECK(r.oracle->residual_norm < 1e-8);
  CHECK(std::isfinite(r.mean_rd()));
  CHECK(r.mean_rd() > 0.0);

  fs::path dir = scratch_dir("run_oracle");
  experiment::write_run_artifacts(dir.string(), r);
  CHECK(fs::exists(dir / "oracle.vtk"));
  nlohmann::json doc = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(doc["oracle"]["residual_norm"].get<double>() < 1e-8);
  CHECK(doc["rd"]["mean"].get<double>() == r.rd->mean);
}

TEST_CASE("sweep writes one row per load and combo") {
  config::ExperimentConfig cfg = tiny_config();
  cfg.output_dir = scratch_dir("sweep").string();
  REQUIRE(experiment::cmd_sweep(cfg, {-1.0, -2.0}) == 0);

  std::vector<std::string> lines =
      split_crlf(slurp(fs::path(cfg.output_dir) / "table.csv"));
  REQUIRE(lines.size() == 1 + 2 * 4);
  CHECK(lines[0] == "method,mode,load,mean_RD,final_loss,train_time_s,diverged");
  CHECK(lines[1].rfind("mlp,ad,-1,", 0) == 0);
  CHECK(lines[2].rfind("gcn,ad,-1,", 0) == 0);
  CHECK(lines[3].rfind("mlp,sf,-1,", 0) == 0);
  CHECK(lines[4].rfind("gcn,sf,-1,", 0) == 0);
  CHECK(lines[5].rfind("mlp,ad,-2,", 0) == 0);
  for (std::size_t i = 1; i < lines.size(); ++i)
    CHECK(lines[i].substr(lines[i].size() - 5) == "false");
  CHECK(fs::exists(fs::path(cfg.output_dir) / "run_-2_sf_gcn" / "report.json"));

  CHECK(experiment::cmd_sweep(cfg, {}) == 2);
}

TEST_CASE("refine demands the hyperelastic material and sweeps seeds") {
  config::ExperimentConfig le = tiny_config();
  CHECK(experiment::cmd_refine(le, {Vec3i(5, 3, 3)}) == 2);

  config::ExperimentConfig cfg = tiny_config();
  cfg.material = materials::NeoHookean{192.31, 0.0024};
  cfg.train.max_epochs = 1;
  cfg.output_dir = scratch_dir("refine").string();
  REQUIRE(experiment::cmd_refine(cfg, {Vec3i(5, 3, 3)}) == 0);
  CHECK(experiment::cmd_refine(cfg, {}) == 2);

  std::vector<std::string> lines =
      split_crlf(slurp(fs::path(cfg.output_dir) / "refine.csv"));
  REQUIRE(lines.size() == 1 + 4 * 3);  // {ad, sf} x {mlp, gcn} x seeds {0,1,2}
  CHECK(lines[0] ==
        "method,mode,dims,seed,mean_RD,final_loss,train_time_s,diverged,"
        "localized");
  CHECK(lines[1].rfind("mlp,ad,5x3x3,0,", 0) == 0);
  CHECK(lines[2].rfind("mlp,ad,5x3x3,1,", 0) == 0);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "refine_5x3x3_sf_gcn_s2" /
                   "metrics.csv"));
}
