#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dem/experiment.hpp"

namespace {

using dem::Real;
using dem::Vec3i;

std::vector<Real> parse_loads(const std::string& csv) {
  std::vector<Real> loads;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    const std::string token = csv.substr(pos, comma - pos);
    std::size_t used = 0;
    loads.push_back(std::stod(token, &used));
    if (used != token.size())
      throw std::invalid_argument("bad load '" + token + "'");
    pos = comma + 1;
  }
  return loads;
}

std::vector<Vec3i> parse_dims(const std::string& csv) {
  std::vector<Vec3i> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    const std::string token = csv.substr(pos, comma - pos);
    Vec3i dims;
    std::size_t start = 0;
    for (int axis = 0; axis < 3; ++axis) {
      std::size_t x = token.find('x', start);
      if ((x == std::string::npos) != (axis == 2))
        throw std::invalid_argument("bad dims '" + token +
                                    "', expected NXxNYxNZ");
      const std::string part = token.substr(start, x - start);
      std::size_t used = 0;
      dims[axis] = std::stoi(part, &used);
      if (used != part.size())
        throw std::invalid_argument("bad dims '" + token + "'");
      start = x + 1;
    }
    out.push_back(dims);
    pos = comma + 1;
  }
  return out;
}

dem::config::ExperimentConfig load_config(
    const std::string& path, const std::optional<std::string>& out_dir,
    const std::optional<std::uint64_t>& seed) {
  dem::config::ExperimentConfig cfg = dem::config::load(path);
  if (out_dir) cfg.output_dir = *out_dir;
  if (seed) cfg.network.seed = *seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deep energy minimization on 3d beam grids"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::string loads_csv = "-2.5,-5,-7.5,-10,-15,-25";
  std::string dims_csv = "37x10x10,44x13x13,67x18x18";
  Real du_max = 2.0;
  int steps = 200;

  CLI::App* run = app.add_subcommand("run", "train one model per the config");
  run->add_option("--config", config_path, "config.json path")->required();
  run->add_option("--out", out_dir, "output directory override");
  run->add_option("--seed", seed, "network seed override");

  CLI::App* sweep =
      app.add_subcommand("sweep", "one run per load x {ad, sf} x {mlp, gcn}");
  sweep->add_option("--config", config_path, "config.json path")->required();
  sweep->add_option("--out", out_dir, "output directory override");
  sweep->add_option("--seed", seed, "network seed override");
  sweep->add_option("--loads", loads_csv, "comma-separated load magnitudes");

  CLI::App* demo =
      app.add_subcommand("demo1d", "potential energy of the 1d two-node bar");
  demo->add_option("--out", out_dir, "output directory");
  demo->add_option("--du-max", du_max, "largest jump amplitude");
  demo->add_option("--steps", steps, "scan resolution");

  CLI::App* refine = app.add_subcommand(
      "refine", "neo-hookean t = -15 study across grid resolutions");
  refine->add_option("--config", config_path, "config.json path")->required();
  refine->add_option("--out", out_dir, "output directory override");
  refine->add_option("--dims", dims_csv, "comma-separated NXxNYxNZ triples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed())
      return dem::experiment::cmd_run(load_config(config_path, out_dir, seed));
    if (sweep->parsed())
      return dem::experiment::cmd_sweep(
          load_config(config_path, out_dir, seed), parse_loads(loads_csv));
    if (demo->parsed())
      return dem::experiment::cmd_demo1d(du_max, steps,
                                         out_dir.value_or("out"));
    if (refine->parsed())
      return dem::experiment::cmd_refine(load_config(config_path, out_dir, {}),
                                         parse_dims(dims_csv));
  } catch (const dem::Error& e) {
    std::cerr << e.what() << "\n";
    return e.kind() == dem::ErrorKind::Config ? 2 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
