#pragma once

#include <string>
#include <vector>

#include "dem/assembly.hpp"
#include "dem/training.hpp"

namespace dem::config {

/// One experiment: geometry, material, network, gradient mode, quadrature,
/// loads, training protocol, and output wiring. Parsed from schema v1 JSON;
/// unknown keys anywhere in the document are rejected.
struct ExperimentConfig {
  Vec3i dims{37, 10, 10};
  Vec3 lengths{4.0, 1.0, 1.0};
  materials::MaterialModel material = materials::LinearElastic{1000.0, 0.3};
  models::NetworkSpec network;
  assembly::GradientMode mode = assembly::GradientMode::Sf;
  assembly::VolumeRule volume_rule = assembly::VolumeRule::Gauss2x2x2;
  assembly::AdScheme ad_scheme = assembly::AdScheme::Trapezoid;
  std::vector<assembly::TractionSpec> tractions{
      {"x1", Vec3(0.0, -2.5, 0.0)}};
  training::TrainConfig train;
  std::string output_dir = "out";
  bool oracle = true;
  Real localization_threshold = 5.0;
  Vec3 load_pattern{0.0, 1.0, 0.0};  // sweep traction = load * pattern
};

/// Parses and validates a schema v1 document. Throws Error(Config) with a
/// message naming the offending key.
ExperimentConfig parse(const std::string& json_text);

/// Reads and parses a config file.
ExperimentConfig load(const std::string& path);

const char* to_string(assembly::GradientMode mode);
const char* to_string(models::Backbone kind);

}  // namespace dem::config
