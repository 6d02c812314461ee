#include "dem/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dem::config {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& message) {
  fail(ErrorKind::Config, "config: " + message);
}

void expect_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) bad(ctx + " must be an object");
}

void reject_unknown(const json& j, const std::string& ctx,
                    std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) bad("unknown key '" + key + "' in " + ctx);
  }
}

Real real_at(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) bad(ctx + " requires '" + std::string(key) + "'");
  if (!j[key].is_number()) bad(ctx + "." + key + " must be a number");
  return j[key].get<Real>();
}

Vec3 vec3_at(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) bad(ctx + " requires '" + std::string(key) + "'");
  const json& a = j[key];
  if (!a.is_array() || a.size() != 3) bad(ctx + "." + key + " must be [x, y, z]");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!a[i].is_number()) bad(ctx + "." + key + " must be numeric");
    v[i] = a[i].get<Real>();
  }
  return v;
}

Vec3i vec3i_at(const json& j, const char* key, const std::string& ctx) {
  Vec3 v = vec3_at(j, key, ctx);
  Vec3i n;
  for (int i = 0; i < 3; ++i) {
    n[i] = static_cast<int>(v[i]);
    if (v[i] != n[i]) bad(ctx + "." + key + " must hold integers");
  }
  return n;
}

void parse_geometry(const json& j, ExperimentConfig& cfg) {
  expect_object(j, "geometry");
  reject_unknown(j, "geometry", {"lengths", "dims"});
  if (j.contains("lengths")) cfg.lengths = vec3_at(j, "lengths", "geometry");
  if (j.contains("dims")) cfg.dims = vec3i_at(j, "dims", "geometry");
}

void parse_material(const json& j, ExperimentConfig& cfg) {
  expect_object(j, "material");
  if (!j.contains("type")) bad("material requires 'type'");
  const std::string type = j["type"].get<std::string>();
  if (type == "linear_elastic") {
    reject_unknown(j, "material", {"type", "E", "nu"});
    cfg.material = materials::LinearElastic{real_at(j, "E", "material"),
                                            real_at(j, "nu", "material")};
  } else if (type == "neo_hookean") {
    reject_unknown(j, "material", {"type", "C10", "D1"});
    cfg.material = materials::NeoHookean{real_at(j, "C10", "material"),
                                         real_at(j, "D1", "material")};
  } else {
    bad("material.type must be 'linear_elastic' or 'neo_hookean'");
  }
  materials::validate(cfg.material);
}

void parse_network(const json& j, ExperimentConfig& cfg) {
  expect_object(j, "network");
  reject_unknown(j, "network", {"backbone", "layer_widths", "cheb_order", "seed"});
  if (j.contains("backbone")) {
    const std::string kind = j["backbone"].get<std::string>();
    if (kind == "mlp")
      cfg.network.kind = models::Backbone::Mlp;
    else if (kind == "gcn")
      cfg.network.kind = models::Backbone::Gcn;
    else
      bad("network.backbone must be 'mlp' or 'gcn'");
  }
  if (j.contains("layer_widths")) {
    if (!j["layer_widths"].is_array()) bad("network.layer_widths must be an array");
    cfg.network.layer_widths.clear();
    for (const auto& w : j["layer_widths"]) {
      if (!w.is_number_integer()) bad("network.layer_widths must hold integers");
      cfg.network.layer_widths.push_back(w.get<int>());
    }
  }
  if (j.contains("cheb_order")) {
    if (!j["cheb_order"].is_number_integer()) bad("network.cheb_order must be an integer");
    cfg.network.cheb_order = j["cheb_order"].get<int>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer()) bad("network.seed must be an integer");
    cfg.network.seed = j["seed"].get<std::uint64_t>();
  }
  models::validate(cfg.network);
}

void parse_quadrature(const json& j, ExperimentConfig& cfg) {
  expect_object(j, "quadrature");
  reject_unknown(j, "quadrature", {"volume_rule", "ad_scheme"});
  if (j.contains("volume_rule")) {
    const std::string rule = j["volume_rule"].get<std::string>();
    if (rule == "gauss2")
      cfg.volume_rule = assembly::VolumeRule::Gauss2x2x2;
    else if (rule == "gauss1")
      cfg.volume_rule = assembly::VolumeRule::Gauss1;
    else
      bad("quadrature.volume_rule must be 'gauss2' or 'gauss1'");
  }
  if (j.contains("ad_scheme")) {
    const std::string scheme = j["ad_scheme"].get<std::string>();
    if (scheme == "trapezoid")
      cfg.ad_scheme = assembly::AdScheme::Trapezoid;
    else if (scheme == "simpson")
      cfg.ad_scheme = assembly::AdScheme::Simpson;
    else
      bad("quadrature.ad_scheme must be 'trapezoid' or 'simpson'");
  }
}

void parse_tractions(const json& j, ExperimentConfig& cfg) {
  if (!j.is_array() || j.empty()) bad("tractions must be a nonempty array");
  cfg.tractions.clear();
  for (const auto& t : j) {
    expect_object(t, "tractions entry");
    reject_unknown(t, "tractions entry", {"face", "traction"});
    if (!t.contains("face")) bad("tractions entry requires 'face'");
    assembly::TractionSpec spec;
    spec.tag = t["face"].get<std::string>();
    spec.traction = vec3_at(t, "traction", "tractions entry");
    cfg.tractions.push_back(spec);
  }
}

void parse_training(const json& j, ExperimentConfig& cfg) {
  expect_object(j, "training");
  reject_unknown(j, "training",
                 {"learning_rate", "max_epochs", "inner_iters_per_epoch",
                  "rel_loss_tol", "history_size", "step_policy"});
  auto int_at = [&](const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer()) bad(std::string("training.") + key + " must be an integer");
    return j[key].get<int>();
  };
  if (j.contains("learning_rate"))
    cfg.train.learning_rate = real_at(j, "learning_rate", "training");
  if (j.contains("rel_loss_tol"))
    cfg.train.rel_loss_tol = real_at(j, "rel_loss_tol", "training");
  cfg.train.max_epochs = int_at("max_epochs", cfg.train.max_epochs);
  cfg.train.inner_iters_per_epoch =
      int_at("inner_iters_per_epoch", cfg.train.inner_iters_per_epoch);
  cfg.train.history_size = int_at("history_size", cfg.train.history_size);
  if (j.contains("step_policy")) {
    if (!j["step_policy"].is_string())
      bad("training.step_policy must be a string");
    const std::string policy = j["step_policy"].get<std::string>();
    if (policy == "fixed")
      cfg.train.step_policy = training::StepPolicy::Fixed;
    else if (policy == "wolfe")
      cfg.train.step_policy = training::StepPolicy::Wolfe;
    else
      bad("training.step_policy must be 'fixed' or 'wolfe'");
  }
  if (cfg.train.learning_rate <= 0 || cfg.train.max_epochs <= 0 ||
      cfg.train.inner_iters_per_epoch <= 0 || cfg.train.rel_loss_tol <= 0 ||
      cfg.train.history_size <= 0)
    bad("training fields must be positive");
}

}  // namespace

ExperimentConfig parse(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    bad(std::string("not valid JSON: ") + e.what());
  }
  expect_object(doc, "document");
  reject_unknown(doc, "document",
                 {"schema_version", "geometry", "material", "network",
                  "gradient_mode", "quadrature", "tractions", "training",
                  "output_dir", "oracle", "localization_threshold",
                  "load_pattern"});

  if (!doc.contains("schema_version")) bad("schema_version is required");
  if (!doc["schema_version"].is_number_integer() ||
      doc["schema_version"].get<int>() != 1)
    bad("schema_version must be 1");
  if (!doc.contains("material")) bad("material is required");

  ExperimentConfig cfg;
  if (doc.contains("geometry")) parse_geometry(doc["geometry"], cfg);
  parse_material(doc["material"], cfg);
  if (doc.contains("network")) parse_network(doc["network"], cfg);
  if (doc.contains("gradient_mode")) {
    const std::string mode = doc["gradient_mode"].get<std::string>();
    if (mode == "sf")
      cfg.mode = assembly::GradientMode::Sf;
    else if (mode == "ad")
      cfg.mode = assembly::GradientMode::Ad;
    else
      bad("gradient_mode must be 'sf' or 'ad'");
  }
  if (doc.contains("quadrature")) parse_quadrature(doc["quadrature"], cfg);
  if (doc.contains("tractions")) parse_tractions(doc["tractions"], cfg);
  if (doc.contains("training")) parse_training(doc["training"], cfg);
  if (doc.contains("output_dir")) {
    if (!doc["output_dir"].is_string()) bad("output_dir must be a string");
    cfg.output_dir = doc["output_dir"].get<std::string>();
  }
  if (doc.contains("oracle")) {
    if (!doc["oracle"].is_boolean()) bad("oracle must be a boolean");
    cfg.oracle = doc["oracle"].get<bool>();
  }
  if (doc.contains("localization_threshold")) {
    cfg.localization_threshold =
        real_at(doc, "localization_threshold", "document");
    if (cfg.localization_threshold <= 0)
      bad("localization_threshold must be positive");
  }
  if (doc.contains("load_pattern"))
    cfg.load_pattern = vec3_at(doc, "load_pattern", "document");

  for (int i = 0; i < 3; ++i) {
    if (cfg.dims[i] < 2) bad("geometry.dims must be at least 2 per axis");
    if (cfg.lengths[i] <= 0) bad("geometry.lengths must be positive");
  }
  return cfg;
}

ExperimentConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

const char* to_string(assembly::GradientMode mode) {
  return mode == assembly::GradientMode::Sf ? "sf" : "ad";
}

const char* to_string(models::Backbone kind) {
  return kind == models::Backbone::Mlp ? "mlp" : "gcn";
}

}  // namespace dem::config
