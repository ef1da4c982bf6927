#include "plume/config.hpp"

#include <yaml-cpp/yaml.h>
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "plume/error.hpp"

namespace plume {

namespace {

// One visitor drives parsing, dumping and key discovery, so the three never disagree.
template <typename V>
void visit(RunConfig& c, V&& v) {
  v("grid", "nx", c.grid.nx);
  v("grid", "nz", c.grid.nz);
  v("grid", "width", c.grid.width);
  v("grid", "depth", c.grid.depth);

  auto& g = c.geo;
  v("geo", "n_layers", g.n_layers);
  v("geo", "seal_depth_fraction", g.seal_depth_fraction);
  v("geo", "seal_depth_jitter", g.seal_depth_jitter);
  v("geo", "seal_thickness_min", g.seal_thickness_min);
  v("geo", "seal_thickness_max", g.seal_thickness_max);
  v("geo", "seal_min_rows", g.seal_min_rows);
  v("geo", "interface_amplitude", g.interface_amplitude);
  v("geo", "overburden_v_min", g.overburden_v_min);
  v("geo", "overburden_v_max", g.overburden_v_max);
  v("geo", "seal_v_min", g.seal_v_min);
  v("geo", "seal_v_max", g.seal_v_max);
  v("geo", "reservoir_v_min", g.reservoir_v_min);
  v("geo", "reservoir_v_max", g.reservoir_v_max);
  v("geo", "velocity_noise", g.velocity_noise);
  v("geo", "well_min_fraction", g.well_min_fraction);
  v("geo", "well_max_fraction", g.well_max_fraction);
  v("geo", "fracture_offset_min", g.fracture_offset_min);
  v("geo", "fracture_offset_max", g.fracture_offset_max);
  v("geo", "n_baffles", g.n_baffles);
  v("geo", "baffle_thickness", g.baffle_thickness);

  auto& r = c.geo.rock;
  v("rock", "phi_max", r.phi_max);
  v("rock", "phi_min", r.phi_min);
  v("rock", "v_ref", r.v_ref);
  v("rock", "slope", r.slope);
  v("rock", "d_grain", r.d_grain);
  v("rock", "d_grain_seal", r.d_grain_seal);
  v("rock", "d_grain_baffle", r.d_grain_baffle);

  v("fluid", "mu_brine", c.fluid.mu_brine);
  v("fluid", "mu_co2", c.fluid.mu_co2);
  v("fluid", "rho_brine", c.fluid.rho_brine);
  v("fluid", "rho_co2", c.fluid.rho_co2);
  v("fluid", "corey_exponent", c.fluid.corey_exponent);
  v("fluid", "gravity", c.fluid.gravity);

  v("schedule", "rate", c.schedule.rate);
  v("schedule", "duration", c.schedule.duration);
  v("schedule", "n_report", c.schedule.n_report);
  v("schedule", "pressure_steps", c.schedule.pressure_steps);

  v("leak", "p_threshold", c.leak.p_threshold);
  v("leak", "k_multiplier", c.leak.k_multiplier);
  v("leak", "calibrate", c.calibration.enabled);
  v("leak", "trigger_min_years", c.calibration.trigger_min_years);
  v("leak", "trigger_max_years", c.calibration.trigger_max_years);

  v("solver", "cg_tolerance", c.solver.cg_tolerance);
  v("solver", "cg_max_iterations", c.solver.cg_max_iterations);
  v("solver", "cfl", c.solver.cfl);
  v("solver", "p_surface", c.solver.p_surface);

  auto& o = c.observation;
  v("observation", "peak_frequency", o.wavelet.peak_frequency);
  v("observation", "background_velocity_use", o.wavelet.background_velocity_use);
  v("observation", "reference_velocity", o.wavelet.reference_velocity);
  v("observation", "beta", o.beta);
  v("observation", "snr_db", o.snr_db);
  v("observation", "pressure_scale", o.pressure_scale);
  v("observation", "zero_signal_noise_rms", o.zero_signal_noise_rms);
  v("observation", "resolution_x", o.out_nx);
  v("observation", "resolution_z", o.out_nz);
  v("observation", "monitoring_well", o.monitoring_well);
  v("observation", "monitoring_well_fraction", o.monitoring_well_fraction);

  v("model", "levels", c.model.levels);
  v("model", "steps_per_level", c.model.steps_per_level);
  v("model", "hidden_channels", c.model.hidden_channels);
  v("model", "clamp", c.model.clamp);
  v("model", "seed", c.model.seed);

  auto& t = c.training;
  v("training", "batch_size", t.batch_size);
  v("training", "learning_rate", t.learning_rate);
  v("training", "epochs", t.epochs);
  v("training", "noise_magnitude", t.noise_magnitude);
  v("training", "adam_beta1", t.adam.beta1);
  v("training", "adam_beta2", t.adam.beta2);
  v("training", "adam_eps", t.adam.eps);
  v("training", "early_stop", t.early_stop);
  v("training", "patience", t.patience);
  v("training", "normalize_conditioning", t.normalize_conditioning);
  v("training", "seed", t.seed);

  auto& p = c.posterior;
  v("posterior", "samples", p.samples);
  v("posterior", "envelope_sigma", p.envelope_sigma);
  v("posterior", "epsilon_fraction", p.epsilon_fraction);
  v("posterior", "epsilon_floor", p.epsilon_floor);
  v("posterior", "leak_tau", p.leak_tau);
  v("posterior", "recalibrate_tau", p.recalibrate_tau);
  v("posterior", "seed", p.seed);

  v("data", "n_total", c.data.n_total);
  v("data", "leak_fraction", c.data.leak_fraction);
  v("data", "test_count", c.data.test_count);
  v("data", "val_fraction", c.data.val_fraction);
  v("data", "train_count", c.data.train_count);
  v("data", "val_count", c.data.val_count);
  v("data", "seed", c.data.seed);
  v("data", "workers", c.data.workers);
}

std::string where(const std::string& source, const YAML::Mark& mark) {
  return source + ":" + std::to_string(mark.line + 1) + ": ";
}

template <typename T>
std::string type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_integral_v<T>) return "an integer";
  else return "a number";
}

void sync_derived(RunConfig& c) {
  c.model.channels = 1;
  c.model.cond_channels = 3;
  c.model.height = c.observation.out_nz;
  c.model.width = c.observation.out_nx;
}

}  // namespace

void RunConfig::validate() const {
  grid.grid().validate();
  geo.validate();
  fluid.validate();
  schedule.validate();
  leak.validate();
  observation.validate();
  model.validate();
  training.validate();
  posterior.validate();
  if (grid.nx % observation.out_nx != 0 || grid.nz % observation.out_nz != 0)
    throw InvalidArgument("config: training resolution must divide the simulation grid");
  if (model.height != observation.out_nz || model.width != observation.out_nx)
    throw InvalidArgument("config: flow resolution differs from the training resolution");
  if (!(calibration.trigger_min_years > 0.0 &&
        calibration.trigger_min_years <= calibration.trigger_max_years &&
        calibration.trigger_max_years <= schedule.duration))
    throw InvalidArgument("config: leak trigger window must satisfy 0 < min <= max <= duration");
  if (!(solver.cg_tolerance > 0.0) || solver.cg_max_iterations < 1 || !(solver.cfl > 0.0 && solver.cfl <= 1.0))
    throw InvalidArgument("config: invalid solver settings");
  if (data.n_total < 2) throw InvalidArgument("config: data.n_total must be >= 2");
  if (!(data.leak_fraction >= 0.0 && data.leak_fraction <= 1.0))
    throw InvalidArgument("config: data.leak_fraction must lie in [0, 1]");
  if (data.test_count < 0 || data.train_count < 0 || data.val_count < 0 ||
      !(data.val_fraction >= 0.0 && data.val_fraction < 1.0) || data.workers < 0)
    throw InvalidArgument("config: invalid data split settings");
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw FormatError(where(source, e.mark) + e.msg);
  }
  if (root.IsNull()) {
    sync_derived(cfg);
    cfg.validate();
    return cfg;
  }
  if (!root.IsMap()) throw FormatError(where(source, root.Mark()) + "top level must be a mapping");

  std::map<std::string, std::map<std::string, std::function<void(const YAML::Node&)>>> table;
  visit(cfg, [&](const char* section, const char* key, auto& ref) {
    using T = std::remove_reference_t<decltype(ref)>;
    table[section][key] = [&ref, section, key, &source](const YAML::Node& n) {
      if (!n.IsScalar())
        throw FormatError(where(source, n.Mark()) + section + "." + key + " must be a scalar");
      try {
        ref = n.as<T>();
      } catch (const YAML::BadConversion&) {
        throw FormatError(where(source, n.Mark()) + section + "." + key + " must be " +
                          type_name<T>() + ", got '" + n.Scalar() + "'");
      }
    };
  });

  bool pressure_scale_set = false;
  for (const auto& sec : root) {
    const auto name = sec.first.as<std::string>();
    const auto it = table.find(name);
    if (it == table.end())
      throw FormatError(where(source, sec.first.Mark()) + "unknown section '" + name + "'");
    if (sec.second.IsNull()) continue;
    if (!sec.second.IsMap())
      throw FormatError(where(source, sec.second.Mark()) + "section '" + name + "' must be a mapping");
    for (const auto& kv : sec.second) {
      const auto key = kv.first.as<std::string>();
      const auto f = it->second.find(key);
      if (f == it->second.end())
        throw FormatError(where(source, kv.first.Mark()) + "unknown key '" + key +
                          "' in section '" + name + "'");
      f->second(kv.second);
      if (name == "observation" && key == "pressure_scale") pressure_scale_set = true;
    }
  }
  // The pressure channel is normalized relative to the leak threshold unless set explicitly.
  if (!pressure_scale_set) cfg.observation.pressure_scale = 1.5 * cfg.leak.p_threshold;
  sync_derived(cfg);
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string dump_config(const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  YAML::Emitter out;
  out << YAML::BeginMap;
  std::string current;
  visit(cfg, [&](const char* section, const char* key, auto& ref) {
    if (current != section) {
      if (!current.empty()) out << YAML::EndMap;
      out << YAML::Key << section << YAML::Value << YAML::BeginMap;
      current = section;
    }
    using T = std::remove_reference_t<decltype(ref)>;
    out << YAML::Key << key << YAML::Value;
    if constexpr (std::is_floating_point_v<T>) {
      char buf[64];
      if (std::isinf(ref))
        std::snprintf(buf, sizeof buf, "%s", ref > 0 ? ".inf" : "-.inf");
      else
        std::snprintf(buf, sizeof buf, "%.17g", ref);
      out << std::string(buf);
    } else {
      out << ref;
    }
  });
  out << YAML::EndMap << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = dump_config(cfg);
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(text.data()),
                           static_cast<uInt>(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace plume
