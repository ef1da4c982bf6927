#include "plume/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <random>
#include <thread>

#include "plume/error.hpp"
#include "plume/seed.hpp"

namespace plume {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kXFile = "x.f32";
constexpr const char* kYFile = "y.f32";

std::uint32_t crc_of(const std::vector<float>& v) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(v.data()),
                                            static_cast<uInt>(v.size() * sizeof(float))));
}

std::vector<float> to_f32(const Field2D& f) {
  return std::vector<float>(f.raw().begin(), f.raw().end());
}

std::vector<float> pack_y(const ObservationTriple& y) {
  std::vector<float> out;
  out.reserve(3 * y.y1_seismic.size());
  for (const Field2D* f : {&y.y1_seismic, &y.y2_well_sat, &y.y3_well_pres})
    out.insert(out.end(), f->raw().begin(), f->raw().end());
  return out;
}

json record_json(const SampleRecord& r) {
  json j{{"id", r.id},
         {"seed", r.seed},
         {"leak", r.leak},
         {"ok", r.ok},
         {"leak_triggered", r.leak_triggered},
         {"trigger_time", r.trigger_time ? json(*r.trigger_time) : json(nullptr)},
         {"p_threshold", r.p_threshold},
         {"seal_rows", {r.seal_rows.begin, r.seal_rows.end}},
         {"seal_top", r.seal_top},
         {"well_col", r.well_col},
         {"fracture_col", r.fracture_col},
         {"mass_injected", r.mass_injected},
         {"mass_in_domain", r.mass_in_domain},
         {"mass_out", r.mass_out},
         {"measured_snr_db", std::isfinite(r.measured_snr_db) ? json(r.measured_snr_db) : json(nullptr)},
         {"crc32_x", r.crc_x},
         {"crc32_y", r.crc_y},
         {"split", r.split}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

SampleRecord record_from(const json& j) {
  SampleRecord r;
  r.id = j.at("id").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.leak = j.at("leak").get<bool>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.value("error", std::string());
  r.leak_triggered = j.at("leak_triggered").get<bool>();
  if (!j.at("trigger_time").is_null()) r.trigger_time = j.at("trigger_time").get<double>();
  r.p_threshold = j.at("p_threshold").get<double>();
  r.seal_rows = {j.at("seal_rows").at(0).get<int>(), j.at("seal_rows").at(1).get<int>()};
  r.seal_top = j.at("seal_top").get<int>();
  r.well_col = j.at("well_col").get<int>();
  r.fracture_col = j.at("fracture_col").get<int>();
  r.mass_injected = j.at("mass_injected").get<double>();
  r.mass_in_domain = j.at("mass_in_domain").get<double>();
  r.mass_out = j.at("mass_out").get<double>();
  r.measured_snr_db = j.at("measured_snr_db").is_null() ? std::numeric_limits<double>::infinity()
                                                        : j.at("measured_snr_db").get<double>();
  r.crc_x = j.at("crc32_x").get<std::uint32_t>();
  r.crc_y = j.at("crc32_y").get<std::uint32_t>();
  r.split = j.value("split", std::string());
  return r;
}

void ensure_size(const fs::path& p, std::uintmax_t bytes) {
  if (!fs::exists(p)) std::ofstream(p, std::ios::binary).close();
  if (fs::file_size(p) != bytes) fs::resize_file(p, bytes);
}

void write_at(std::fstream& f, std::size_t offset, const std::vector<float>& v) {
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!f) throw FormatError("dataset: write failed");
}

}  // namespace

std::vector<int> DatasetManifest::ids_in(const std::string& split_name) const {
  std::vector<int> ids;
  for (const auto& r : records)
    if (r.ok && r.split == split_name) ids.push_back(r.id);
  return ids;
}

RunConfig generation_settings(const RunConfig& cfg) {
  const RunConfig defaults;
  RunConfig s = cfg;
  s.model = defaults.model;
  s.training = defaults.training;
  s.posterior = defaults.posterior;
  s.data.test_count = defaults.data.test_count;
  s.data.val_fraction = defaults.data.val_fraction;
  s.data.train_count = defaults.data.train_count;
  s.data.val_count = defaults.data.val_count;
  s.data.workers = defaults.data.workers;
  return s;
}

std::vector<bool> leak_flags(int n, double leak_fraction, std::uint64_t seed) {
  if (n < 0 || !(leak_fraction >= 0.0 && leak_fraction <= 1.0))
    throw InvalidArgument("leak_flags: need n >= 0 and leak_fraction in [0, 1]");
  const auto n_leak = static_cast<int>(std::llround(leak_fraction * n));
  std::vector<bool> flags(n, false);
  std::fill(flags.begin(), flags.begin() + n_leak, true);
  std::mt19937_64 rng(seed);
  for (int j = n - 1; j > 0; --j) {
    const int k = static_cast<int>(std::uniform_int_distribution<int>(0, j)(rng));
    const bool tmp = flags[j];
    flags[j] = flags[k];
    flags[k] = tmp;
  }
  return flags;
}

GeneratedSample generate_sample(const RunConfig& cfg, int id, bool leak, std::uint64_t seed) {
  const Grid2D grid = cfg.grid.grid();
  const EarthModel model = make_layered_model(derive_seed(seed, 1), grid, cfg.geo);

  LeakConfig lk = cfg.leak;
  lk.enabled = leak;
  if (leak && cfg.calibration.enabled) {
    // Run the intact model up to a random target time on the same time steps as the
    // full run; the largest threshold reached by then is guaranteed to trigger.
    std::mt19937_64 rng(derive_seed(seed, 2));
    const double target = std::uniform_real_distribution<double>(
        cfg.calibration.trigger_min_years, cfg.calibration.trigger_max_years)(rng);
    const double dt = cfg.schedule.duration / cfg.schedule.pressure_steps;
    const int steps = std::clamp(static_cast<int>(std::floor(target / dt)) + 1, 1,
                                 cfg.schedule.pressure_steps);
    InjectionSchedule probe = cfg.schedule;
    probe.pressure_steps = steps;
    probe.duration = dt * steps;
    probe.n_report = 2;
    LeakConfig off = cfg.leak;
    off.enabled = false;
    const SimResult pre = simulate(model, cfg.fluid, probe, off, cfg.solver);
    const double thr = calibrate_threshold(pre.seal_pressure_times, pre.seal_overpressure, target);
    lk.p_threshold = std::max(thr * (1.0 - 1e-9), 1.0);
  }
  const SimResult sim = simulate(model, cfg.fluid, cfg.schedule, lk, cfg.solver);

  GeneratedSample out;
  out.y = assemble_observation(sim, model, cfg.observation, derive_seed(seed, 3));
  out.x = area_downsample(sim.saturation.back(), cfg.observation.out_nx, cfg.observation.out_nz);

  SampleRecord& r = out.record;
  r.id = id;
  r.seed = seed;
  r.leak = leak;
  r.ok = true;
  r.leak_triggered = sim.leak_triggered;
  r.trigger_time = sim.trigger_time;
  r.p_threshold = leak ? lk.p_threshold : 0.0;
  r.seal_rows = model.seal_rows;
  r.seal_top = model.seal_rows.begin / (grid.nz / cfg.observation.out_nz);
  r.well_col = model.well_col;
  r.fracture_col = model.fracture_col;
  r.mass_injected = sim.mass_injected;
  r.mass_in_domain = sim.mass_in_domain;
  r.mass_out = sim.mass_out_boundaries;
  r.measured_snr_db = out.y.measured_snr_db;
  r.crc_x = crc_of(to_f32(out.x));
  r.crc_y = crc_of(pack_y(out.y));
  return out;
}

void write_manifest(const fs::path& dir, const DatasetManifest& m) {
  json j;
  j["format"] = "plume-dataset";
  j["version"] = m.version;
  j["counts"] = {{"total", m.n_total}, {"leak", m.n_leak}, {"no_leak", m.n_no_leak()}};
  j["leak_fraction"] = m.leak_fraction;
  j["seed"] = m.seed;
  j["resolution"] = {{"height", m.height}, {"width", m.width}};
  j["sim_grid"] = {{"nx", m.sim_grid.nx}, {"nz", m.sim_grid.nz}, {"dx", m.sim_grid.dx}, {"dz", m.sim_grid.dz}};
  j["channel_order"] = m.channel_order;
  j["arrays"] = {
      {"x", {{"file", kXFile}, {"dtype", "float32"}, {"byte_order", "little"}, {"layout", "row-major"},
             {"shape", {m.n_total, 1, m.height, m.width}}}},
      {"y", {{"file", kYFile}, {"dtype", "float32"}, {"byte_order", "little"}, {"layout", "row-major"},
             {"shape", {m.n_total, 3, m.height, m.width}}}}};
  j["config_hash"] = m.config_hash;
  j["config"] = m.config_text;
  if (m.split) {
    j["split"] = {{"train", m.split->train}, {"val", m.split->val}, {"test", m.split->test},
                  {"seed", m.split_seed}};
  } else {
    j["split"] = nullptr;
  }
  json recs = json::array();
  for (const auto& r : m.records) recs.push_back(record_json(r));
  j["records"] = recs;

  const fs::path tmp = dir / (std::string(kManifest) + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw FormatError("dataset: cannot write " + tmp.string());
    out << j.dump(1) << '\n';
    if (!out) throw FormatError("dataset: write failed for " + tmp.string());
  }
  fs::rename(tmp, dir / kManifest);
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw FormatError("dataset: no manifest in " + dir.string());
  DatasetManifest m;
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != "plume-dataset")
      throw FormatError("dataset: not a plume dataset manifest");
    m.version = j.at("version").get<int>();
    if (m.version != kDatasetVersion)
      throw FormatError("dataset: unsupported version " + std::to_string(m.version));
    m.n_total = j.at("counts").at("total").get<int>();
    m.n_leak = j.at("counts").at("leak").get<int>();
    if (j.at("counts").at("no_leak").get<int>() != m.n_total - m.n_leak)
      throw FormatError("dataset: inconsistent leak counts");
    m.leak_fraction = j.at("leak_fraction").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.height = j.at("resolution").at("height").get<int>();
    m.width = j.at("resolution").at("width").get<int>();
    const auto& g = j.at("sim_grid");
    m.sim_grid = Grid2D{g.at("nx").get<int>(), g.at("nz").get<int>(), g.at("dx").get<double>(),
                        g.at("dz").get<double>()};
    m.channel_order = j.at("channel_order").get<std::vector<std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config_text = j.at("config").get<std::string>();
    if (!j.at("split").is_null()) {
      const auto& s = j.at("split");
      m.split = SplitCounts{s.at("train").get<int>(), s.at("val").get<int>(), s.at("test").get<int>()};
      m.split_seed = s.at("seed").get<std::uint64_t>();
    }
    for (const auto& r : j.at("records")) m.records.push_back(record_from(r));
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset: malformed manifest: ") + e.what());
  }
  if (static_cast<int>(m.records.size()) != m.n_total)
    throw FormatError("dataset: manifest lists " + std::to_string(m.records.size()) +
                      " records, expected " + std::to_string(m.n_total));
  int leaks = 0;
  for (int j = 0; j < m.n_total; ++j) {
    if (m.records[j].id != j) throw FormatError("dataset: record ids are not 0..N-1 in order");
    leaks += m.records[j].leak;
  }
  if (leaks != m.n_leak) throw FormatError("dataset: leak flags disagree with counts");
  if (m.channel_order.size() != 3) throw FormatError("dataset: expected three observation channels");
  return m;
}

DatasetManifest generate_dataset(const RunConfig& cfg, const fs::path& dir, int n_total,
                                 double leak_fraction, std::uint64_t seed,
                                 const GenerateOptions& opts) {
  cfg.validate();
  if (n_total < 2) throw InvalidArgument("generate_dataset: n_total must be >= 2");
  if (!(leak_fraction >= 0.0 && leak_fraction <= 1.0))
    throw InvalidArgument("generate_dataset: leak_fraction must lie in [0, 1]");
  const auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  fs::create_directories(dir);

  DatasetManifest m;
  m.n_total = n_total;
  m.leak_fraction = leak_fraction;
  m.seed = seed;
  m.height = cfg.observation.out_nz;
  m.width = cfg.observation.out_nx;
  m.sim_grid = cfg.grid.grid();
  m.channel_order = {"seismic", "well_saturation", "well_pressure"};
  const RunConfig settings = generation_settings(cfg);
  m.config_hash = config_hash(settings);
  m.config_text = dump_config(settings);
  const auto flags = leak_flags(n_total, leak_fraction, derive_seed(seed, 0x6c65616bULL));
  for (int j = 0; j < n_total; ++j) {
    SampleRecord r;
    r.id = j;
    r.seed = derive_seed(seed, 0x1000000ULL + static_cast<std::uint64_t>(j));
    r.leak = flags[j];
    m.n_leak += r.leak;
    m.records.push_back(r);
  }

  const std::size_t xs = m.x_values(), ys = m.y_values();
  const fs::path xp = dir / kXFile, yp = dir / kYFile;
  std::vector<int> todo;
  if (fs::exists(dir / kManifest)) {
    const DatasetManifest old = read_manifest(dir);
    if (old.config_hash != m.config_hash || old.n_total != n_total || old.seed != seed ||
        old.leak_fraction != leak_fraction || old.height != m.height || old.width != m.width)
      throw FormatError("dataset: " + dir.string() +
                        " holds a dataset generated with different settings");
    ensure_size(xp, n_total * xs * sizeof(float));
    ensure_size(yp, n_total * ys * sizeof(float));
    Dataset existing(dir);
    for (int j = 0; j < n_total; ++j) {
      if (old.records[j].ok && existing.verify(j)) {
        m.records[j] = old.records[j];
        m.records[j].split.clear();
      } else {
        todo.push_back(j);
      }
    }
    log("resuming: " + std::to_string(n_total - static_cast<int>(todo.size())) + " of " +
        std::to_string(n_total) + " records already complete");
  } else {
    if (fs::exists(xp)) fs::remove(xp);
    if (fs::exists(yp)) fs::remove(yp);
    ensure_size(xp, n_total * xs * sizeof(float));
    ensure_size(yp, n_total * ys * sizeof(float));
    for (int j = 0; j < n_total; ++j) todo.push_back(j);
  }
  write_manifest(dir, m);

  std::fstream fx(xp, std::ios::in | std::ios::out | std::ios::binary);
  std::fstream fy(yp, std::ios::in | std::ios::out | std::ios::binary);
  if (!fx || !fy) throw FormatError("dataset: cannot open arrays in " + dir.string());

  const auto make = [&](int id) {
    try {
      return generate_sample(cfg, id, m.records[id].leak, m.records[id].seed);
    } catch (const std::exception& e) {
      GeneratedSample g;
      g.record = m.records[id];
      g.record.ok = false;
      g.record.error = e.what();
      return g;
    }
  };
  int done = 0;
  const auto commit = [&](GeneratedSample& g) {
    const int id = g.record.id;
    if (g.record.ok) {
      write_at(fx, id * xs * sizeof(float), to_f32(g.x));
      write_at(fy, id * ys * sizeof(float), pack_y(g.y));
    } else {
      write_at(fx, id * xs * sizeof(float), std::vector<float>(xs, 0.0f));
      write_at(fy, id * ys * sizeof(float), std::vector<float>(ys, 0.0f));
      log("record " + std::to_string(id) + " skipped: " + g.record.error);
    }
    m.records[id] = g.record;
    ++done;
    if (done % opts.flush_every == 0 || done == static_cast<int>(todo.size())) {
      fx.flush();
      fy.flush();
      write_manifest(dir, m);
      log("generated " + std::to_string(done) + "/" + std::to_string(todo.size()));
    }
  };

  const int limit = opts.stop_after >= 0 ? std::min<int>(opts.stop_after, todo.size())
                                         : static_cast<int>(todo.size());
  int workers = opts.workers > 0 ? opts.workers
                                 : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, std::max(limit, 1));
  if (workers <= 1) {
    for (int j = 0; j < limit; ++j) {
      auto g = make(todo[j]);
      commit(g);
    }
  } else {
    std::atomic<int> next{0};
    std::mutex mu;
    std::condition_variable cv;
    std::deque<GeneratedSample> ready;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int j = next++; j < limit; j = next++) {
          auto g = make(todo[j]);
          std::lock_guard<std::mutex> lock(mu);
          ready.push_back(std::move(g));
          cv.notify_one();
        }
      });
    }
    for (int got = 0; got < limit; ++got) {
      std::unique_lock<std::mutex> lock(mu);
      cv.wait(lock, [&] { return !ready.empty(); });
      auto g = std::move(ready.front());
      ready.pop_front();
      lock.unlock();
      commit(g);
    }
    for (auto& t : pool) t.join();
  }
  fx.flush();
  fy.flush();
  write_manifest(dir, m);
  return m;
}

SplitCounts default_split(int n_ok, const DataConfig& data) {
  SplitCounts c;
  c.test = std::min(data.test_count, n_ok / 4);
  const int rest = n_ok - c.test;
  c.val = data.val_count > 0
              ? data.val_count
              : std::max(1, static_cast<int>(std::llround(data.val_fraction * rest)));
  c.train = data.train_count > 0 ? data.train_count : rest - c.val;
  return c;
}

void split_dataset(DatasetManifest& m, const SplitCounts& counts, std::uint64_t seed) {
  if (counts.train < 0 || counts.val < 0 || counts.test < 0)
    throw InvalidArgument("split_dataset: counts must be non-negative");
  std::vector<int> leak, clean;
  for (const auto& r : m.records)
    if (r.ok) (r.leak ? leak : clean).push_back(r.id);
  const int n_ok = static_cast<int>(leak.size() + clean.size());
  if (counts.total() > n_ok)
    throw InvalidArgument("split_dataset: requested " + std::to_string(counts.train) + " + " +
                          std::to_string(counts.val) + " + " + std::to_string(counts.test) +
                          " = " + std::to_string(counts.total()) + " samples but only " +
                          std::to_string(n_ok) + " are available");
  std::mt19937_64 rng(seed);
  std::shuffle(leak.begin(), leak.end(), rng);
  std::shuffle(clean.begin(), clean.end(), rng);
  for (auto& r : m.records) r.split.clear();

  const double frac = n_ok > 0 ? static_cast<double>(leak.size()) / n_ok : 0.0;
  std::size_t li = 0, ci = 0;
  const auto take = [&](int count, const char* name) {
    int nl = static_cast<int>(std::llround(count * frac));
    nl = std::min<int>(nl, static_cast<int>(leak.size() - li));
    int nc = count - nl;
    if (nc > static_cast<int>(clean.size() - ci)) {
      nc = static_cast<int>(clean.size() - ci);
      nl = count - nc;
    }
    for (int j = 0; j < nl; ++j) m.records[leak[li++]].split = name;
    for (int j = 0; j < nc; ++j) m.records[clean[ci++]].split = name;
  };
  take(counts.test, "test");
  take(counts.val, "val");
  take(counts.train, "train");
  m.split = counts;
  m.split_seed = seed;
}

Dataset::Dataset(fs::path dir) : dir_(std::move(dir)), manifest_(read_manifest(dir_)) {
  const auto check = [&](const char* file, std::size_t per) {
    const fs::path p = dir_ / file;
    if (!fs::exists(p)) throw FormatError("dataset: missing " + p.string());
    const auto want = static_cast<std::uintmax_t>(manifest_.n_total) * per * sizeof(float);
    if (fs::file_size(p) != want)
      throw FormatError("dataset: " + p.string() + " has " + std::to_string(fs::file_size(p)) +
                        " bytes, expected " + std::to_string(want));
  };
  check(kXFile, manifest_.x_values());
  check(kYFile, manifest_.y_values());
}

const SampleRecord& Dataset::record(int id) const {
  if (id < 0 || id >= manifest_.n_total)
    throw InvalidArgument("dataset: no record " + std::to_string(id));
  return manifest_.records[id];
}

std::vector<float> Dataset::read(const char* file, std::size_t offset, std::size_t count) const {
  std::ifstream in(dir_ / file, std::ios::binary);
  if (!in) throw FormatError(std::string("dataset: cannot open ") + file);
  std::vector<float> v(count);
  in.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw FormatError(std::string("dataset: short read from ") + file);
  return v;
}

Tensor<float> Dataset::x(int id) const {
  const auto& r = record(id);
  if (!r.ok) throw FormatError("dataset: record " + std::to_string(id) + " is a gap: " + r.error);
  Tensor<float> t(1, manifest_.height, manifest_.width);
  t.v = read(kXFile, id * manifest_.x_values(), manifest_.x_values());
  return t;
}

Tensor<float> Dataset::y(int id) const {
  const auto& r = record(id);
  if (!r.ok) throw FormatError("dataset: record " + std::to_string(id) + " is a gap: " + r.error);
  Tensor<float> t(3, manifest_.height, manifest_.width);
  t.v = read(kYFile, id * manifest_.y_values(), manifest_.y_values());
  return t;
}

bool Dataset::verify(int id) const {
  const auto& r = record(id);
  if (!r.ok) return false;
  return crc_of(read(kXFile, id * manifest_.x_values(), manifest_.x_values())) == r.crc_x &&
         crc_of(read(kYFile, id * manifest_.y_values(), manifest_.y_values())) == r.crc_y;
}

PairSet<float> Dataset::pairs(const std::vector<int>& ids) const {
  PairSet<float> p;
  for (int id : ids) {
    if (!verify(id)) throw FormatError("dataset: checksum mismatch in record " + std::to_string(id));
    p.x.push_back(x(id));
    p.y.push_back(y(id));
  }
  return p;
}

}  // namespace plume
