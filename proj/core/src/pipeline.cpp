#include "plume/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "plume/checkpoint.hpp"
#include "plume/error.hpp"
#include "plume/image.hpp"
#include "plume/seed.hpp"

namespace plume {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Field2D x_field(const Tensor<float>& x) {
  Field2D f(x.w, x.h);
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = x.v[j];
  return f;
}

std::string plane_name(int id, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%06d_%s.f32", id, what);
  return buf;
}

void say(const LogFn& log, const std::string& s) {
  if (log) log(s);
}

}  // namespace

void write_plane(const fs::path& path, const Field2D& f) {
  std::vector<float> v(f.raw().begin(), f.raw().end());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
  if (!out) throw FormatError("cannot write " + path.string());
}

Field2D read_plane(const fs::path& path, int nx, int nz) {
  std::ifstream in(path, std::ios::binary);
  std::vector<float> v(static_cast<std::size_t>(nx) * nz);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
  if (!in) throw FormatError("cannot read " + path.string());
  Field2D f(nx, nz);
  for (std::size_t j = 0; j < v.size(); ++j) f[j] = v[j];
  return f;
}

void ensure_split(Dataset& ds, const RunConfig& cfg) {
  if (ds.manifest().split) return;
  int n_ok = 0;
  for (const auto& r : ds.manifest().records) n_ok += r.ok;
  split_dataset(ds.manifest(), default_split(n_ok, cfg.data), derive_seed(cfg.data.seed, 0x73706c));
  ds.save_manifest();
}

TrainRun run_training(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_dir,
                      const LogFn& log) {
  cfg.validate();
  Dataset ds(dataset_dir);
  const auto& man = ds.manifest();
  if (man.height != cfg.model.height || man.width != cfg.model.width)
    throw InvalidArgument("train: dataset resolution " + std::to_string(man.height) + "x" +
                          std::to_string(man.width) + " differs from the model resolution");
  ensure_split(ds, cfg);
  const auto train_set = ds.pairs(ds.manifest().ids_in("train"));
  const auto val_set = ds.pairs(ds.manifest().ids_in("val"));
  say(log, "training on " + std::to_string(train_set.size()) + " pairs, validating on " +
               std::to_string(val_set.size()));

  fs::create_directories(out_dir);
  TrainRun run;
  run.checkpoint = out_dir / "model.ckpt";
  run.loss_csv = out_dir / "loss.csv";

  FlowModel<float> model(cfg.model);
  TrainHooks<float> hooks;
  hooks.on_best = [&](const FlowModel<float>& m, const EpochRecord& rec) {
    json extra{{"epoch", rec.epoch},
               {"val_loss", rec.val_loss},
               {"config_hash", config_hash(cfg)},
               {"dataset_config_hash", man.config_hash}};
    save_checkpoint(run.checkpoint, m, extra.dump());
  };
  std::vector<EpochRecord> history;
  hooks.on_epoch = [&](const EpochRecord& rec) {
    history.push_back(rec);
    write_loss_csv(run.loss_csv.string(), history);
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d  train %.4f  val %.4f  (%.0f s)", rec.epoch,
                  rec.train_loss, rec.val_loss, rec.seconds);
    say(log, buf);
  };
  run.result = train(model, train_set, val_set, cfg.training, hooks);
  write_loss_csv(run.loss_csv.string(), run.result.history);

  json summary{{"config", dump_config(cfg)},
               {"config_hash", config_hash(cfg)},
               {"dataset", fs::absolute(dataset_dir).string()},
               {"train_count", train_set.size()},
               {"val_count", val_set.size()},
               {"best_epoch", run.result.best_epoch},
               {"best_val_loss", run.result.best_val_loss},
               {"early_stopped", run.result.early_stopped}};
  std::ofstream(out_dir / "run.json") << summary.dump(1) << '\n';
  return run;
}

InferenceRun run_inference(const RunConfig& cfg, const fs::path& dataset_dir,
                           const fs::path& checkpoint, const fs::path& out_dir,
                           std::optional<int> id, const std::string& split, const LogFn& log) {
  cfg.posterior.validate();
  Dataset ds(dataset_dir);
  ensure_split(ds, cfg);
  const auto& man = ds.manifest();
  const FlowModel<float> model = load_checkpoint<float>(checkpoint);
  if (model.config().height != man.height || model.config().width != man.width)
    throw InvalidArgument("infer: checkpoint resolution differs from the dataset");
  const auto& pc = cfg.posterior;
  const auto ensemble = [&](int rid) {
    return sample_posterior(model, ds.y(rid), pc.samples, derive_seed(pc.seed, rid), pc);
  };

  InferenceRun run;
  run.tau = pc.leak_tau;
  if (pc.recalibrate_tau) {
    std::vector<double> leak_scores, clean_scores;
    for (int vid : man.ids_in("val")) {
      const auto ens = ensemble(vid);
      const auto& rec = ds.record(vid);
      (rec.leak ? leak_scores : clean_scores).push_back(classify_leak(ens.mean, rec.seal_top, pc.leak_tau).score);
    }
    run.tau = calibrate_leak_tau(leak_scores, clean_scores, pc.leak_tau);
    say(log, "leak threshold recalibrated on " +
                 std::to_string(leak_scores.size() + clean_scores.size()) +
                 " validation samples: tau = " + std::to_string(run.tau));
  }

  std::vector<int> ids;
  if (id) {
    ds.record(*id);
    ids.push_back(*id);
  } else {
    ids = man.ids_in(split);
    if (ids.empty()) throw InvalidArgument("infer: split '" + split + "' is empty");
  }
  fs::create_directories(out_dir / "samples");
  for (int rid : ids) {
    if (!ds.verify(rid)) throw FormatError("infer: checksum mismatch in record " + std::to_string(rid));
    const auto& rec = ds.record(rid);
    const auto ens = ensemble(rid);
    const Field2D truth = x_field(ds.x(rid));
    const auto r = evaluate(ens, truth, rec.seal_top, run.tau, rid, rec.leak);
    write_plane(out_dir / "samples" / plane_name(rid, "mean"), ens.mean);
    write_plane(out_dir / "samples" / plane_name(rid, "std"), ens.std);
    write_plane(out_dir / "samples" / plane_name(rid, "nstd"), ens.normalized_std);
    run.reports.push_back(r);
    say(log, eval_csv_row(r));
  }
  for (const auto& r : run.reports) {
    run.mean_ssim += r.ssim;
    run.mean_rmse += r.rmse;
    run.mean_corr += r.uncertainty_error_corr;
    run.false_positives += r.leak_decision && !r.truth_leak;
    run.false_negatives += !r.leak_decision && r.truth_leak;
  }
  const double n = static_cast<double>(run.reports.size());
  run.mean_ssim /= n;
  run.mean_rmse /= n;
  run.mean_corr /= n;
  write_eval_csv((out_dir / "eval.csv").string(), run.reports);
  json summary{{"checkpoint", fs::absolute(checkpoint).string()},
               {"samples", pc.samples},
               {"tau", run.tau},
               {"count", run.reports.size()},
               {"mean_ssim", run.mean_ssim},
               {"mean_rmse", run.mean_rmse},
               {"mean_uncertainty_error_corr", run.mean_corr},
               {"false_positives", run.false_positives},
               {"false_negatives", run.false_negatives}};
  std::ofstream(out_dir / "summary.json") << summary.dump(1) << '\n';
  return run;
}

void run_report(const fs::path& dataset_dir, const fs::path& infer_dir, const fs::path& out_dir,
                const LogFn& log) {
  const Dataset ds(dataset_dir);
  const int nx = ds.manifest().width, nz = ds.manifest().height;
  std::ifstream in(infer_dir / "eval.csv");
  if (!in) throw FormatError("report: no eval.csv in " + infer_dir.string());
  std::string line;
  std::getline(in, line);
  if (line != eval_csv_header()) throw FormatError("report: unexpected eval.csv header");
  fs::create_directories(out_dir);
  std::ofstream summary(out_dir / "report_summary.csv");
  summary << "id,truth_leak,leak_decision,ssim,rmse,max_abs_error,mean_normalized_std,png\n";
  const int scale = std::max(1, 256 / std::max(nx, nz));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw FormatError("report: malformed eval.csv row: " + line);
    const int rid = std::stoi(cells[0]);
    const Field2D truth = x_field(ds.x(rid));
    const Field2D mean = read_plane(infer_dir / "samples" / plane_name(rid, "mean"), nx, nz);
    const Field2D nstd = read_plane(infer_dir / "samples" / plane_name(rid, "nstd"), nx, nz);
    Field2D err(nx, nz);
    double max_err = 0.0, mean_nstd = 0.0;
    for (std::size_t j = 0; j < err.size(); ++j) {
      err[j] = std::abs(mean[j] - truth[j]);
      max_err = std::max(max_err, err[j]);
      mean_nstd += nstd[j];
    }
    mean_nstd /= static_cast<double>(err.size());
    double nstd_hi = 0.0;
    for (double v : nstd.raw()) nstd_hi = std::max(nstd_hi, v);
    const auto png = hstack({colorize(truth, 0.0, 1.0, scale), colorize(mean, 0.0, 1.0, scale),
                             colorize(err, 0.0, 1.0, scale), colorize(nstd, 0.0, nstd_hi, scale)});
    char name[64];
    std::snprintf(name, sizeof name, "sample_%06d.png", rid);
    write_png(out_dir / name, png);
    summary << rid << ',' << cells[1] << ',' << cells[4] << ',' << cells[2] << ',' << cells[3]
            << ',' << max_err << ',' << mean_nstd << ',' << name << '\n';
    say(log, std::string("wrote ") + name);
  }
}

}  // namespace plume
