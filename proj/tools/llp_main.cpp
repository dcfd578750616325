#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "llp/bytes.hpp"
#include "llp/data.hpp"
#include "llp/metrics.hpp"
#include "llp/models.hpp"
#include "llp/orbit.hpp"
#include "llp/synth.hpp"
#include "llp/train.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace llp;

// Every run echoes its fully-resolved configuration (stderr, one line) so
// results can be reproduced from logs alone.
void echo_config(const std::string& verb, const json& config) {
  json line;
  line["command"] = verb;
  line["config"] = config;
  std::cerr << line.dump() << "\n";
}

void emit(const json& result) { std::cout << result.dump(2) << "\n"; }

std::vector<Split> parse_pattern(const std::string& spec) {
  std::vector<Split> pattern;
  std::string token;
  for (char ch : spec + ",") {
    if (ch == ',') {
      if (!token.empty()) pattern.push_back(split_from_name(token));
      token.clear();
    } else {
      token += ch;
    }
  }
  return pattern;
}

json split_counts(const Dataset& ds) {
  json counts;
  for (Split s : {Split::Train, Split::Validation, Split::Test, Split::Unassigned}) {
    int64_t n = 0;
    for (const Chip& chip : ds.chips)
      if (chip.split == s) ++n;
    counts[split_name(s)] = n;
  }
  return counts;
}

void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError("cannot create image: " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()),
            static_cast<std::streamoff>(rgb.size()));
}

json f1_json(const F1Result& f1) {
  json out;
  out["per_class"] = f1.per_class;
  out["included_in_macro"] = f1.included;
  out["macro"] = f1.macro;
  return out;
}

int cmd_synth(const std::string& out_dir, SynthConfig config) {
  Dataset ds = generate_world(config);
  save_dataset(out_dir, ds);
  json result;
  result["dataset"] = out_dir;
  result["chips"] = ds.chips.size();
  result["classes"] = ds.n_classes;
  result["communes"] = ds.communes.entries.size();
  result["pack_bytes"] = std::filesystem::file_size(out_dir + "/chips.llpk");
  emit(result);
  return 0;
}

int cmd_split(const std::string& dir, int band_width, const std::string& pattern_spec) {
  Dataset ds = load_dataset(dir);
  band_split(ds.chips, band_width, parse_pattern(pattern_spec));
  commune_coherent_split(ds.chips);
  save_dataset(dir, ds);
  json result;
  result["dataset"] = dir;
  result["splits"] = split_counts(ds);
  emit(result);
  return 0;
}

int cmd_stats(const std::string& dir) {
  Dataset ds = load_dataset(dir);
  json result;
  result["dataset"] = dir;
  result["scheme"] = ds.scheme_name;
  result["classes"] = ds.class_labels;
  result["chips"] = ds.chips.size();
  result["communes"] = ds.communes.entries.size();
  result["splits"] = split_counts(ds);

  // aggregate class distribution from chips and from communes; on fully
  // labeled single-commune worlds the two agree
  ProportionVector from_chips(ds.n_classes, 0.0);
  int64_t labeled = 0;
  for (const Chip& chip : ds.chips) {
    if (!chip.labels) continue;
    const ProportionVector v = chip_proportions(*chip.labels, ds.n_classes);
    for (size_t c = 0; c < v.size(); ++c) from_chips[c] += v[c];
    ++labeled;
  }
  if (labeled > 0)
    for (double& v : from_chips) v /= static_cast<double>(labeled);
  ProportionVector from_communes(ds.n_classes, 0.0);
  double commune_chips = 0;
  for (const CommuneEntry& e : ds.communes.entries) {
    for (size_t c = 0; c < e.proportions.size(); ++c)
      from_communes[c] += e.proportions[c] * e.chip_count;
    commune_chips += e.chip_count;
  }
  if (commune_chips > 0)
    for (double& v : from_communes) v /= commune_chips;
  double max_diff = 0;
  for (size_t c = 0; c < from_chips.size(); ++c)
    max_diff = std::max(max_diff, std::abs(from_chips[c] - from_communes[c]));
  result["labeled_chips"] = labeled;
  result["class_distribution_from_chips"] = from_chips;
  result["class_distribution_from_communes"] = from_communes;
  result["aggregate_max_abs_diff"] = max_diff;
  emit(result);
  return 0;
}

int cmd_train(const std::string& dir, const std::string& kind_name, int filters,
              int components, TrainConfig config, const std::string& model_path,
              const std::string& log_path) {
  Dataset ds = load_dataset(dir);
  config.kind = model_kind_from_name(kind_name);
  config.hyper = config.kind == ModelKind::Downconv ? filters : components;

  const TrainRun run = train(ds, config);
  save_model(model_path, run.best_model);
  if (!log_path.empty()) write_train_log(log_path, run);

  double mean_cps = 0;
  for (const EpochRecord& r : run.epochs) mean_cps += r.chips_per_sec;
  mean_cps /= static_cast<double>(run.epochs.size());

  json result;
  result["model"] = model_path;
  result["kind"] = kind_name;
  result["parameters"] = run.best_model.parameter_count();
  result["epochs"] = run.epochs.size();
  result["selected_epoch"] = run.selected_epoch;
  result["selected_val_mae"] = run.epochs[static_cast<size_t>(run.selected_epoch - 1)].val_mae;
  result["final_train_loss"] = run.epochs.back().train_loss;
  result["train_chips_per_sec"] = mean_cps;
  if (!log_path.empty()) result["log"] = log_path;
  emit(result);
  return 0;
}

int cmd_eval(const std::string& dir, const std::string& model_path,
             const std::string& split_spec, const std::string& out_dir, int threads) {
  Dataset ds = load_dataset(dir);
  Model<float> model = load_model(model_path);
  const Split split = split_from_name(split_spec);

  const auto t0 = std::chrono::steady_clock::now();
  const EvalReport report = evaluate_model(ds, model, split, threads);
  const double seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - t0).count();

  const ProportionVector baseline_pred = train_mean_target(ds);
  const EvalReport baseline = evaluate_constant(ds, baseline_pred, split);

  std::filesystem::create_directories(out_dir);
  const std::string csv_path = out_dir + "/eval.csv";
  {
    std::ofstream csv(csv_path);
    csv << "chip_id,mae";
    for (int c = 0; c < ds.n_classes; ++c) csv << ",pred_" << c;
    for (int c = 0; c < ds.n_classes; ++c) csv << ",truth_" << c;
    csv << "\n";
    for (size_t k = 0; k < report.chip_ids.size(); ++k) {
      const Chip* chip = nullptr;
      for (const Chip& c : ds.chips)
        if (c.id == report.chip_ids[k]) chip = &c;
      if (!chip) throw ValueError("evaluated chip id missing from dataset");
      const ProportionVector truth = chip_proportions(*chip->labels, ds.n_classes);
      char buf[64];
      csv << report.chip_ids[k];
      std::snprintf(buf, sizeof(buf), ",%.9g", report.chip_mae[k]);
      csv << buf;
      for (double v : report.chip_pred[k]) {
        std::snprintf(buf, sizeof(buf), ",%.9g", v);
        csv << buf;
      }
      for (double v : truth) {
        std::snprintf(buf, sizeof(buf), ",%.9g", v);
        csv << buf;
      }
      csv << "\n";
    }
  }

  json result;
  result["model"] = model_path;
  result["split"] = split_spec;
  result["chips"] = report.chips;
  result["mean_mae"] = report.mean_mae;
  result["f1"] = f1_json(report.f1);
  result["baseline_prediction"] = baseline_pred;
  result["baseline_mean_mae"] = baseline.mean_mae;
  result["mae_vs_baseline"] = report.mean_mae / baseline.mean_mae;
  result["inference_chips_per_sec"] = seconds > 0 ? report.chips / seconds : 0.0;
  result["csv"] = csv_path;

  std::ofstream summary(out_dir + "/summary.json");
  summary << result.dump(2) << "\n";
  emit(result);
  return 0;
}

int cmd_predict(const std::string& dir, const std::string& model_path,
                const std::string& split_spec, const std::string& out_dir, int threads) {
  Dataset ds = load_dataset(dir);
  Model<float> model = load_model(model_path);
  const bool all = split_spec == "all";
  const Split split = all ? Split::Unassigned : split_from_name(split_spec);

  std::vector<size_t> idx;
  for (size_t i = 0; i < ds.chips.size(); ++i)
    if (all || ds.chips[i].split == split) idx.push_back(i);
  if (idx.empty()) throw ValueError("predict: no chips selected by split " + split_spec);

  std::vector<ProportionVector> preds(idx.size());
  std::atomic<size_t> cursor{0};
  auto worker = [&] {
    for (;;) {
      const size_t k = cursor.fetch_add(1);
      if (k >= idx.size()) return;
      const ChipPrediction<float> p = model.forward(ds.chips[idx[k]].image<float>());
      preds[k].assign(p.proportions.data(), p.proportions.data() + p.proportions.numel());
    }
  };
  {
    std::vector<std::thread> pool;
    for (int w = 0; w < std::max(1, threads); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::filesystem::create_directories(out_dir);
  const std::string csv_path = out_dir + "/predictions.csv";
  {
    std::ofstream csv(csv_path);
    csv << "chip_id";
    for (int c = 0; c < ds.n_classes; ++c) csv << ",pred_" << c;
    csv << "\n";
    char buf[64];
    for (size_t k = 0; k < idx.size(); ++k) {
      csv << ds.chips[idx[k]].id;
      for (double v : preds[k]) {
        std::snprintf(buf, sizeof(buf), ",%.9g", v);
        csv << buf;
      }
      csv << "\n";
    }
  }

  // One flat grayscale raster per class over the chip grid.
  int32_t min_x = ds.chips[idx[0]].grid_x, max_x = min_x;
  int32_t min_y = ds.chips[idx[0]].grid_y, max_y = min_y;
  for (size_t k : idx) {
    min_x = std::min(min_x, ds.chips[k].grid_x);
    max_x = std::max(max_x, ds.chips[k].grid_x);
    min_y = std::min(min_y, ds.chips[k].grid_y);
    max_y = std::max(max_y, ds.chips[k].grid_y);
  }
  const int width = max_x - min_x + 1;
  const int height = max_y - min_y + 1;
  std::vector<std::string> rasters;
  for (int c = 0; c < ds.n_classes; ++c) {
    std::vector<uint8_t> rgb(static_cast<size_t>(width) * height * 3, 0);
    for (size_t k = 0; k < idx.size(); ++k) {
      const Chip& chip = ds.chips[idx[k]];
      const size_t px = (static_cast<size_t>(chip.grid_y - min_y) * width +
                         static_cast<size_t>(chip.grid_x - min_x)) * 3;
      const uint8_t v = static_cast<uint8_t>(
          std::lround(std::clamp(preds[k][static_cast<size_t>(c)], 0.0, 1.0) * 255.0));
      rgb[px] = rgb[px + 1] = rgb[px + 2] = v;
    }
    const std::string path = out_dir + "/proportions_class" + std::to_string(c) + ".ppm";
    write_ppm(path, width, height, rgb);
    rasters.push_back(path);
  }

  json result;
  result["chips"] = idx.size();
  result["csv"] = csv_path;
  result["rasters"] = rasters;
  result["grid"] = {{"width", width}, {"height", height}};
  emit(result);
  return 0;
}

int cmd_model_info(const std::string& model_path) {
  Model<float> model = load_model(model_path);
  json result;
  result["file"] = model_path;
  result["kind"] = model_kind_name(model.kind());
  result["classes"] = model.classes();
  result[model.kind() == ModelKind::Downconv ? "filters" : "components"] = model.hyper();
  result["parameters"] = model.parameter_count();
  result["file_bytes"] = std::filesystem::file_size(model_path);
  result["grid_side"] = model.grid_side();
  emit(result);
  return 0;
}

int cmd_footprint(int64_t classes, int64_t communes, int64_t chips) {
  const FootprintReport r = footprint(classes, communes, chips);
  json result;
  result["classes"] = classes;
  result["communes"] = communes;
  result["chips"] = chips;
  result["proportions_bytes"] = r.proportions_bytes;
  result["proportions_human"] = r.proportions_human;
  result["segmentation_bytes"] = r.segmentation_bytes;
  result["segmentation_human"] = r.segmentation_human;
  emit(result);
  return 0;
}

int cmd_volumetry(double swath, double circumference, double land_fraction,
                  double orbit_minutes, double train_cps, double infer_cps) {
  const VolumetryReport r = volumetry(swath, circumference, land_fraction, orbit_minutes);
  json result;
  result["swath_km"] = r.swath_km;
  result["circumference_km"] = r.circumference_km;
  result["land_fraction"] = r.land_fraction;
  result["orbit_minutes"] = r.orbit_minutes;
  result["km2_per_orbit"] = r.km2_per_orbit;
  result["land_km2_per_orbit"] = r.land_km2_per_orbit;
  result["land_km2_per_min"] = r.land_km2_per_min;
  if (train_cps > 0) {
    const ThroughputReport t = throughput_report(train_cps, r, infer_cps);
    json tj;
    tj["train_chips_per_sec"] = t.train_chips_per_sec;
    tj["train_vs_acquisition_ratio"] = t.ratio;
    if (t.infer_train_time_ratio >= 0)
      tj["infer_train_time_ratio"] = t.infer_train_time_ratio;
    result["throughput"] = tj;
  }
  emit(result);
  return 0;
}

int cmd_uplink_encode(const std::string& dir, const std::string& out_path) {
  Dataset ds = load_dataset(dir);
  std::vector<std::pair<uint32_t, ProportionVector>> communes;
  for (const CommuneEntry& e : ds.communes.entries) communes.emplace_back(e.id, e.proportions);
  const std::vector<uint8_t> bytes = uplink_encode(communes, ds.n_classes);
  write_file(out_path, bytes);
  json result;
  result["packet"] = out_path;
  result["communes"] = communes.size();
  result["classes"] = ds.n_classes;
  result["total_bytes"] = bytes.size();
  result["payload_bytes"] = uplink_payload_bytes(ds.n_classes,
                                                 static_cast<int64_t>(communes.size()));
  emit(result);
  return 0;
}

int cmd_uplink_decode(const std::string& in_path) {
  const auto communes = uplink_decode(read_file(in_path));
  json result;
  result["packet"] = in_path;
  result["communes"] = json::array();
  for (const auto& [id, props] : communes)
    result["communes"].push_back({{"id", id}, {"proportions", props}});
  emit(result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tiny-model learning from label proportions over image chips"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a deterministic synthetic world");
  std::string synth_out;
  SynthConfig synth_config;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--seed", synth_config.seed, "World seed");
  synth->add_option("--width", synth_config.world_chips_x, "World width in chips");
  synth->add_option("--height", synth_config.world_chips_y, "World height in chips");
  synth->add_option("--classes", synth_config.n_classes, "Class count");
  synth->add_option("--communes", synth_config.commune_count, "Commune count");
  synth->add_option("--octaves", synth_config.noise_octaves, "Value-noise octaves");
  synth->add_option("--noise-amp", synth_config.pixel_noise_amp, "Pixel noise amplitude");
  synth->add_option("--thresholds", synth_config.class_thresholds,
                    "Class thresholds in (0,1)");

  // split
  auto* split = app.add_subcommand("split", "Assign commune-coherent geographic splits");
  std::string split_dir, split_pattern = "train,test,train,validation,train";
  int band_width = 15;
  split->add_option("--data", split_dir, "Dataset directory")->required();
  split->add_option("--band-width", band_width, "Band width in km");
  split->add_option("--pattern", split_pattern, "Comma-separated split cycle");

  // stats
  auto* stats = app.add_subcommand("stats", "Describe a dataset");
  std::string stats_dir;
  stats->add_option("--data", stats_dir, "Dataset directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from commune proportions");
  std::string train_dir, train_kind = "downconv", train_out = "model.llpm", train_log;
  int train_filters = 96, train_components = 64;
  TrainConfig train_config;
  train_cmd->add_option("--data", train_dir, "Dataset directory")->required();
  train_cmd->add_option("--model", train_kind, "Model kind: downconv or qkm");
  train_cmd->add_option("--filters", train_filters, "downconv filter count");
  train_cmd->add_option("--components", train_components, "qkm mixture components");
  train_cmd->add_option("--epochs", train_config.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", train_config.batch_size, "Chips per batch");
  train_cmd->add_option("--lr", train_config.learning_rate, "Adam learning rate");
  train_cmd->add_option("--seed", train_config.seed, "Training seed");
  train_cmd->add_option("--threads", train_config.threads, "Worker threads");
  train_cmd->add_option("--out", train_out, "Output model file");
  train_cmd->add_option("--log", train_log, "Per-epoch CSV log");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a split");
  std::string eval_dir, eval_model, eval_split = "test", eval_out = "eval_out";
  int eval_threads = 1;
  eval_cmd->add_option("--data", eval_dir, "Dataset directory")->required();
  eval_cmd->add_option("--model", eval_model, "Model file")->required();
  eval_cmd->add_option("--split", eval_split, "Split to evaluate");
  eval_cmd->add_option("--out-dir", eval_out, "Report directory");
  eval_cmd->add_option("--threads", eval_threads, "Worker threads");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Emit proportion maps and CSV");
  std::string pred_dir, pred_model, pred_split = "all", pred_out = "predict_out";
  int pred_threads = 1;
  predict_cmd->add_option("--data", pred_dir, "Dataset directory")->required();
  predict_cmd->add_option("--model", pred_model, "Model file")->required();
  predict_cmd->add_option("--split", pred_split, "Split to predict (or all)");
  predict_cmd->add_option("--out-dir", pred_out, "Output directory");
  predict_cmd->add_option("--threads", pred_threads, "Worker threads");

  // model-info
  auto* info = app.add_subcommand("model-info", "Describe a model file");
  std::string info_model;
  info->add_option("--model", info_model, "Model file")->required();

  // footprint
  auto* fp = app.add_subcommand("footprint", "Label-set storage footprints");
  int64_t fp_classes = 5, fp_communes = 0, fp_chips = 0;
  fp->add_option("--classes", fp_classes, "Class count");
  fp->add_option("--communes", fp_communes, "Commune count");
  fp->add_option("--chips", fp_chips, "Chip count (1 km2 each)");

  // volumetry
  auto* vol = app.add_subcommand("volumetry", "Orbit coverage arithmetic");
  double vol_swath = 290, vol_circ = 40000, vol_land = 0.299, vol_minutes = 100;
  double vol_train_cps = 0, vol_infer_cps = 0;
  vol->add_option("--swath", vol_swath, "Swath width in km");
  vol->add_option("--circumference", vol_circ, "Orbit ground track length in km");
  vol->add_option("--land-fraction", vol_land, "Fraction of land under the track");
  vol->add_option("--orbit-minutes", vol_minutes, "Minutes per orbit");
  vol->add_option("--train-chips-per-sec", vol_train_cps,
                  "Measured training throughput for the feasibility ratio");
  vol->add_option("--infer-chips-per-sec", vol_infer_cps,
                  "Measured inference throughput");

  // uplink
  auto* uplink = app.add_subcommand("uplink", "Encode or decode proportion packets");
  uplink->require_subcommand(1);
  auto* up_enc = uplink->add_subcommand("encode", "Dataset commune table -> packet");
  std::string up_enc_dir, up_enc_out = "communes.llpu";
  up_enc->add_option("--data", up_enc_dir, "Dataset directory")->required();
  up_enc->add_option("--out", up_enc_out, "Output packet file");
  auto* up_dec = uplink->add_subcommand("decode", "Packet -> JSON");
  std::string up_dec_in;
  up_dec->add_option("--in", up_dec_in, "Packet file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      echo_config("synth", {{"out", synth_out},
                            {"seed", synth_config.seed},
                            {"width", synth_config.world_chips_x},
                            {"height", synth_config.world_chips_y},
                            {"classes", synth_config.n_classes},
                            {"communes", synth_config.commune_count},
                            {"octaves", synth_config.noise_octaves},
                            {"noise_amp", synth_config.pixel_noise_amp},
                            {"thresholds", synth_config.class_thresholds}});
      return cmd_synth(synth_out, synth_config);
    }
    if (*split) {
      echo_config("split", {{"data", split_dir},
                            {"band_width", band_width},
                            {"pattern", split_pattern}});
      return cmd_split(split_dir, band_width, split_pattern);
    }
    if (*stats) {
      echo_config("stats", {{"data", stats_dir}});
      return cmd_stats(stats_dir);
    }
    if (*train_cmd) {
      echo_config("train", {{"data", train_dir},
                            {"model", train_kind},
                            {"filters", train_filters},
                            {"components", train_components},
                            {"epochs", train_config.epochs},
                            {"batch_size", train_config.batch_size},
                            {"lr", train_config.learning_rate},
                            {"seed", train_config.seed},
                            {"threads", train_config.threads},
                            {"out", train_out},
                            {"log", train_log}});
      return cmd_train(train_dir, train_kind, train_filters, train_components, train_config,
                       train_out, train_log);
    }
    if (*eval_cmd) {
      echo_config("eval", {{"data", eval_dir},
                           {"model", eval_model},
                           {"split", eval_split},
                           {"out_dir", eval_out},
                           {"threads", eval_threads}});
      return cmd_eval(eval_dir, eval_model, eval_split, eval_out, eval_threads);
    }
    if (*predict_cmd) {
      echo_config("predict", {{"data", pred_dir},
                              {"model", pred_model},
                              {"split", pred_split},
                              {"out_dir", pred_out},
                              {"threads", pred_threads}});
      return cmd_predict(pred_dir, pred_model, pred_split, pred_out, pred_threads);
    }
    if (*info) {
      echo_config("model-info", {{"model", info_model}});
      return cmd_model_info(info_model);
    }
    if (*fp) {
      echo_config("footprint",
                  {{"classes", fp_classes}, {"communes", fp_communes}, {"chips", fp_chips}});
      return cmd_footprint(fp_classes, fp_communes, fp_chips);
    }
    if (*vol) {
      echo_config("volumetry", {{"swath", vol_swath},
                                {"circumference", vol_circ},
                                {"land_fraction", vol_land},
                                {"orbit_minutes", vol_minutes},
                                {"train_chips_per_sec", vol_train_cps},
                                {"infer_chips_per_sec", vol_infer_cps}});
      return cmd_volumetry(vol_swath, vol_circ, vol_land, vol_minutes, vol_train_cps,
                           vol_infer_cps);
    }
    if (*uplink) {
      if (*up_enc) {
        echo_config("uplink encode", {{"data", up_enc_dir}, {"out", up_enc_out}});
        return cmd_uplink_encode(up_enc_dir, up_enc_out);
      }
      echo_config("uplink decode", {{"in", up_dec_in}});
      return cmd_uplink_decode(up_dec_in);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
