#include "dpq/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dpq/audio_io.hpp"
#include "dpq/noise_lab.hpp"
#include "dpq/quality_loss.hpp"
#include "dpq/training.hpp"

namespace dpq {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// Builds a directory under a staging name and renames it into place on
/// commit, so a failed run leaves no partial output.
class StagedDir {
 public:
  explicit StagedDir(const std::string& final_path)
      : final_(final_path), staging_(final_path + ".staging") {
    if (fs::exists(final_)) {
      throw Error(ErrorKind::IoError, "output path already exists: " + final_path);
    }
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }

  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& dir() const { return staging_; }

  void commit() {
    std::error_code ec;
    fs::rename(staging_, final_, ec);
    if (ec) {
      throw Error(ErrorKind::IoError, "rename to " + final_.string() + ": " + ec.message());
    }
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path staging_;
  bool committed_ = false;
};

std::vector<std::pair<std::string, AudioBuffer>> read_corpus_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorKind::NotFound, "corpus directory " + dir);
  }
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) {
    throw Error(ErrorKind::EmptyCorpus, "no .wav files in " + dir);
  }
  std::vector<std::pair<std::string, AudioBuffer>> files;
  files.reserve(paths.size());
  for (const fs::path& p : paths) {
    files.emplace_back(p.stem().string(), read_wav(p.string()));
  }
  return files;
}

struct ManifestRow {
  std::string clean;
  std::string degraded;
  std::string file_id;
  int segment_index = 0;
  double snr_db = 0.0;
};

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ManifestRow row;
      row.clean = j.at("clean").get<std::string>();
      row.degraded = j.at("degraded").get<std::string>();
      row.file_id = j.at("file_id").get<std::string>();
      row.segment_index = j.at("segment_index").get<int>();
      row.snr_db = j.at("snr_db").get<double>();
      rows.push_back(std::move(row));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

// ---- subcommand bodies ------------------------------------------------

void cmd_gen_noise(const std::string& corpus_dir, const std::string& out_path,
                   double duration_s, uint64_t seed) {
  const auto files = read_corpus_dir(corpus_dir);
  AudioBuffer concat;
  for (const auto& [id, buf] : files) {
    concat.samples.insert(concat.samples.end(), buf.samples.begin(), buf.samples.end());
  }
  const size_t out_len = static_cast<size_t>(std::llround(duration_s * kSampleRateHz));
  const AudioBuffer noise = make_ssn(concat, out_len, seed);
  const std::string tmp = out_path + ".tmp";
  write_wav(tmp, noise);
  fs::rename(tmp, out_path);
}

void cmd_degrade(const std::string& corpus_dir, const std::string& out_dir, int frame,
                 const std::vector<double>& snrs, uint64_t seed, std::ostream& out) {
  const auto files = read_corpus_dir(corpus_dir);
  const DegradedPairSet set = degrade_corpus(files, snrs, frame, seed);

  StagedDir staged(out_dir);
  std::string manifest;
  for (const DegradedPair& pair : set.pairs) {
    const std::string stem = pair.file_id + "_" + std::to_string(pair.segment_index);
    const std::string clean_name = stem + "_clean.wav";
    const std::string deg_name = stem + "_deg.wav";
    AudioBuffer cb, db;
    cb.samples = pair.clean;
    db.samples = pair.degraded;
    write_wav((staged.dir() / clean_name).string(), cb);
    write_wav((staged.dir() / deg_name).string(), db);

    ordered_json j;
    j["clean"] = clean_name;
    j["degraded"] = deg_name;
    j["file_id"] = pair.file_id;
    j["segment_index"] = pair.segment_index;
    j["snr_db"] = pair.snr_db;
    manifest += j.dump();
    manifest += '\n';
  }
  {
    std::ofstream f(staged.dir() / "manifest.jsonl", std::ios::trunc);
    if (!f) throw Error(ErrorKind::IoError, "cannot write manifest");
    f << manifest;
  }
  staged.commit();
  out << "pairs=" << set.pairs.size() << "\n";
}

void cmd_build_dataset(const std::string& pairs_dir, const std::string& labels_arg,
                       const std::string& out_dir, double val_fraction, uint64_t seed,
                       std::ostream& out) {
  const auto manifest = read_manifest((fs::path(pairs_dir) / "manifest.jsonl").string());
  if (manifest.empty()) {
    throw Error(ErrorKind::EmptyDataset, "manifest lists no pairs");
  }

  DegradedPairSet set;
  std::vector<std::string> clean_paths, degraded_paths;
  for (const ManifestRow& row : manifest) {
    DegradedPair pair;
    const std::string clean_path = fs::absolute(fs::path(pairs_dir) / row.clean).string();
    const std::string deg_path = fs::absolute(fs::path(pairs_dir) / row.degraded).string();
    pair.clean = read_wav(clean_path).samples;
    pair.degraded = read_wav(deg_path).samples;
    pair.file_id = row.file_id;
    pair.segment_index = row.segment_index;
    pair.snr_db = row.snr_db;
    set.pairs.push_back(std::move(pair));
    clean_paths.push_back(clean_path);
    degraded_paths.push_back(deg_path);
  }

  std::vector<LabelRecord> labels;
  const bool proxy = labels_arg == "proxy";
  if (!proxy) labels = load_labels(labels_arg);

  // Speaker inventory: label speakers, or source file ids in proxy mode.
  std::set<std::string> names;
  if (proxy) {
    for (const ManifestRow& row : manifest) names.insert(row.file_id);
  } else {
    for (const LabelRecord& rec : labels) names.insert(rec.speaker);
  }
  std::map<std::string, int> speaker_map;
  std::vector<std::string> speaker_names(names.begin(), names.end());
  for (size_t i = 0; i < speaker_names.size(); ++i) {
    speaker_map[speaker_names[i]] = static_cast<int>(i);
  }

  const DatasetSplit split =
      assemble_dataset(set, proxy ? nullptr : &labels, speaker_map, val_fraction, seed);

  auto to_records = [&](const std::vector<SegmentPair>& sps,
                        const std::vector<size_t>& sources) {
    std::vector<LabelRecord> records;
    for (size_t i = 0; i < sps.size(); ++i) {
      LabelRecord rec;
      const size_t src = sources[i];
      rec.clean = clean_paths[src];
      rec.degraded = degraded_paths[src];
      rec.speaker = speaker_names[sps[i].speaker];
      rec.segment_index = set.pairs[src].segment_index;
      rec.score = sps[i].score;
      records.push_back(std::move(rec));
    }
    return records;
  };

  StagedDir staged(out_dir);
  save_labels((staged.dir() / "train.jsonl").string(), to_records(split.train, split.train_source));
  save_labels((staged.dir() / "val.jsonl").string(), to_records(split.val, split.val_source));
  {
    ordered_json j;
    j["speakers"] = speaker_names;
    std::ofstream f(staged.dir() / "speakers.json", std::ios::trunc);
    if (!f) throw Error(ErrorKind::IoError, "cannot write speakers.json");
    f << j.dump(2) << "\n";
  }
  staged.commit();
  out << "train=" << split.train.size() << "\n";
  out << "val=" << split.val.size() << "\n";
}

struct LoadedDataset {
  std::vector<SegmentPair> train;
  std::vector<SegmentPair> val;
  std::vector<std::string> speakers;
  int frame_len = 0;
};

LoadedDataset load_dataset_dir(const std::string& dir) {
  LoadedDataset ds;
  {
    std::ifstream f(fs::path(dir) / "speakers.json");
    if (!f) throw Error(ErrorKind::NotFound, dir + "/speakers.json");
    try {
      json j;
      f >> j;
      ds.speakers = j.at("speakers").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, std::string("speakers.json: ") + e.what());
    }
  }
  std::map<std::string, int> index;
  for (size_t i = 0; i < ds.speakers.size(); ++i) {
    index[ds.speakers[i]] = static_cast<int>(i);
  }

  auto load_split = [&](const std::string& name, std::vector<SegmentPair>* dst) {
    const auto records = load_labels((fs::path(dir) / name).string());
    for (const LabelRecord& rec : records) {
      SegmentPair sp;
      sp.clean = read_wav(rec.clean).samples;
      sp.degraded = read_wav(rec.degraded).samples;
      auto it = index.find(rec.speaker);
      if (it == index.end()) throw Error(ErrorKind::UnknownSpeaker, rec.speaker);
      sp.speaker = it->second;
      sp.score = rec.score;
      if (ds.frame_len == 0) ds.frame_len = static_cast<int>(sp.clean.size());
      if (static_cast<int>(sp.clean.size()) != ds.frame_len ||
          sp.degraded.size() != sp.clean.size()) {
        throw Error(ErrorKind::ShapeMismatch, "inconsistent frame lengths in dataset");
      }
      dst->push_back(std::move(sp));
    }
  };
  load_split("train.jsonl", &ds.train);
  load_split("val.jsonl", &ds.val);
  return ds;
}

struct TrainCliConfig {
  ModelConfig model;
  TrainConfig tc;
};

/// --config JSON mirrors TrainConfig/ModelConfig field names; flags given on
/// the command line override file values.
TrainCliConfig parse_train_config(const std::string& config_path) {
  TrainCliConfig out;
  if (config_path.empty()) return out;
  std::ifstream f(config_path);
  if (!f) throw Error(ErrorKind::NotFound, config_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, config_path + ": " + e.what());
  }
  auto get_int = [&](const char* key, int* dst) {
    if (j.contains(key)) *dst = j.at(key).get<int>();
  };
  auto get_double = [&](const char* key, double* dst) {
    if (j.contains(key)) *dst = j.at(key).get<double>();
  };
  get_int("kernel_size", &out.model.kernel_size);
  get_int("dilation_cycles", &out.model.dilation_cycles);
  get_int("max_dilation_log2", &out.model.max_dilation_log2);
  get_int("residual_channels", &out.model.residual_channels);
  get_int("skip_channels", &out.model.skip_channels);
  get_int("speaker_embed_dim", &out.model.speaker_embed_dim);
  get_double("learning_rate", &out.tc.learning_rate);
  get_double("beta1", &out.tc.beta1);
  get_double("beta2", &out.tc.beta2);
  get_double("eps", &out.tc.eps);
  get_int("batch_size", &out.tc.batch_size);
  get_double("val_fraction", &out.tc.val_fraction);
  return out;
}

void cmd_train(const std::string& dataset_dir, int steps, uint64_t seed,
               const std::string& out_path, const std::string& config_path,
               double lr_flag, int batch_flag, std::ostream& out) {
  TrainCliConfig cfg = parse_train_config(config_path);
  cfg.tc.steps = steps;
  cfg.tc.seed = seed;
  if (lr_flag > 0.0) cfg.tc.learning_rate = lr_flag;
  if (batch_flag > 0) cfg.tc.batch_size = batch_flag;

  LoadedDataset ds = load_dataset_dir(dataset_dir);
  if (ds.train.empty()) throw Error(ErrorKind::EmptyDataset, "train split is empty");
  cfg.model.frame_len = ds.frame_len;
  cfg.model.speaker_count = static_cast<int>(ds.speakers.size());

  Model model = Model::build(cfg.model, seed);
  model.set_speaker_names(ds.speakers);

  const auto history = train(model, ds.train, ds.val, cfg.tc);
  for (const HistoryEntry& h : history) {
    out << "step=" << h.step << " train_loss=" << fmt(h.train_loss)
        << " val_loss=" << fmt(h.val_loss) << "\n";
  }
  save_checkpoint(model, out_path);
  out << "checkpoint=" << out_path << "\n";
}

void cmd_predict(const std::string& ckpt, const std::string& clean_path,
                 const std::string& degraded_path, const std::string& speaker,
                 std::ostream& out) {
  const Model model = load_checkpoint(ckpt);
  const int frame_len = model.config().frame_len;
  const AudioBuffer clean = read_wav(clean_path);
  const AudioBuffer degraded = read_wav(degraded_path);
  if (static_cast<int>(clean.samples.size()) < frame_len ||
      static_cast<int>(degraded.samples.size()) < frame_len) {
    throw Error(ErrorKind::InputTooShort,
                "inputs must hold at least " + std::to_string(frame_len) + " samples");
  }
  const int idx = model.speaker_index(speaker);
  const double score =
      model.forward(std::span(clean.samples.data(), frame_len),
                    std::span(degraded.samples.data(), frame_len), idx);
  out << "score=" << fmt(score) << "\n";
}

void cmd_eval(const std::string& ckpt, const std::string& dataset_dir, std::ostream& out) {
  const Model model = load_checkpoint(ckpt);
  LoadedDataset ds = load_dataset_dir(dataset_dir);
  const EvalResult result = evaluate(model, ds.val);
  out << "mse=" << fmt(result.mse) << "\n";
  out << "pearson_r=" << fmt(result.pearson_r) << "\n";
}

int cmd_grad_check(uint64_t seed, int layers, int frame, std::ostream& out,
                   std::ostream& err) {
  grad::GradCheckConfig cfg;
  cfg.seed = seed;
  cfg.layers = layers;
  cfg.frame = frame;
  const grad::GradCheckReport report = grad::check_gradients(cfg, 1e-5, 1e-6);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", report.max_rel_err);
  out << "max_rel_err=" << buf << "\n";
  out << "entries=" << report.entries_checked << "\n";
  if (!report.pass) {
    err << "error: NumericalFailure: gradient check failed at " << report.worst_param
        << "\n";
    return 1;
  }
  return 0;
}

void cmd_enhance_demo(const std::string& ckpt, const std::string& dataset_dir,
                      double lambda, int steps, uint64_t seed, std::ostream& out) {
  const Model model = load_checkpoint(ckpt);
  LoadedDataset ds = load_dataset_dir(dataset_dir);
  std::vector<SegmentPair> pairs = ds.train;
  pairs.insert(pairs.end(), ds.val.begin(), ds.val.end());

  CombinedLossConfig cfg;
  cfg.lambda = lambda;
  TrainConfig tc;
  tc.steps = steps;
  tc.seed = seed;
  const auto [fir, metrics] = train_fir_enhancer(model, pairs, cfg, tc);
  out << "mse_before=" << fmt(metrics.mse_before) << "\n";
  out << "mse_after=" << fmt(metrics.mse_after) << "\n";
  out << "mean_score_before=" << fmt(metrics.mean_score_before) << "\n";
  out << "mean_score_after=" << fmt(metrics.mean_score_after) << "\n";
}

void cmd_corr_study(const std::string& scores_csv, std::ostream& out) {
  const CorrelationResult result = correlation_study(scores_csv);
  out << "pearson_r=" << fmt(result.r) << "\n";
  out << "n=" << result.n << "\n";
  out << "scatter=" << result.scatter_path << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"differentiable speech-quality scorer and enhancement toolkit"};
  app.require_subcommand(1);

  // gen-noise
  auto* gen = app.add_subcommand("gen-noise", "synthesize speech-shaped noise");
  std::string gen_corpus, gen_out;
  double gen_duration = 0.0;
  uint64_t gen_seed = 0;
  gen->add_option("--corpus", gen_corpus)->required();
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--duration-s", gen_duration)->required();
  gen->add_option("--seed", gen_seed)->required();

  // degrade
  auto* deg = app.add_subcommand("degrade", "mix a corpus with speech-shaped noise");
  std::string deg_corpus, deg_out;
  int deg_frame = 4095;
  std::vector<double> deg_snrs{0.0, 5.0, 10.0, 15.0};
  uint64_t deg_seed = 0;
  deg->add_option("--corpus", deg_corpus)->required();
  deg->add_option("--out", deg_out)->required();
  deg->add_option("--frame", deg_frame);
  deg->add_option("--snrs", deg_snrs)->delimiter(',');
  deg->add_option("--seed", deg_seed)->required();

  // build-dataset
  auto* bld = app.add_subcommand("build-dataset", "attach labels and split pairs");
  std::string bld_pairs, bld_labels, bld_out;
  double bld_val_fraction = 0.1;
  uint64_t bld_seed = 0;
  bld->add_option("--pairs", bld_pairs)->required();
  bld->add_option("--labels", bld_labels)->required();
  bld->add_option("--out", bld_out)->required();
  bld->add_option("--val-fraction", bld_val_fraction);
  bld->add_option("--seed", bld_seed)->required();

  // train
  auto* trn = app.add_subcommand("train", "train the quality regressor");
  std::string trn_dataset, trn_out, trn_config;
  int trn_steps = 0, trn_batch = 0;
  double trn_lr = 0.0;
  uint64_t trn_seed = 0;
  trn->add_option("--dataset", trn_dataset)->required();
  trn->add_option("--steps", trn_steps)->required();
  trn->add_option("--seed", trn_seed)->required();
  trn->add_option("--out", trn_out)->required();
  trn->add_option("--config", trn_config);
  trn->add_option("--lr", trn_lr);
  trn->add_option("--batch", trn_batch);

  // predict
  auto* prd = app.add_subcommand("predict", "score one clean/degraded pair");
  std::string prd_ckpt, prd_clean, prd_degraded, prd_speaker;
  prd->add_option("--ckpt", prd_ckpt)->required();
  prd->add_option("--clean", prd_clean)->required();
  prd->add_option("--degraded", prd_degraded)->required();
  prd->add_option("--speaker", prd_speaker)->required();

  // eval
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string evl_ckpt, evl_dataset;
  evl->add_option("--ckpt", evl_ckpt)->required();
  evl->add_option("--dataset", evl_dataset)->required();

  // grad-check
  auto* gck = app.add_subcommand("grad-check", "finite-difference gradient check");
  uint64_t gck_seed = 0;
  int gck_layers = 3, gck_frame = 32;
  gck->add_option("--seed", gck_seed)->required();
  gck->add_option("--layers", gck_layers);
  gck->add_option("--frame", gck_frame);

  // enhance-demo
  auto* enh = app.add_subcommand("enhance-demo", "train the FIR enhancer demo");
  std::string enh_ckpt, enh_dataset;
  double enh_lambda = 1.0;
  int enh_steps = 0;
  uint64_t enh_seed = 0;
  enh->add_option("--ckpt", enh_ckpt)->required();
  enh->add_option("--dataset", enh_dataset)->required();
  enh->add_option("--lambda", enh_lambda)->required();
  enh->add_option("--steps", enh_steps)->required();
  enh->add_option("--seed", enh_seed)->required();

  // corr-study
  auto* cor = app.add_subcommand("corr-study", "segment-vs-full score correlation");
  std::string cor_scores;
  cor->add_option("--scores", cor_scores)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    err << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      cmd_gen_noise(gen_corpus, gen_out, gen_duration, gen_seed);
      out << "out=" << gen_out << "\n";
    } else if (deg->parsed()) {
      cmd_degrade(deg_corpus, deg_out, deg_frame, deg_snrs, deg_seed, out);
    } else if (bld->parsed()) {
      cmd_build_dataset(bld_pairs, bld_labels, bld_out, bld_val_fraction, bld_seed, out);
    } else if (trn->parsed()) {
      cmd_train(trn_dataset, trn_steps, trn_seed, trn_out, trn_config, trn_lr, trn_batch,
                out);
    } else if (prd->parsed()) {
      cmd_predict(prd_ckpt, prd_clean, prd_degraded, prd_speaker, out);
    } else if (evl->parsed()) {
      cmd_eval(evl_ckpt, evl_dataset, out);
    } else if (gck->parsed()) {
      return cmd_grad_check(gck_seed, gck_layers, gck_frame, out, err);
    } else if (enh->parsed()) {
      cmd_enhance_demo(enh_ckpt, enh_dataset, enh_lambda, enh_steps, enh_seed, out);
    } else if (cor->parsed()) {
      cmd_corr_study(cor_scores, out);
    }
  } catch (const Error& e) {
    err << "error: " << error_kind_name(e.kind()) << ": " << e.detail() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: IoError: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dpq
