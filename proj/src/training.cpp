#include "dpq/training.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "dpq/quality_loss.hpp"
#include "dpq/rng.hpp"

namespace dpq {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void atomic_write(const std::string& path, const void* data, size_t size) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::IoError, "cannot open " + tmp);
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) throw Error(ErrorKind::IoError, "short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "rename to " + path + ": " + ec.message());
}

}  // namespace

std::vector<LabelRecord> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);

  std::vector<LabelRecord> records;
  std::set<std::pair<std::string, int>> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("clean") || !j.contains("degraded") ||
        !j.contains("speaker") || !j.contains("segment_index") || !j.contains("score")) {
      throw Error(ErrorKind::ParseError,
                  path + ":" + std::to_string(line_no) + ": missing required key");
    }
    LabelRecord rec;
    try {
      rec.clean = j.at("clean").get<std::string>();
      rec.degraded = j.at("degraded").get<std::string>();
      rec.speaker = j.at("speaker").get<std::string>();
      rec.segment_index = j.at("segment_index").get<int>();
      rec.score = j.at("score").get<double>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (rec.segment_index < 0) {
      throw Error(ErrorKind::ParseError,
                  path + ":" + std::to_string(line_no) + ": negative segment_index");
    }
    if (rec.score < kScoreMin || rec.score > kScoreMax) {
      throw Error(ErrorKind::ScoreOutOfRange,
                  path + ":" + std::to_string(line_no) + ": score " +
                      std::to_string(rec.score));
    }
    if (!seen.insert({rec.clean, rec.segment_index}).second) {
      throw Error(ErrorKind::DuplicateKey,
                  path + ":" + std::to_string(line_no) + ": (" + rec.clean + ", " +
                      std::to_string(rec.segment_index) + ")");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_labels(const std::string& path, const std::vector<LabelRecord>& records) {
  std::string out;
  for (const LabelRecord& rec : records) {
    ordered_json j;
    j["clean"] = rec.clean;
    j["degraded"] = rec.degraded;
    j["speaker"] = rec.speaker;
    j["segment_index"] = rec.segment_index;
    j["score"] = rec.score;
    out += j.dump();
    out += '\n';
  }
  atomic_write(path, out.data(), out.size());
}

double proxy_score(std::span<const double> clean, std::span<const double> degraded) {
  if (clean.size() != degraded.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "proxy_score lengths " + std::to_string(clean.size()) + " vs " +
                    std::to_string(degraded.size()));
  }
  double clean_energy = 0.0, residual_energy = 0.0;
  for (size_t i = 0; i < clean.size(); ++i) {
    clean_energy += clean[i] * clean[i];
    const double r = clean[i] - degraded[i];
    residual_energy += r * r;
  }
  if (clean_energy <= 0.0) {
    throw Error(ErrorKind::ZeroPowerInput, "proxy_score on silent clean frame");
  }
  if (residual_energy == 0.0) return 4.5;  // defined limit at +inf SNR
  const double snr_db = 10.0 * std::log10(clean_energy / residual_energy);
  return 1.0 + 3.5 / (1.0 + std::exp(-(snr_db - 5.0) / 4.0));
}

DatasetSplit assemble_dataset(const DegradedPairSet& pairs,
                              const std::vector<LabelRecord>* labels,
                              const std::map<std::string, int>& speaker_map,
                              double val_fraction, uint64_t seed) {
  if (pairs.pairs.empty()) {
    throw Error(ErrorKind::EmptyDataset, "no pairs to assemble");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorKind::ConfigInvalid, "val_fraction must be in (0, 1)");
  }

  std::map<std::pair<std::string, int>, const LabelRecord*> by_key;
  if (labels) {
    for (const LabelRecord& rec : *labels) {
      by_key[{rec.clean, rec.segment_index}] = &rec;
    }
  }

  std::vector<SegmentPair> assembled;
  assembled.reserve(pairs.pairs.size());
  for (const DegradedPair& p : pairs.pairs) {
    SegmentPair sp;
    sp.clean = p.clean;
    sp.degraded = p.degraded;
    std::string speaker_key;
    if (labels) {
      auto it = by_key.find({p.file_id, p.segment_index});
      if (it == by_key.end()) {
        throw Error(ErrorKind::MissingLabel,
                    p.file_id + "#" + std::to_string(p.segment_index));
      }
      sp.score = it->second->score;
      speaker_key = it->second->speaker;
    } else {
      sp.score = proxy_score(sp.clean, sp.degraded);
      speaker_key = p.file_id;
    }
    auto sit = speaker_map.find(speaker_key);
    if (sit == speaker_map.end()) {
      throw Error(ErrorKind::UnknownSpeaker, speaker_key);
    }
    sp.speaker = sit->second;
    assembled.push_back(std::move(sp));
  }

  // Seeded Fisher-Yates over indices, high to low.
  const size_t n = assembled.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 rng(seed);
  for (size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.index(i + 1)]);
  }

  const size_t val_count = static_cast<size_t>(
      std::ceil(static_cast<double>(n) * val_fraction));
  DatasetSplit split;
  for (size_t i = 0; i < n; ++i) {
    auto& dst = i < val_count ? split.val : split.train;
    auto& src = i < val_count ? split.val_source : split.train_source;
    dst.push_back(assembled[order[i]]);
    src.push_back(order[i]);
  }
  return split;
}

namespace {

double pair_loss_and_grads(const Model& model, const SegmentPair& sp,
                           grad::GradMap* grads_out) {
  grad::Tape tape;
  const int t_len = static_cast<int>(sp.clean.size());
  grad::Tensor c = tape.input({1, t_len}, sp.clean);
  grad::Tensor d = tape.input({1, t_len}, sp.degraded);
  grad::Tensor score = model.score_graph(
      tape, c, d, sp.speaker,
      grads_out ? ParamMode::kTrainable : ParamMode::kFrozen);
  grad::Tensor target = tape.input({1}, {sp.score});
  grad::Tensor loss = tape.mse(score, target);
  if (grads_out) *grads_out = tape.backward(loss);
  return loss.scalar();
}

}  // namespace

double dataset_mse(const Model& model, const std::vector<SegmentPair>& data) {
  if (data.empty()) return std::nan("");
  double acc = 0.0;
  for (const SegmentPair& sp : data) {
    const double s = model.forward(sp.clean, sp.degraded, sp.speaker);
    acc += (s - sp.score) * (s - sp.score);
  }
  return acc / static_cast<double>(data.size());
}

std::vector<HistoryEntry> train(Model& model, const std::vector<SegmentPair>& train_set,
                                const std::vector<SegmentPair>& val_set,
                                const TrainConfig& tc) {
  if (train_set.empty()) {
    throw Error(ErrorKind::EmptyDataset, "training split is empty");
  }
  if (tc.batch_size < 1 || tc.steps < 0) {
    throw Error(ErrorKind::ConfigInvalid, "batch_size must be >= 1 and steps >= 0");
  }

  const size_t n = train_set.size();
  const size_t probe_count = std::min<size_t>(200, n);
  const std::vector<SegmentPair> probe(train_set.begin(),
                                       train_set.begin() + probe_count);

  std::vector<HistoryEntry> history;
  auto record = [&](int step) {
    history.push_back({step, dataset_mse(model, probe), dataset_mse(model, val_set)});
  };
  record(0);

  grad::AdamHyper hyper{tc.learning_rate, tc.beta1, tc.beta2, tc.eps};
  grad::AdamState state;
  SplitMix64 rng(tc.seed);

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  size_t pos = n;  // force a shuffle before the first batch

  for (int step = 1; step <= tc.steps; ++step) {
    if (pos >= n) {
      for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
      pos = 0;
    }
    const size_t take = std::min<size_t>(tc.batch_size, n - pos);

    grad::GradMap batch_grads;
    for (size_t b = 0; b < take; ++b) {
      grad::GradMap grads;
      pair_loss_and_grads(model, train_set[order[pos + b]], &grads);
      if (batch_grads.empty()) {
        batch_grads = std::move(grads);
      } else {
        for (auto& [name, g] : batch_grads) {
          const auto& add = grads.at(name);
          for (size_t i = 0; i < g.size(); ++i) g[i] += add[i];
        }
      }
    }
    pos += take;
    const double inv = 1.0 / static_cast<double>(take);
    for (auto& [name, g] : batch_grads) {
      for (double& v : g) v *= inv;
    }
    grad::adam_step(model.params(), batch_grads, state, hyper, step);

    if (step % 50 == 0) record(step);
  }
  return history;
}

EvalResult evaluate(const Model& model, const std::vector<SegmentPair>& data) {
  if (data.size() < 2) {
    throw Error(ErrorKind::DegenerateLabels, "evaluate needs at least 2 examples");
  }
  std::vector<double> predictions(data.size()), labels(data.size());
  double mse_acc = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    predictions[i] = model.forward(data[i].clean, data[i].degraded, data[i].speaker);
    labels[i] = data[i].score;
    mse_acc += (predictions[i] - labels[i]) * (predictions[i] - labels[i]);
  }
  double label_mean = 0.0;
  for (double l : labels) label_mean += l;
  label_mean /= static_cast<double>(labels.size());
  double label_var = 0.0;
  for (double l : labels) label_var += (l - label_mean) * (l - label_mean);
  if (label_var == 0.0) {
    throw Error(ErrorKind::DegenerateLabels, "labels have zero variance");
  }
  return {mse_acc / static_cast<double>(data.size()), pearson(predictions, labels)};
}

namespace {

constexpr char kMagic[4] = {'D', 'P', 'Q', '1'};
constexpr uint32_t kVersion = 1;

void put_u16le(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f64le(std::vector<uint8_t>& out, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xFF));
}

struct ByteReader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size()) {
      throw Error(ErrorKind::ParseError, "checkpoint truncated");
    }
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  double f64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

ordered_json config_json(const Model& model) {
  const ModelConfig& c = model.config();
  ordered_json j;
  j["kernel_size"] = c.kernel_size;
  j["dilation_cycles"] = c.dilation_cycles;
  j["max_dilation_log2"] = c.max_dilation_log2;
  j["residual_channels"] = c.residual_channels;
  j["skip_channels"] = c.skip_channels;
  j["speaker_count"] = c.speaker_count;
  j["speaker_embed_dim"] = c.speaker_embed_dim;
  j["frame_len"] = c.frame_len;
  j["speakers"] = model.speaker_names();
  return j;
}

}  // namespace

std::vector<uint8_t> checkpoint_bytes(const Model& model) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32le(out, kVersion);

  const std::string cfg = config_json(model).dump();
  put_u32le(out, static_cast<uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());

  const auto& entries = model.params().entries;
  put_u32le(out, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, param] : entries) {
    put_u16le(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<uint8_t>(param.shape.size()));
    for (int d : param.shape) put_u32le(out, static_cast<uint32_t>(d));
    for (double v : param.values) put_f64le(out, v);
  }

  const uint32_t crc =
      static_cast<uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size())));
  put_u32le(out, crc);
  return out;
}

void save_checkpoint(const Model& model, const std::string& path) {
  const std::vector<uint8_t> bytes = checkpoint_bytes(model);
  atomic_write(path, bytes.data(), bytes.size());
}

Model checkpoint_from_bytes(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::BadMagic, "not a DPQ1 checkpoint");
  }
  if (bytes.size() < 12) {
    throw Error(ErrorKind::ChecksumMismatch, "checkpoint too small");
  }
  const size_t body = bytes.size() - 4;
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(bytes[body + i]) << (8 * i);
  const uint32_t actual =
      static_cast<uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body)));
  if (stored != actual) {
    throw Error(ErrorKind::ChecksumMismatch, "checkpoint CRC32 mismatch");
  }

  ByteReader r{bytes};
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw Error(ErrorKind::VersionUnsupported, "checkpoint version " + std::to_string(version));
  }

  const uint32_t cfg_len = r.u32();
  const std::string cfg_text = r.str(cfg_len);
  json j;
  try {
    j = json::parse(cfg_text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("checkpoint config: ") + e.what());
  }

  ModelConfig cfg;
  std::vector<std::string> speakers;
  try {
    cfg.kernel_size = j.at("kernel_size").get<int>();
    cfg.dilation_cycles = j.at("dilation_cycles").get<int>();
    cfg.max_dilation_log2 = j.at("max_dilation_log2").get<int>();
    cfg.residual_channels = j.at("residual_channels").get<int>();
    cfg.skip_channels = j.at("skip_channels").get<int>();
    cfg.speaker_count = j.at("speaker_count").get<int>();
    cfg.speaker_embed_dim = j.at("speaker_embed_dim").get<int>();
    cfg.frame_len = j.at("frame_len").get<int>();
    speakers = j.at("speakers").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("checkpoint config: ") + e.what());
  }

  grad::ParamStore params;
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const uint8_t rank = r.u8();
    if (rank < 1 || rank > 3) {
      throw Error(ErrorKind::ParseError, "parameter '" + name + "' has rank " +
                                             std::to_string(rank));
    }
    grad::Shape shape(rank);
    for (uint8_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
    const long total = grad::element_count(shape);
    if (total < 1 || total > (1L << 30)) {
      throw Error(ErrorKind::ParseError, "parameter '" + name + "' has absurd size");
    }
    std::vector<double> values(total);
    for (long v = 0; v < total; ++v) values[v] = r.f64();
    params.add(name, std::move(shape), std::move(values));
  }
  if (r.pos != body) {
    throw Error(ErrorKind::ParseError, "trailing bytes in checkpoint");
  }

  return checkpoint_assemble(cfg, std::move(params), std::move(speakers));
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace dpq
