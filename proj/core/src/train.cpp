// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "seldkit/audio.hpp"

namespace seldkit::train {

namespace {

constexpr int kFeatureFps = 80;
constexpr int kMaxResidentFeatures = 8;
constexpr int kInferWindow = 2400;  // 30 s at 80 fps; divisible by 16

bool is_hist_kind(const std::string& kind) {
  return kind == "azihist" || kind == "elehist";
}

}  // namespace

int TrainConfig::chunk_frames80() const {
  return static_cast<int>(std::llround(chunk_seconds * kFeatureFps));
}

int TrainConfig::chunk_frames10() const {
  return static_cast<int>(std::llround(chunk_seconds * seld::kLabelFps));
}

void TrainConfig::validate() const {
  if (stage != "sed" && stage != "doa" && stage != "align") {
    throw ConfigError("TrainConfig: stage must be sed, doa or align");
  }
  if (chunk_frames80() % 16 != 0) {
    throw ConfigError("TrainConfig: chunk length must give a frame count divisible "
                      "by 16 at 80 fps (got " + std::to_string(chunk_frames80()) + ")");
  }
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (chunk_fraction <= 0.0 || chunk_fraction > 1.0) {
    throw ConfigError("TrainConfig: chunk_fraction must be in (0, 1]");
  }
  if (lr_start <= 0.0 || lr_end <= 0.0) {
    throw ConfigError("TrainConfig: learning rates must be positive");
  }
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (cfg.epochs <= 1) return cfg.lr_start;
  const double cut = 0.7 * (cfg.epochs - 1);
  if (epoch <= cut) return cfg.lr_start;
  const double frac = (epoch - cut) / ((cfg.epochs - 1) - cut);
  return cfg.lr_start + frac * (cfg.lr_end - cfg.lr_start);
}

ChunkDataset::ChunkDataset(const scene::DatasetManifest& manifest,
                           const std::string& split,
                           std::vector<std::string> feature_kinds,
                           std::filesystem::path cache_root, double chunk_seconds)
    : kinds_(std::move(feature_kinds)), cache_root_(std::move(cache_root)) {
  chunk_frames80_ = static_cast<int>(std::llround(chunk_seconds * kFeatureFps));
  chunk_frames10_ = static_cast<int>(std::llround(chunk_seconds * seld::kLabelFps));
  if (chunk_frames80_ % 16 != 0) {
    throw ConfigError("ChunkDataset: chunk frame count must be divisible by 16");
  }
  if (kinds_.empty()) throw ConfigError("ChunkDataset: no feature kinds requested");

  for (const auto& entry : manifest.split(split)) {
    const auto feat_path = dsp::feature_path(cache_root_, entry.stem(), kinds_[0]);
    if (!std::filesystem::exists(feat_path)) {
      throw IoError("ChunkDataset: missing feature cache " + feat_path.string() +
                    " (run extract first)");
    }
    const auto header = dsp::peek_feature(feat_path);
    if (header.shape.size() != 3) {
      throw IoError("ChunkDataset: unexpected feature rank in " + feat_path.string());
    }
    const int frames80 = header.shape[1];
    const int n_chunks = frames80 / chunk_frames80_;
    if (n_chunks == 0) continue;

    ClipEntry clip;
    clip.stem = entry.stem();
    clip.label_path = manifest.root / entry.label_path();
    const auto rows = seld::read_event_csv(clip.label_path);
    try {
      clip.targets = seld::targets_from_events(rows, n_chunks * chunk_frames10_);
    } catch (const UnsupportedLabelError& e) {
      std::fprintf(stderr, "warning: skipping clip %s: %s\n", clip.stem.c_str(),
                   e.what());
      continue;
    }
    clip.n_chunks = n_chunks;
    const int clip_idx = static_cast<int>(clips_.size());
    clips_.push_back(std::move(clip));
    for (int c = 0; c < n_chunks; ++c) chunks_.push_back({clip_idx, c});
  }
}

const dsp::FeatureArray& ChunkDataset::clip_feature(int clip,
                                                    const std::string& kind) const {
  const auto key = std::make_pair(clip, kind);
  auto it = resident_.find(key);
  if (it != resident_.end()) return it->second;
  if (static_cast<int>(resident_.size()) >= kMaxResidentFeatures) {
    resident_.clear();  // clip-major access keeps working sets tiny
  }
  auto f = dsp::load_feature(
      dsp::feature_path(cache_root_, clips_[static_cast<std::size_t>(clip)].stem, kind));
  return resident_.emplace(key, std::move(f)).first->second;
}

ChunkDataset::Item ChunkDataset::get(int chunk_index) const {
  const auto& ref = chunks_.at(static_cast<std::size_t>(chunk_index));
  const auto& clip = clips_[static_cast<std::size_t>(ref.clip)];
  Item item;
  for (const auto& kind : kinds_) {
    const auto& full = clip_feature(ref.clip, kind);
    const int channels = full.shape[0];
    const int frames = full.shape[1];
    const int width = full.shape[2];
    dsp::FeatureArray slice;
    slice.kind = kind;
    slice.shape = {channels, chunk_frames80_, width};
    slice.data.resize(static_cast<std::size_t>(channels) * chunk_frames80_ * width);
    const int t0 = ref.index * chunk_frames80_;
    for (int c = 0; c < channels; ++c) {
      const double* src = full.data.data() +
                          (static_cast<std::size_t>(c) * frames + t0) * width;
      double* dst = slice.data.data() +
                    static_cast<std::size_t>(c) * chunk_frames80_ * width;
      std::copy(src, src + static_cast<std::size_t>(chunk_frames80_) * width, dst);
    }
    if (is_hist_kind(kind)) normalize_hist_frames(slice);
    item.features.push_back(std::move(slice));
  }
  item.targets = clip.targets.slice(ref.index * chunk_frames10_, chunk_frames10_);
  return item;
}

std::vector<int> ChunkDataset::epoch_order(std::uint64_t seed, double fraction) const {
  Rng rng(seed);
  std::vector<int> clip_order(clips_.size());
  std::iota(clip_order.begin(), clip_order.end(), 0);
  for (std::size_t i = clip_order.size(); i > 1; --i) {
    std::swap(clip_order[i - 1],
              clip_order[static_cast<std::size_t>(
                  rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  std::vector<std::vector<int>> by_clip(clips_.size());
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    by_clip[static_cast<std::size_t>(chunks_[i].clip)].push_back(static_cast<int>(i));
  }
  std::vector<int> order;
  order.reserve(chunks_.size());
  for (int clip : clip_order) {
    auto& ids = by_clip[static_cast<std::size_t>(clip)];
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[static_cast<std::size_t>(
                                rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    order.insert(order.end(), ids.begin(), ids.end());
  }
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(fraction * static_cast<double>(order.size()))));
  if (keep < order.size()) order.resize(keep);
  return order;
}

void augment_batch(std::vector<double>& features, const std::vector<int>& shape,
                   BatchTargets& targets, const AugmentPolicy& policy, Rng& rng) {
  const int n = shape[0], channels = shape[1], t_len = shape[2], width = shape[3];
  const std::size_t sample_stride = static_cast<std::size_t>(channels) * t_len * width;

  if (policy.mixup && rng.uniform() < policy.prob && n > 1) {
    std::vector<int> partner(static_cast<std::size_t>(n));
    std::iota(partner.begin(), partner.end(), 0);
    for (std::size_t i = partner.size(); i > 1; --i) {
      std::swap(partner[i - 1],
                partner[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    const std::vector<double> x0 = features;
    const std::vector<double> sed0 = targets.sed;
    const std::vector<double> azi0 = targets.azi;
    const std::vector<double> ele0 = targets.ele;
    const std::size_t sed_stride = targets.sed.size() / static_cast<std::size_t>(n);
    const std::size_t azi_stride = targets.azi.size() / static_cast<std::size_t>(n);
    const std::size_t ele_stride = targets.ele.size() / static_cast<std::size_t>(n);
    for (int i = 0; i < n; ++i) {
      const double lam = rng.beta_half_half();
      const int j = partner[static_cast<std::size_t>(i)];
      const auto mix = [&](std::vector<double>& dst, const std::vector<double>& src,
                           std::size_t stride) {
        if (stride == 0) return;
        double* d = dst.data() + static_cast<std::size_t>(i) * stride;
        const double* a = src.data() + static_cast<std::size_t>(i) * stride;
        const double* b = src.data() + static_cast<std::size_t>(j) * stride;
        for (std::size_t k = 0; k < stride; ++k) d[k] = lam * a[k] + (1.0 - lam) * b[k];
      };
      mix(features, x0, sample_stride);
      mix(targets.sed, sed0, sed_stride);
      mix(targets.azi, azi0, azi_stride);
      mix(targets.ele, ele0, ele_stride);
    }
  }

  for (int i = 0; i < n; ++i) {
    double* x = features.data() + static_cast<std::size_t>(i) * sample_stride;
    if (policy.freq_shift && rng.uniform() < policy.prob) {
      const int shift = static_cast<int>(
          rng.uniform_int(-policy.max_freq_shift, policy.max_freq_shift));
      if (shift != 0) {
        std::vector<double> row(static_cast<std::size_t>(width));
        for (int c = 0; c < channels; ++c) {
          for (int t = 0; t < t_len; ++t) {
            double* r = x + (static_cast<std::size_t>(c) * t_len + t) * width;
            for (int f = 0; f < width; ++f) {
              row[static_cast<std::size_t>(((f + shift) % width + width) % width)] = r[f];
            }
            std::copy(row.begin(), row.end(), r);
          }
        }
      }
    }
    if (policy.cutout && rng.uniform() < policy.prob) {
      const int max_h = std::max(1, t_len / 5);
      const int max_w = std::max(1, width / 5);
      const int h = static_cast<int>(rng.uniform_int(1, max_h));
      const int w = static_cast<int>(rng.uniform_int(1, max_w));
      const int t0 = static_cast<int>(rng.uniform_int(0, t_len - h));
      const int f0 = static_cast<int>(rng.uniform_int(0, width - w));
      for (int c = 0; c < channels; ++c) {
        for (int t = t0; t < t0 + h; ++t) {
          double* r = x + (static_cast<std::size_t>(c) * t_len + t) * width;
          std::fill(r + f0, r + f0 + w, 0.0);
        }
      }
    }
    if (policy.specaugment && rng.uniform() < policy.prob) {
      const int tw = static_cast<int>(rng.uniform_int(1, std::max(1, t_len / 8)));
      const int t0 = static_cast<int>(rng.uniform_int(0, t_len - tw));
      const int fw = static_cast<int>(rng.uniform_int(1, std::max(1, width / 8)));
      const int f0 = static_cast<int>(rng.uniform_int(0, width - fw));
      for (int c = 0; c < channels; ++c) {
        for (int t = t0; t < t0 + tw; ++t) {
          double* r = x + (static_cast<std::size_t>(c) * t_len + t) * width;
          std::fill(r, r + width, 0.0);
        }
        for (int t = 0; t < t_len; ++t) {
          double* r = x + (static_cast<std::size_t>(c) * t_len + t) * width;
          std::fill(r + f0, r + f0 + fw, 0.0);
        }
      }
    }
  }
}

void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TraceRow>& trace) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_trace_csv: cannot open " + path.string());
  os << "epoch,train_loss,val_loss,lr\n";
  char buf[128];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.8f,%.8f,%.8f\n", row.epoch, row.train_loss,
                  row.val_loss, row.lr);
    os << buf;
  }
}

void normalize_hist_frames(dsp::FeatureArray& f) {
  const int frames = f.shape[1];
  const int width = f.shape[2];
  for (int t = 0; t < frames; ++t) {
    double* row = f.data.data() + static_cast<std::size_t>(t) * width;
    double sum = 0.0;
    for (int i = 0; i < width; ++i) sum += row[i];
    if (sum > 0.0) {
      for (int i = 0; i < width; ++i) row[i] /= sum;
    }
  }
}

std::map<std::string, dsp::FeatureArray> compute_clip_features(
    const MultichannelClip& clip, const std::vector<std::string>& kinds) {
  std::map<std::string, dsp::FeatureArray> out;
  const auto specs = dsp::stft_all(clip);
  bool hist_done = false;
  for (const auto& kind : kinds) {
    if (out.count(kind) != 0) continue;
    if (kind == "logmel128") {
      out[kind] = dsp::log_mel(specs, 128);
    } else if (kind == "logmel64") {
      out[kind] = dsp::log_mel({specs[0]}, 64);
    } else if (kind == "iv128") {
      out[kind] = dsp::intensity_vector(specs, 128);
    } else if (kind == "gcc128") {
      out[kind] = dsp::gcc_phat(specs, 128);
    } else if (is_hist_kind(kind)) {
      if (!hist_done) {
        const auto hists = dsp::ss_histogram(specs);
        dsp::FeatureArray azi;
        azi.kind = "azihist";
        azi.shape = {1, hists.n_frames, seld::DirectionGrid::kAzimuths};
        azi.data = hists.azi;
        dsp::FeatureArray ele;
        ele.kind = "elehist";
        ele.shape = {1, hists.n_frames, seld::DirectionGrid::kElevations};
        ele.data = hists.ele;
        out["azihist"] = std::move(azi);
        out["elehist"] = std::move(ele);
        hist_done = true;
      }
    } else {
      throw ConfigError("unknown feature kind: " + kind);
    }
  }
  for (auto it = out.begin(); it != out.end();) {
    if (std::find(kinds.begin(), kinds.end(), it->first) == kinds.end()) {
      it = out.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

void extract_features(const scene::DatasetManifest& manifest,
                      const std::vector<std::string>& kinds,
                      const std::filesystem::path& cache_root, bool force) {
  std::filesystem::create_directories(cache_root);
  const auto n = static_cast<std::int64_t>(manifest.entries.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& entry = manifest.entries[static_cast<std::size_t>(i)];
    std::vector<std::string> missing;
    for (const auto& kind : kinds) {
      const auto path = dsp::feature_path(cache_root, entry.stem(), kind);
      if (force || !std::filesystem::exists(path)) missing.push_back(kind);
    }
    if (missing.empty()) continue;
    const auto clip = read_wav(manifest.root / entry.clip_path);
    auto features = compute_clip_features(clip, missing);
    for (auto& [kind, f] : features) {
      dsp::save_feature(dsp::feature_path(cache_root, entry.stem(), kind), f);
    }
  }
}

namespace {

struct Batch {
  std::vector<nn::TensorPtr> features;  // one tensor per dataset feature kind
  BatchTargets targets;
  int n = 0;
};

Batch assemble_batch(const ChunkDataset& ds, const std::vector<int>& order,
                     std::size_t begin, std::size_t end) {
  Batch batch;
  batch.n = static_cast<int>(end - begin);
  std::vector<ChunkDataset::Item> items;
  items.reserve(static_cast<std::size_t>(batch.n));
  for (std::size_t i = begin; i < end; ++i) items.push_back(ds.get(order[i]));

  const auto n_kinds = items[0].features.size();
  for (std::size_t k = 0; k < n_kinds; ++k) {
    const auto& shape0 = items[0].features[k].shape;
    auto tensor = nn::Tensor::leaf({batch.n, shape0[0], shape0[1], shape0[2]});
    const std::size_t stride = items[0].features[k].data.size();
    for (int i = 0; i < batch.n; ++i) {
      const auto& src = items[static_cast<std::size_t>(i)].features[k].data;
      std::copy(src.begin(), src.end(),
                tensor->values.begin() +
                    static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(stride));
    }
    batch.features.push_back(std::move(tensor));
  }
  for (const auto& item : items) {
    const auto append = [](std::vector<double>& dst, const std::vector<double>& src) {
      dst.insert(dst.end(), src.begin(), src.end());
    };
    append(batch.targets.sed, item.targets.sed);
    append(batch.targets.azi, item.targets.azi);
    append(batch.targets.ele, item.targets.ele);
    append(batch.targets.xyz, item.targets.doa_xyz);
    append(batch.targets.mask, item.targets.doa_mask);
  }
  return batch;
}

double model_loss(seld::SedModel* sed, seld::DoaModel* doa, const Batch& batch,
                  bool train_mode, bool do_backward) {
  nn::TensorPtr loss;
  if (sed != nullptr) {
    auto probs = sed->forward(batch.features[0], train_mode);
    loss = nn::bce_loss(probs, batch.targets.sed);
  } else {
    auto out = doa->forward(batch.features[0], train_mode);
    nn::TensorPtr azi_loss, ele_loss;
    if (out.azi) azi_loss = nn::bce_loss(out.azi, batch.targets.azi);
    if (out.ele) ele_loss = nn::bce_loss(out.ele, batch.targets.ele);
    if (azi_loss && ele_loss) {
      loss = nn::add_weighted(azi_loss, 0.5, ele_loss, 0.5);
    } else {
      loss = azi_loss ? azi_loss : ele_loss;
    }
  }
  const double value = loss->values[0];
  if (do_backward) nn::backward(loss);
  return value;
}

nn::Checkpoint snapshot_checkpoint(const seld::SedModel* sed,
                                   const seld::DoaModel* doa) {
  return sed != nullptr ? sed->to_checkpoint() : doa->to_checkpoint();
}

}  // namespace

TrainResult train_stage1(const Stage1Options& opt) {
  TrainConfig cfg = opt.config;
  cfg.validate();
  const bool is_sed = opt.model_kind.rfind("sed", 0) == 0;
  if (cfg.stage != (is_sed ? "sed" : "doa")) {
    throw ConfigError("train_stage1: stage/model kind mismatch");
  }

  std::optional<seld::SedModel> sed;
  std::optional<seld::DoaModel> doa;
  std::vector<nn::TensorPtr> params;
  if (is_sed) {
    sed = seld::SedModel::make(opt.model_kind, opt.spec, cfg.seed);
    if (opt.init_conv_from) {
      const auto source = nn::load_checkpoint(*opt.init_conv_from);
      const int matched = sed->load_conv_weights(source);
      if (matched == 0) {
        throw ConfigError("train_stage1: no conv records matched in " +
                          opt.init_conv_from->string());
      }
    }
    params = sed->parameters();
  } else {
    if (opt.init_conv_from) {
      throw ConfigError("train_stage1: conv transfer hook is a SED feature");
    }
    doa = seld::DoaModel::make(opt.model_kind, opt.spec, cfg.seed);
    params = doa->parameters();
  }

  const std::string feature_kind =
      seld::feature_kind_for(opt.model_kind, opt.spec.in_features);
  ChunkDataset train_ds(opt.manifest, "train", {feature_kind}, opt.cache_root,
                        cfg.chunk_seconds);
  ChunkDataset val_ds(opt.manifest, "val", {feature_kind}, opt.cache_root,
                      cfg.chunk_seconds);
  if (train_ds.num_chunks() == 0) throw ConfigError("train_stage1: empty train split");

  AugmentPolicy policy = cfg.augment;
  if (feature_kind.rfind("gcc", 0) == 0 || is_hist_kind(feature_kind)) {
    policy.freq_shift = false;  // lag/direction axes carry label information
  }

  nn::AdamState adam;
  adam.init(params);
  nn::Checkpoint best;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<TraceRow> trace;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    const auto order = train_ds.epoch_order(
        Rng::mix(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)), cfg.chunk_fraction);
    Rng aug_rng(Rng::mix(cfg.seed, 2000 + static_cast<std::uint64_t>(epoch)));
    double train_loss_acc = 0.0;
    std::int64_t train_count = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      Batch batch = assemble_batch(train_ds, order, begin, end);
      augment_batch(batch.features[0]->values, batch.features[0]->shape, batch.targets,
                    policy, aug_rng);
      nn::zero_grads(params);
      const double loss =
          model_loss(is_sed ? &*sed : nullptr, is_sed ? nullptr : &*doa, batch,
                     /*train_mode=*/true, /*do_backward=*/true);
      if (!std::isfinite(loss)) {
        throw DivergenceError("train_stage1: non-finite loss at epoch " +
                              std::to_string(epoch));
      }
      nn::adam_step(params, adam, lr);
      train_loss_acc += loss * static_cast<double>(batch.n);
      train_count += batch.n;
    }

    double val_loss_acc = 0.0;
    std::int64_t val_count = 0;
    {
      nn::NoGradGuard guard;
      std::vector<int> val_order(static_cast<std::size_t>(val_ds.num_chunks()));
      std::iota(val_order.begin(), val_order.end(), 0);
      for (std::size_t begin = 0; begin < val_order.size();
           begin += static_cast<std::size_t>(cfg.batch_size)) {
        const auto end =
            std::min(val_order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
        Batch batch = assemble_batch(val_ds, val_order, begin, end);
        const double loss =
            model_loss(is_sed ? &*sed : nullptr, is_sed ? nullptr : &*doa, batch,
                       /*train_mode=*/false, /*do_backward=*/false);
        val_loss_acc += loss * static_cast<double>(batch.n);
        val_count += batch.n;
      }
    }

    TraceRow row;
    row.epoch = epoch;
    row.train_loss =
        train_count > 0 ? train_loss_acc / static_cast<double>(train_count) : 0.0;
    row.val_loss = val_count > 0 ? val_loss_acc / static_cast<double>(val_count) : 0.0;
    row.lr = lr;
    trace.push_back(row);
    if (val_count == 0 || row.val_loss < best_val) {
      best_val = row.val_loss;
      best_epoch = epoch;
      best = snapshot_checkpoint(is_sed ? &*sed : nullptr, is_sed ? nullptr : &*doa);
    }
  }

  std::filesystem::create_directories(opt.out_dir);
  TrainResult result;
  result.checkpoint = opt.out_dir / (opt.model_kind + ".ckpt");
  result.trace_csv = opt.out_dir / (opt.model_kind + "_trace.csv");
  nn::save_checkpoint(result.checkpoint, best);
  write_trace_csv(result.trace_csv, trace);
  result.best_val_loss = best_val;
  result.best_epoch = best_epoch;
  result.trace = std::move(trace);
  return result;
}

namespace {

/// Frozen-upstream pass for a batch of chunks, producing fused rows.
struct UpstreamBatcher {
  seld::SedModel* sed = nullptr;
  seld::DoaModel* doa = nullptr;
  seld::DoaModel* azi_hist = nullptr;
  seld::DoaModel* ele_hist = nullptr;
  std::vector<std::string> kinds;  // dataset kind order

  std::size_t kind_index(const std::string& kind) const {
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      if (kinds[i] == kind) return i;
    }
    throw ConfigError("upstream: feature kind not loaded: " + kind);
  }

  std::vector<std::vector<double>> fuse(const std::vector<nn::TensorPtr>& features,
                                        int n, int frames10) {
    nn::NoGradGuard guard;
    const auto sed_kind = seld::feature_kind_for(sed->kind, sed->trunk.spec.in_features);
    auto sed_probs = sed->forward(features[kind_index(sed_kind)], /*train_mode=*/false);
    nn::TensorPtr azi, ele;
    if (doa != nullptr) {
      auto out = doa->forward(features[kind_index(seld::feature_kind_for(doa->kind))],
                              false);
      azi = out.azi;
      ele = out.ele;
    } else {
      azi = azi_hist->forward(features[kind_index("azihist")], false).azi;
      ele = ele_hist->forward(features[kind_index("elehist")], false).ele;
    }
    std::vector<std::vector<double>> fused(static_cast<std::size_t>(n));
    const std::size_t sed_stride = static_cast<std::size_t>(frames10) * seld::kNumClasses;
    const std::size_t azi_stride =
        static_cast<std::size_t>(frames10) * seld::DirectionGrid::kAzimuths;
    const std::size_t ele_stride =
        static_cast<std::size_t>(frames10) * seld::DirectionGrid::kElevations;
    for (int i = 0; i < n; ++i) {
      fused[static_cast<std::size_t>(i)] = seld::fuse_outputs(
          std::span<const double>(
              sed_probs->values.data() + static_cast<std::size_t>(i) * sed_stride,
              sed_stride),
          std::span<const double>(
              azi->values.data() + static_cast<std::size_t>(i) * azi_stride, azi_stride),
          std::span<const double>(
              ele->values.data() + static_cast<std::size_t>(i) * ele_stride, ele_stride),
          frames10);
    }
    return fused;
  }
};

struct FusedSet {
  std::vector<std::vector<double>> fused;  // per chunk, [T10 * 105]
  std::vector<seld::FrameTargets> targets;
};

FusedSet precompute_fused(const ChunkDataset& ds, UpstreamBatcher& upstream,
                          int batch_size, int frames10) {
  FusedSet set;
  std::vector<int> order(static_cast<std::size_t>(ds.num_chunks()));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t begin = 0; begin < order.size();
       begin += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    Batch batch = assemble_batch(ds, order, begin, end);
    auto fused = upstream.fuse(batch.features, batch.n, frames10);
    for (int i = 0; i < batch.n; ++i) {
      set.fused.push_back(std::move(fused[static_cast<std::size_t>(i)]));
    }
    for (std::size_t i = begin; i < end; ++i) {
      set.targets.push_back(ds.get(order[i]).targets);
    }
  }
  return set;
}

}  // namespace

TrainResult train_stage2_alignment(const Stage2Options& opt) {
  TrainConfig cfg = opt.config;
  cfg.validate();
  if (cfg.stage != "align") {
    throw ConfigError("train_stage2_alignment: stage must be align");
  }

  auto sed = seld::SedModel::from_checkpoint(nn::load_checkpoint(opt.sed_ckpt));
  std::optional<seld::DoaModel> doa, azi_hist, ele_hist;
  for (const auto& path : opt.doa_ckpts) {
    auto model = seld::DoaModel::from_checkpoint(nn::load_checkpoint(path));
    if (model.kind == "azi-hist") {
      azi_hist = std::move(model);
    } else if (model.kind == "ele-hist") {
      ele_hist = std::move(model);
    } else {
      doa = std::move(model);
    }
  }
  const bool has_hist_pair = azi_hist.has_value() && ele_hist.has_value();
  if (doa.has_value() == has_hist_pair) {
    throw ConfigError(
        "train_stage2_alignment: need either one doa-iv/doa-gcc checkpoint or both "
        "azi-hist and ele-hist checkpoints");
  }

  std::vector<std::string> kinds = {
      seld::feature_kind_for(sed.kind, sed.trunk.spec.in_features)};
  if (doa) {
    kinds.push_back(seld::feature_kind_for(doa->kind));
  } else {
    kinds.push_back("azihist");
    kinds.push_back("elehist");
  }

  ChunkDataset train_ds(opt.manifest, "train", kinds, opt.cache_root, cfg.chunk_seconds);
  ChunkDataset val_ds(opt.manifest, "val", kinds, opt.cache_root, cfg.chunk_seconds);
  if (train_ds.num_chunks() == 0) {
    throw ConfigError("train_stage2_alignment: empty train split");
  }

  UpstreamBatcher upstream;
  upstream.sed = &sed;
  upstream.doa = doa ? &*doa : nullptr;
  upstream.azi_hist = azi_hist ? &*azi_hist : nullptr;
  upstream.ele_hist = ele_hist ? &*ele_hist : nullptr;
  upstream.kinds = kinds;

  const int frames10 = cfg.chunk_frames10();
  const auto train_set = precompute_fused(train_ds, upstream, cfg.batch_size, frames10);
  const auto val_set = precompute_fused(val_ds, upstream, cfg.batch_size, frames10);

  auto align = seld::AlignModel::make(opt.align_gru_hidden, cfg.seed);
  auto params = align.parameters();
  nn::AdamState adam;
  adam.init(params);

  const auto run_batch = [&](const FusedSet& set, const std::vector<int>& ids,
                             std::size_t begin, std::size_t end, bool training) {
    const int n = static_cast<int>(end - begin);
    auto fused = nn::Tensor::leaf({n, frames10, seld::kFusedWidth});
    BatchTargets targets;
    for (int i = 0; i < n; ++i) {
      const int id = ids[begin + static_cast<std::size_t>(i)];
      const auto& src = set.fused[static_cast<std::size_t>(id)];
      std::copy(src.begin(), src.end(),
                fused->values.begin() +
                    static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(src.size()));
      const auto& t = set.targets[static_cast<std::size_t>(id)];
      targets.sed.insert(targets.sed.end(), t.sed.begin(), t.sed.end());
      targets.xyz.insert(targets.xyz.end(), t.doa_xyz.begin(), t.doa_xyz.end());
      targets.mask.insert(targets.mask.end(), t.doa_mask.begin(), t.doa_mask.end());
    }
    auto out = align.forward(fused);
    auto loss = seld::alignment_loss(out, targets.sed, targets.xyz, targets.mask,
                                     cfg.loss_w_sed, cfg.loss_w_doa);
    const double value = loss->values[0];
    if (training) nn::backward(loss);
    return value;
  };

  nn::Checkpoint best;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<TraceRow> trace;
  std::vector<int> train_ids(train_set.fused.size());
  std::iota(train_ids.begin(), train_ids.end(), 0);
  std::vector<int> val_ids(val_set.fused.size());
  std::iota(val_ids.begin(), val_ids.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    Rng rng(Rng::mix(cfg.seed, 3000 + static_cast<std::uint64_t>(epoch)));
    auto ids = train_ids;
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[static_cast<std::size_t>(
                                rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double train_acc = 0.0;
    std::int64_t train_count = 0;
    for (std::size_t begin = 0; begin < ids.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(ids.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      nn::zero_grads(params);
      const double loss = run_batch(train_set, ids, begin, end, /*training=*/true);
      if (!std::isfinite(loss)) {
        throw DivergenceError("train_stage2_alignment: non-finite loss at epoch " +
                              std::to_string(epoch));
      }
      nn::adam_step(params, adam, lr);
      train_acc += loss * static_cast<double>(end - begin);
      train_count += static_cast<std::int64_t>(end - begin);
    }

    double val_acc = 0.0;
    std::int64_t val_count = 0;
    {
      nn::NoGradGuard guard;
      for (std::size_t begin = 0; begin < val_ids.size();
           begin += static_cast<std::size_t>(cfg.batch_size)) {
        const auto end =
            std::min(val_ids.size(), begin + static_cast<std::size_t>(cfg.batch_size));
        val_acc += run_batch(val_set, val_ids, begin, end, /*training=*/false) *
                   static_cast<double>(end - begin);
        val_count += static_cast<std::int64_t>(end - begin);
      }
    }

    TraceRow row;
    row.epoch = epoch;
    row.train_loss = train_count > 0 ? train_acc / static_cast<double>(train_count) : 0.0;
    row.val_loss = val_count > 0 ? val_acc / static_cast<double>(val_count) : 0.0;
    row.lr = lr;
    trace.push_back(row);
    if (val_count == 0 || row.val_loss < best_val) {
      best_val = row.val_loss;
      best_epoch = epoch;
      best = align.to_checkpoint();
    }
  }

  std::filesystem::create_directories(opt.out_dir);
  TrainResult result;
  result.checkpoint = opt.out_dir / "align.ckpt";
  result.trace_csv = opt.out_dir / "align_trace.csv";
  nn::save_checkpoint(result.checkpoint, best);
  write_trace_csv(result.trace_csv, trace);
  result.best_val_loss = best_val;
  result.best_epoch = best_epoch;
  result.trace = std::move(trace);
  return result;
}

SeldPipeline SeldPipeline::load(const std::filesystem::path& sed_ckpt,
                                const std::vector<std::filesystem::path>& doa_ckpts,
                                const std::filesystem::path& align_ckpt) {
  SeldPipeline p{
      seld::SedModel::from_checkpoint(nn::load_checkpoint(sed_ckpt)),
      std::nullopt,
      std::nullopt,
      std::nullopt,
      seld::AlignModel::from_checkpoint(nn::load_checkpoint(align_ckpt))};
  for (const auto& path : doa_ckpts) {
    auto model = seld::DoaModel::from_checkpoint(nn::load_checkpoint(path));
    if (model.kind == "azi-hist") {
      p.azi_hist = std::move(model);
    } else if (model.kind == "ele-hist") {
      p.ele_hist = std::move(model);
    } else {
      p.doa = std::move(model);
    }
  }
  if (!p.doa && !(p.azi_hist && p.ele_hist)) {
    throw ConfigError("SeldPipeline: need doa-iv/doa-gcc or azi-hist + ele-hist");
  }
  return p;
}

std::vector<std::string> SeldPipeline::feature_kinds() const {
  std::vector<std::string> kinds = {
      seld::feature_kind_for(sed.kind, sed.trunk.spec.in_features)};
  if (doa) {
    kinds.push_back(seld::feature_kind_for(doa->kind));
  } else {
    kinds.push_back("azihist");
    kinds.push_back("elehist");
  }
  return kinds;
}

std::vector<double> SeldPipeline::fused_outputs(
    const std::map<std::string, dsp::FeatureArray>& features, int* frames10_out) {
  nn::NoGradGuard guard;
  const auto kinds = feature_kinds();
  int frames80 = -1;
  for (const auto& kind : kinds) {
    const auto it = features.find(kind);
    if (it == features.end()) {
      throw ConfigError("SeldPipeline: missing feature kind " + kind);
    }
    if (frames80 < 0) frames80 = it->second.shape[1];
    if (it->second.shape[1] != frames80) {
      throw ShapeError("SeldPipeline: inconsistent feature frame counts");
    }
  }
  // Pad to a multiple of 16 by repeating the final frame, then window.
  const int padded = (frames80 + 15) / 16 * 16;
  const int total10 = padded / 8;
  std::vector<double> fused_all(static_cast<std::size_t>(total10) * seld::kFusedWidth);

  UpstreamBatcher upstream;
  upstream.sed = &sed;
  upstream.doa = doa ? &*doa : nullptr;
  upstream.azi_hist = azi_hist ? &*azi_hist : nullptr;
  upstream.ele_hist = ele_hist ? &*ele_hist : nullptr;
  upstream.kinds = kinds;

  for (int t0 = 0; t0 < padded; t0 += kInferWindow) {
    const int t_len = std::min(kInferWindow, padded - t0);
    std::vector<nn::TensorPtr> window_features;
    for (const auto& kind : kinds) {
      const auto& f = features.at(kind);
      const int channels = f.shape[0];
      const int width = f.shape[2];
      auto tensor = nn::Tensor::leaf({1, channels, t_len, width});
      for (int c = 0; c < channels; ++c) {
        for (int t = 0; t < t_len; ++t) {
          const int src_t = std::min(t0 + t, frames80 - 1);
          const double* src =
              f.data.data() + (static_cast<std::size_t>(c) * frames80 + src_t) * width;
          std::copy(src, src + width,
                    tensor->values.begin() +
                        (static_cast<std::ptrdiff_t>(c) * t_len + t) * width);
        }
      }
      if (is_hist_kind(kind)) {
        dsp::FeatureArray tmp;
        tmp.kind = kind;
        tmp.shape = {1, t_len, width};
        tmp.data = std::move(tensor->values);
        normalize_hist_frames(tmp);
        tensor->values = std::move(tmp.data);
      }
      window_features.push_back(std::move(tensor));
    }
    const int w10 = t_len / 8;
    auto fused = upstream.fuse(window_features, 1, w10);
    std::copy(fused[0].begin(), fused[0].end(),
              fused_all.begin() + static_cast<std::ptrdiff_t>(t0 / 8) * seld::kFusedWidth);
  }
  *frames10_out = total10;
  return fused_all;
}

seld::SeldPrediction SeldPipeline::infer_clip(const MultichannelClip& clip) {
  auto features = compute_clip_features(clip, feature_kinds());
  int frames10 = 0;
  auto fused = fused_outputs(features, &frames10);

  nn::NoGradGuard guard;
  auto fused_tensor = nn::Tensor::from({1, frames10, seld::kFusedWidth}, std::move(fused));
  auto out = align.forward(fused_tensor);
  seld::SeldPrediction pred;
  pred.n_frames = frames10;
  pred.probs = out.probs->values;
  pred.xyz = out.xyz->values;
  return pred;
}

}  // namespace seldkit::train
