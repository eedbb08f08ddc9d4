// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include <json.hpp>

namespace seldkit::config {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) {
      throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read_to(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

void parse_augment(const json& j, const std::string& where, train::AugmentPolicy* p) {
  require_keys(j, where,
               {"mixup", "freq_shift", "cutout", "specaugment", "prob", "max_freq_shift"});
  read_to(j, "mixup", &p->mixup);
  read_to(j, "freq_shift", &p->freq_shift);
  read_to(j, "cutout", &p->cutout);
  read_to(j, "specaugment", &p->specaugment);
  read_to(j, "prob", &p->prob);
  read_to(j, "max_freq_shift", &p->max_freq_shift);
}

void parse_train(const json& j, const std::string& where, train::TrainConfig* cfg) {
  require_keys(j, where,
               {"chunk_seconds", "epochs", "lr_start", "lr_end", "batch_size",
                "chunk_fraction", "augment", "loss_w_sed", "loss_w_doa"});
  read_to(j, "chunk_seconds", &cfg->chunk_seconds);
  read_to(j, "epochs", &cfg->epochs);
  read_to(j, "lr_start", &cfg->lr_start);
  read_to(j, "lr_end", &cfg->lr_end);
  read_to(j, "batch_size", &cfg->batch_size);
  read_to(j, "chunk_fraction", &cfg->chunk_fraction);
  read_to(j, "loss_w_sed", &cfg->loss_w_sed);
  read_to(j, "loss_w_doa", &cfg->loss_w_doa);
  if (j.contains("augment")) parse_augment(j.at("augment"), where + ".augment", &cfg->augment);
}

void parse_model(const json& j, const std::string& where, ModelSection* section) {
  require_keys(j, where,
               {"kind", "conv_filters", "gru_hidden", "gru_layers", "in_channels",
                "in_features", "train"});
  const std::string old_kind = section->kind;
  read_to(j, "kind", &section->kind);
  if (section->kind != old_kind) {
    const auto preserved = section->train;
    section->spec = seld::preset_spec(section->kind);
    section->train = preserved;
  }
  read_to(j, "conv_filters", &section->spec.conv_filters);
  read_to(j, "gru_hidden", &section->spec.gru_hidden);
  read_to(j, "gru_layers", &section->spec.gru_layers);
  read_to(j, "in_channels", &section->spec.in_channels);
  read_to(j, "in_features", &section->spec.in_features);
  if (j.contains("train")) parse_train(j.at("train"), where + ".train", &section->train);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.dataset.out_dir = "data/desk";
  cfg.dataset.train_clips = 200;
  cfg.dataset.val_clips = 40;
  cfg.dataset.test_clips = 40;
  cfg.dataset.clip_seconds = 30.0;
  cfg.dataset.n_classes = 8;
  cfg.dataset.max_overlap = 2;
  cfg.dataset.snr_db = 60.0;
  cfg.dataset.seed = cfg.seed;

  cfg.features.kinds = {"logmel128", "iv128"};

  cfg.sed.kind = "sed-m";
  cfg.sed.spec = {{16, 32, 64, 128}, 64, 1, 4, 128};
  cfg.sed.train.stage = "sed";
  cfg.sed.train.chunk_seconds = 4.0;
  cfg.sed.train.epochs = 8;
  cfg.sed.train.batch_size = 16;
  cfg.sed.train.seed = cfg.seed;

  cfg.doa.kind = "doa-iv";
  cfg.doa.spec = {{16, 32, 64, 128}, 64, 2, 3, 128};
  cfg.doa.train.stage = "doa";
  cfg.doa.train.chunk_seconds = 4.0;
  cfg.doa.train.epochs = 8;
  cfg.doa.train.batch_size = 16;
  cfg.doa.train.seed = cfg.seed;

  cfg.align.gru_hidden = 64;
  cfg.align.train.stage = "align";
  cfg.align.train.chunk_seconds = 6.0;
  cfg.align.train.epochs = 40;
  cfg.align.train.batch_size = 32;
  cfg.align.train.seed = cfg.seed;
  cfg.align.train.augment.mixup = false;
  cfg.align.train.augment.freq_shift = false;
  cfg.align.train.augment.cutout = false;
  cfg.align.train.augment.specaugment = false;
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config: parse error in " + path.string() + ": " + e.what());
  }

  RunConfig cfg = defaults();
  require_keys(j, "<root>",
               {"seed", "format", "threshold", "dataset", "features", "sed", "doa",
                "align"});
  read_to(j, "seed", &cfg.seed);
  if (j.contains("format")) {
    cfg.format = scene::parse_format(j.at("format").get<std::string>());
  }
  read_to(j, "threshold", &cfg.threshold);

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    require_keys(d, "dataset",
                 {"out_dir", "train_clips", "val_clips", "test_clips", "clip_seconds",
                  "n_classes", "max_overlap", "snr_db"});
    if (d.contains("out_dir")) cfg.dataset.out_dir = d.at("out_dir").get<std::string>();
    read_to(d, "train_clips", &cfg.dataset.train_clips);
    read_to(d, "val_clips", &cfg.dataset.val_clips);
    read_to(d, "test_clips", &cfg.dataset.test_clips);
    read_to(d, "clip_seconds", &cfg.dataset.clip_seconds);
    read_to(d, "n_classes", &cfg.dataset.n_classes);
    read_to(d, "max_overlap", &cfg.dataset.max_overlap);
    read_to(d, "snr_db", &cfg.dataset.snr_db);
  }
  if (j.contains("features")) {
    const auto& f = j.at("features");
    require_keys(f, "features", {"cache_dir", "kinds"});
    read_to(f, "cache_dir", &cfg.features.cache_dir);
    read_to(f, "kinds", &cfg.features.kinds);
  }
  if (j.contains("sed")) parse_model(j.at("sed"), "sed", &cfg.sed);
  if (j.contains("doa")) parse_model(j.at("doa"), "doa", &cfg.doa);
  if (j.contains("align")) {
    const auto& a = j.at("align");
    require_keys(a, "align", {"gru_hidden", "train"});
    read_to(a, "gru_hidden", &cfg.align.gru_hidden);
    if (a.contains("train")) parse_train(a.at("train"), "align.train", &cfg.align.train);
  }

  cfg.dataset.seed = cfg.seed;
  cfg.dataset.format = cfg.format;
  cfg.sed.train.stage = "sed";
  cfg.sed.train.seed = cfg.seed;
  cfg.doa.train.stage = "doa";
  cfg.doa.train.seed = cfg.seed;
  cfg.align.train.stage = "align";
  cfg.align.train.seed = cfg.seed;
  return cfg;
}

std::filesystem::path RunConfig::cache_root() const {
  if (!features.cache_dir.empty()) return features.cache_dir;
  if (const char* env = std::getenv("SELDKIT_CACHE"); env != nullptr && *env != '\0') {
    return std::filesystem::path(env);
  }
  return dataset.out_dir / "cache";
}

}  // namespace seldkit::config
