// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/models.hpp"

#include <cmath>

namespace seldkit::seld {

namespace {

nn::TensorPtr uniform_leaf(std::vector<int> shape, double bound, Rng& rng) {
  auto t = nn::Tensor::leaf(std::move(shape), true);
  for (auto& v : t->values) v = rng.uniform(-bound, bound);
  return t;
}

void push_record(std::vector<nn::CheckpointRecord>* records, const std::string& name,
                 const nn::TensorPtr& t) {
  records->push_back({name, t->shape, t->values});
}

void load_record(const nn::Checkpoint& ckpt, const std::string& name,
                 const nn::TensorPtr& t) {
  const auto* r = ckpt.find(name);
  if (r == nullptr) throw IoError("checkpoint missing record: " + name);
  if (r->shape != t->shape) throw ShapeError("checkpoint record shape mismatch: " + name);
  t->values = r->values;
}

std::vector<double> meta_values(const nn::Checkpoint& ckpt, const std::string& name) {
  const auto* r = ckpt.find(name);
  if (r == nullptr) throw IoError("checkpoint missing record: " + name);
  return r->values;
}

void trunk_records(const CrnnTrunk& trunk, std::vector<nn::CheckpointRecord>* records) {
  records->push_back({"meta.conv_filters",
                      {static_cast<int>(trunk.spec.conv_filters.size())},
                      std::vector<double>(trunk.spec.conv_filters.begin(),
                                          trunk.spec.conv_filters.end())});
  records->push_back({"meta.gru",
                      {2},
                      {static_cast<double>(trunk.spec.gru_hidden),
                       static_cast<double>(trunk.spec.gru_layers)}});
  records->push_back({"meta.input",
                      {2},
                      {static_cast<double>(trunk.spec.in_channels),
                       static_cast<double>(trunk.spec.in_features)}});
  for (std::size_t i = 0; i < trunk.conv.size(); ++i) {
    const auto& blk = trunk.conv[i];
    const std::string prefix = "conv" + std::to_string(i + 1) + ".";
    push_record(records, prefix + "kernel", blk.kernel);
    push_record(records, prefix + "bias", blk.bias);
    push_record(records, prefix + "bn_gamma", blk.bn_gamma);
    push_record(records, prefix + "bn_beta", blk.bn_beta);
    records->push_back({prefix + "bn_mean", {blk.out_channels()}, blk.bn_mean});
    records->push_back({prefix + "bn_var", {blk.out_channels()}, blk.bn_var});
  }
  for (std::size_t i = 0; i < trunk.grus.size(); ++i) {
    const std::string prefix = "gru" + std::to_string(i + 1) + ".";
    const char* dir_name[2] = {"fwd.", "bwd."};
    for (int d = 0; d < 2; ++d) {
      const auto& dp = trunk.grus[i].dir[d];
      push_record(records, prefix + dir_name[d] + "w_ih", dp.w_ih);
      push_record(records, prefix + dir_name[d] + "w_hh", dp.w_hh);
      push_record(records, prefix + dir_name[d] + "b_ih", dp.b_ih);
      push_record(records, prefix + dir_name[d] + "b_hh", dp.b_hh);
    }
  }
}

void load_trunk(const nn::Checkpoint& ckpt, CrnnTrunk* trunk) {
  for (std::size_t i = 0; i < trunk->conv.size(); ++i) {
    auto& blk = trunk->conv[i];
    const std::string prefix = "conv" + std::to_string(i + 1) + ".";
    load_record(ckpt, prefix + "kernel", blk.kernel);
    load_record(ckpt, prefix + "bias", blk.bias);
    load_record(ckpt, prefix + "bn_gamma", blk.bn_gamma);
    load_record(ckpt, prefix + "bn_beta", blk.bn_beta);
    blk.bn_mean = meta_values(ckpt, prefix + "bn_mean");
    blk.bn_var = meta_values(ckpt, prefix + "bn_var");
  }
  for (std::size_t i = 0; i < trunk->grus.size(); ++i) {
    const std::string prefix = "gru" + std::to_string(i + 1) + ".";
    const char* dir_name[2] = {"fwd.", "bwd."};
    for (int d = 0; d < 2; ++d) {
      auto& dp = trunk->grus[i].dir[d];
      load_record(ckpt, prefix + dir_name[d] + "w_ih", dp.w_ih);
      load_record(ckpt, prefix + dir_name[d] + "w_hh", dp.w_hh);
      load_record(ckpt, prefix + dir_name[d] + "b_ih", dp.b_ih);
      load_record(ckpt, prefix + dir_name[d] + "b_hh", dp.b_hh);
    }
  }
}

CrnnSpec spec_from_checkpoint(const nn::Checkpoint& ckpt) {
  CrnnSpec spec;
  spec.conv_filters.clear();
  for (double v : meta_values(ckpt, "meta.conv_filters")) {
    spec.conv_filters.push_back(static_cast<int>(v));
  }
  const auto gru = meta_values(ckpt, "meta.gru");
  spec.gru_hidden = static_cast<int>(gru.at(0));
  spec.gru_layers = static_cast<int>(gru.at(1));
  const auto input = meta_values(ckpt, "meta.input");
  spec.in_channels = static_cast<int>(input.at(0));
  spec.in_features = static_cast<int>(input.at(1));
  return spec;
}

nn::TensorPtr head_forward(const nn::TensorPtr& features, const nn::TensorPtr& w,
                           const nn::TensorPtr& b) {
  return nn::upsample_time2(nn::sigmoid_op(nn::linear_forward(features, w, b)));
}

}  // namespace

CrnnSpec preset_spec(const std::string& kind) {
  CrnnSpec spec;
  if (kind == "sed-m") {
    spec = {{64, 128, 256, 512}, 128, 1, 4, 128};
  } else if (kind == "sed-t") {
    spec = {{64, 128, 256, 512}, 128, 1, 1, 64};
  } else if (kind == "doa-iv") {
    spec = {{32, 64, 128, 256}, 128, 2, 3, 128};
  } else if (kind == "doa-gcc") {
    spec = {{32, 64, 128, 256}, 128, 2, 6, 128};
  } else if (kind == "azi-hist") {
    spec = {{32, 64, 128, 256}, 128, 2, 1, DirectionGrid::kAzimuths};
  } else if (kind == "ele-hist") {
    spec = {{16, 32, 64, 128}, 64, 2, 1, DirectionGrid::kElevations};
  } else {
    throw ConfigError("unknown model kind: " + kind);
  }
  return spec;
}

bool kind_has_azi_head(const std::string& kind) { return kind != "ele-hist"; }
bool kind_has_ele_head(const std::string& kind) { return kind != "azi-hist"; }

std::string feature_kind_for(const std::string& kind, int n_mels_override) {
  if (kind == "sed-m") {
    return "logmel" + std::to_string(n_mels_override > 0 ? n_mels_override : 128);
  }
  if (kind == "sed-t") {
    return "logmel" + std::to_string(n_mels_override > 0 ? n_mels_override : 64);
  }
  if (kind == "doa-iv") return "iv128";
  if (kind == "doa-gcc") return "gcc128";
  if (kind == "azi-hist") return "azihist";
  if (kind == "ele-hist") return "elehist";
  throw ConfigError("unknown model kind: " + kind);
}

CrnnTrunk CrnnTrunk::make(const CrnnSpec& spec, Rng& rng) {
  if (spec.conv_filters.size() != 4) {
    throw ConfigError("CrnnTrunk: expected exactly 4 conv filter counts");
  }
  CrnnTrunk trunk;
  trunk.spec = spec;
  int in_ch = spec.in_channels;
  int f = spec.in_features;
  for (int filters : spec.conv_filters) {
    const int pool_f = (f % 2 == 0 && f > 1) ? 2 : 1;
    trunk.conv.push_back(nn::ConvBlockParams::make(in_ch, filters, 2, pool_f, rng));
    in_ch = filters;
    f /= pool_f;
  }
  int gru_in = spec.conv_filters.back();
  for (int layer = 0; layer < spec.gru_layers; ++layer) {
    trunk.grus.push_back(nn::GruParams::make(gru_in, spec.gru_hidden, rng));
    gru_in = 2 * spec.gru_hidden;
  }
  return trunk;
}

nn::TensorPtr CrnnTrunk::forward(const nn::TensorPtr& x, bool train_mode) {
  if (x->ndim() != 4) throw ShapeError("CrnnTrunk: input must be [N,C,T,F]");
  if (x->dim(2) % 16 != 0) {
    throw ShapeError("CrnnTrunk: T=" + std::to_string(x->dim(2)) +
                     " must be divisible by 16");
  }
  auto h = x;
  for (auto& blk : conv) h = conv_block_forward(h, blk, train_mode);
  auto seq = nn::mean_over_freq(h);
  for (auto& gru : grus) seq = nn::bigru_forward(seq, gru);
  return seq;
}

void CrnnTrunk::collect(std::vector<nn::TensorPtr>* params) const {
  for (const auto& blk : conv) {
    params->push_back(blk.kernel);
    params->push_back(blk.bias);
    params->push_back(blk.bn_gamma);
    params->push_back(blk.bn_beta);
  }
  for (const auto& gru : grus) {
    for (int d = 0; d < 2; ++d) {
      params->push_back(gru.dir[d].w_ih);
      params->push_back(gru.dir[d].w_hh);
      params->push_back(gru.dir[d].b_ih);
      params->push_back(gru.dir[d].b_hh);
    }
  }
}

SedModel SedModel::make(const std::string& kind, const CrnnSpec& spec,
                        std::uint64_t seed) {
  if (kind != "sed-m" && kind != "sed-t") {
    throw ConfigError("SedModel: kind must be sed-m or sed-t, got " + kind);
  }
  Rng rng(seed);
  SedModel model;
  model.kind = kind;
  model.trunk = CrnnTrunk::make(spec, rng);
  const int d = 2 * spec.gru_hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  model.fc_w = uniform_leaf({d, kNumClasses}, bound, rng);
  model.fc_b = uniform_leaf({kNumClasses}, bound, rng);
  return model;
}

nn::TensorPtr SedModel::forward(const nn::TensorPtr& x, bool train_mode) {
  return head_forward(trunk.forward(x, train_mode), fc_w, fc_b);
}

std::vector<nn::TensorPtr> SedModel::parameters() const {
  std::vector<nn::TensorPtr> params;
  trunk.collect(&params);
  params.push_back(fc_w);
  params.push_back(fc_b);
  return params;
}

nn::Checkpoint SedModel::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.kind = kind;
  trunk_records(trunk, &ckpt.records);
  push_record(&ckpt.records, "fc.w", fc_w);
  push_record(&ckpt.records, "fc.b", fc_b);
  return ckpt;
}

SedModel SedModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.kind != "sed-m" && ckpt.kind != "sed-t") {
    throw ConfigError("checkpoint kind mismatch: expected a SED model, got " +
                      ckpt.kind);
  }
  SedModel model = make(ckpt.kind, spec_from_checkpoint(ckpt), /*seed=*/0);
  load_trunk(ckpt, &model.trunk);
  load_record(ckpt, "fc.w", model.fc_w);
  load_record(ckpt, "fc.b", model.fc_b);
  return model;
}

int SedModel::load_conv_weights(const nn::Checkpoint& ckpt) {
  int matched = 0;
  for (std::size_t i = 0; i < trunk.conv.size(); ++i) {
    auto& blk = trunk.conv[i];
    const std::string prefix = "conv" + std::to_string(i + 1) + ".";
    const auto try_tensor = [&](const std::string& name, const nn::TensorPtr& t) {
      const auto* r = ckpt.find(name);
      if (r != nullptr && r->shape == t->shape) {
        t->values = r->values;
        ++matched;
      }
    };
    try_tensor(prefix + "kernel", blk.kernel);
    try_tensor(prefix + "bias", blk.bias);
    try_tensor(prefix + "bn_gamma", blk.bn_gamma);
    try_tensor(prefix + "bn_beta", blk.bn_beta);
    const auto* mean = ckpt.find(prefix + "bn_mean");
    if (mean != nullptr && mean->values.size() == blk.bn_mean.size()) {
      blk.bn_mean = mean->values;
      ++matched;
    }
    const auto* var = ckpt.find(prefix + "bn_var");
    if (var != nullptr && var->values.size() == blk.bn_var.size()) {
      blk.bn_var = var->values;
      ++matched;
    }
  }
  return matched;
}

DoaModel DoaModel::make(const std::string& kind, const CrnnSpec& spec,
                        std::uint64_t seed) {
  if (kind != "doa-iv" && kind != "doa-gcc" && kind != "azi-hist" &&
      kind != "ele-hist") {
    throw ConfigError("DoaModel: unknown kind " + kind);
  }
  Rng rng(seed);
  DoaModel model;
  model.kind = kind;
  model.trunk = CrnnTrunk::make(spec, rng);
  const int d = 2 * spec.gru_hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  if (kind_has_azi_head(kind)) {
    model.azi_w = uniform_leaf({d, DirectionGrid::kAzimuths}, bound, rng);
    model.azi_b = uniform_leaf({DirectionGrid::kAzimuths}, bound, rng);
  }
  if (kind_has_ele_head(kind)) {
    model.ele_w = uniform_leaf({d, DirectionGrid::kElevations}, bound, rng);
    model.ele_b = uniform_leaf({DirectionGrid::kElevations}, bound, rng);
  }
  return model;
}

DoaModel::Output DoaModel::forward(const nn::TensorPtr& x, bool train_mode) {
  auto features = trunk.forward(x, train_mode);
  Output out;
  if (has_azi()) out.azi = head_forward(features, azi_w, azi_b);
  if (has_ele()) out.ele = head_forward(features, ele_w, ele_b);
  return out;
}

std::vector<nn::TensorPtr> DoaModel::parameters() const {
  std::vector<nn::TensorPtr> params;
  trunk.collect(&params);
  if (azi_w) {
    params.push_back(azi_w);
    params.push_back(azi_b);
  }
  if (ele_w) {
    params.push_back(ele_w);
    params.push_back(ele_b);
  }
  return params;
}

nn::Checkpoint DoaModel::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.kind = kind;
  trunk_records(trunk, &ckpt.records);
  if (azi_w) {
    push_record(&ckpt.records, "azi_fc.w", azi_w);
    push_record(&ckpt.records, "azi_fc.b", azi_b);
  }
  if (ele_w) {
    push_record(&ckpt.records, "ele_fc.w", ele_w);
    push_record(&ckpt.records, "ele_fc.b", ele_b);
  }
  return ckpt;
}

DoaModel DoaModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  DoaModel model = make(ckpt.kind, spec_from_checkpoint(ckpt), /*seed=*/0);
  load_trunk(ckpt, &model.trunk);
  if (model.azi_w) {
    load_record(ckpt, "azi_fc.w", model.azi_w);
    load_record(ckpt, "azi_fc.b", model.azi_b);
  }
  if (model.ele_w) {
    load_record(ckpt, "ele_fc.w", model.ele_w);
    load_record(ckpt, "ele_fc.b", model.ele_b);
  }
  return model;
}

std::vector<double> fuse_outputs(std::span<const double> sed_probs,
                                 std::span<const double> azi_probs,
                                 std::span<const double> ele_probs, int n_frames) {
  const auto frames = static_cast<std::size_t>(n_frames);
  if (sed_probs.size() != frames * kNumClasses ||
      azi_probs.size() != frames * DirectionGrid::kAzimuths ||
      ele_probs.size() != frames * DirectionGrid::kElevations) {
    throw ShapeError("fuse_outputs: stream lengths do not match frame count");
  }
  std::vector<double> fused(frames * kFusedWidth);
  for (std::size_t t = 0; t < frames; ++t) {
    double* row = fused.data() + t * kFusedWidth;
    const double* s = sed_probs.data() + t * kNumClasses;
    const double* a = azi_probs.data() + t * DirectionGrid::kAzimuths;
    const double* e = ele_probs.data() + t * DirectionGrid::kElevations;
    std::copy(s, s + kNumClasses, row);
    std::copy(a, a + DirectionGrid::kAzimuths, row + kNumClasses);
    std::copy(e, e + DirectionGrid::kElevations,
              row + kNumClasses + DirectionGrid::kAzimuths);
  }
  return fused;
}

AlignModel AlignModel::make(int gru_hidden, std::uint64_t seed) {
  Rng rng(seed);
  AlignModel model;
  model.gru_hidden = gru_hidden;
  model.grus.push_back(nn::GruParams::make(kFusedWidth, gru_hidden, rng));
  model.grus.push_back(nn::GruParams::make(2 * gru_hidden, gru_hidden, rng));
  const int d = 2 * gru_hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  model.sed_w = uniform_leaf({d, kNumClasses}, bound, rng);
  model.sed_b = uniform_leaf({kNumClasses}, bound, rng);
  model.doa_w = uniform_leaf({d, kNumClasses * 3}, bound, rng);
  model.doa_b = uniform_leaf({kNumClasses * 3}, bound, rng);
  return model;
}

AlignModel::Output AlignModel::forward(const nn::TensorPtr& fused) {
  if (fused->ndim() != 3 || fused->shape.back() != kFusedWidth) {
    throw ShapeError("AlignModel: input must be [N,T,105]");
  }
  auto h = fused;
  for (auto& gru : grus) h = nn::bigru_forward(h, gru);
  Output out;
  out.probs = nn::sigmoid_op(nn::linear_forward(h, sed_w, sed_b));
  auto xyz_flat = nn::tanh_op(nn::linear_forward(h, doa_w, doa_b));
  out.xyz = nn::reshape(xyz_flat, {fused->dim(0), fused->dim(1), kNumClasses, 3});
  return out;
}

std::vector<nn::TensorPtr> AlignModel::parameters() const {
  std::vector<nn::TensorPtr> params;
  for (const auto& gru : grus) {
    for (int d = 0; d < 2; ++d) {
      params.push_back(gru.dir[d].w_ih);
      params.push_back(gru.dir[d].w_hh);
      params.push_back(gru.dir[d].b_ih);
      params.push_back(gru.dir[d].b_hh);
    }
  }
  params.push_back(sed_w);
  params.push_back(sed_b);
  params.push_back(doa_w);
  params.push_back(doa_b);
  return params;
}

nn::Checkpoint AlignModel::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.records.push_back({"meta.gru", {2}, {static_cast<double>(gru_hidden), 2.0}});
  for (std::size_t i = 0; i < grus.size(); ++i) {
    const std::string prefix = "gru" + std::to_string(i + 1) + ".";
    const char* dir_name[2] = {"fwd.", "bwd."};
    for (int d = 0; d < 2; ++d) {
      const auto& dp = grus[i].dir[d];
      push_record(&ckpt.records, prefix + dir_name[d] + "w_ih", dp.w_ih);
      push_record(&ckpt.records, prefix + dir_name[d] + "w_hh", dp.w_hh);
      push_record(&ckpt.records, prefix + dir_name[d] + "b_ih", dp.b_ih);
      push_record(&ckpt.records, prefix + dir_name[d] + "b_hh", dp.b_hh);
    }
  }
  push_record(&ckpt.records, "sed_fc.w", sed_w);
  push_record(&ckpt.records, "sed_fc.b", sed_b);
  push_record(&ckpt.records, "doa_fc.w", doa_w);
  push_record(&ckpt.records, "doa_fc.b", doa_b);
  return ckpt;
}

AlignModel AlignModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.kind != "align") {
    throw ConfigError("checkpoint kind mismatch: expected align, got " + ckpt.kind);
  }
  const auto gru = meta_values(ckpt, "meta.gru");
  AlignModel model = make(static_cast<int>(gru.at(0)), /*seed=*/0);
  for (std::size_t i = 0; i < model.grus.size(); ++i) {
    const std::string prefix = "gru" + std::to_string(i + 1) + ".";
    const char* dir_name[2] = {"fwd.", "bwd."};
    for (int d = 0; d < 2; ++d) {
      auto& dp = model.grus[i].dir[d];
      load_record(ckpt, prefix + dir_name[d] + "w_ih", dp.w_ih);
      load_record(ckpt, prefix + dir_name[d] + "w_hh", dp.w_hh);
      load_record(ckpt, prefix + dir_name[d] + "b_ih", dp.b_ih);
      load_record(ckpt, prefix + dir_name[d] + "b_hh", dp.b_hh);
    }
  }
  load_record(ckpt, "sed_fc.w", model.sed_w);
  load_record(ckpt, "sed_fc.b", model.sed_b);
  load_record(ckpt, "doa_fc.w", model.doa_w);
  load_record(ckpt, "doa_fc.b", model.doa_b);
  return model;
}

nn::TensorPtr alignment_loss(const AlignModel::Output& out,
                             std::span<const double> sed_targets,
                             std::span<const double> xyz_targets,
                             std::span<const double> doa_mask, double w_sed,
                             double w_doa) {
  if (doa_mask.size() * 3 != xyz_targets.size()) {
    throw ShapeError("alignment_loss: mask does not match xyz targets");
  }
  std::vector<double> xyz_mask(xyz_targets.size());
  for (std::size_t i = 0; i < doa_mask.size(); ++i) {
    xyz_mask[3 * i] = xyz_mask[3 * i + 1] = xyz_mask[3 * i + 2] = doa_mask[i];
  }
  auto bce = nn::bce_loss(out.probs, sed_targets);
  auto mse = nn::masked_mse_loss(out.xyz, xyz_targets, xyz_mask);
  return nn::add_weighted(bce, w_sed, mse, w_doa);
}

}  // namespace seldkit::seld
