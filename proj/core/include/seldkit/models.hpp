// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seldkit/checkpoint.hpp"
#include "seldkit/labels.hpp"
#include "seldkit/layers.hpp"

namespace seldkit::seld {

/// Width/shape parameters of one CRNN. Frequency pooling follows the input
/// feature dim: each of the four blocks pools (2,2) while the running
/// feature dim is even, else (2,1); histogram-width inputs (72, 19) thus
/// stop pooling frequency once odd. Time is always pooled x2 per block, so
/// T must be divisible by 16.
struct CrnnSpec {
  std::vector<int> conv_filters{64, 128, 256, 512};
  int gru_hidden = 128;
  int gru_layers = 1;
  int in_channels = 4;
  int in_features = 128;
};

/// Known model kinds with Table-style default widths.
CrnnSpec preset_spec(const std::string& kind);
bool kind_has_azi_head(const std::string& kind);
bool kind_has_ele_head(const std::string& kind);
/// Feature kind consumed by a model kind ("logmel128", "iv128", ...).
std::string feature_kind_for(const std::string& kind, int n_mels_override = 0);

/// Shared conv + recurrent trunk: [N,C,T,F] -> [N, T/16, 2H].
struct CrnnTrunk {
  CrnnSpec spec;
  std::vector<nn::ConvBlockParams> conv;
  std::vector<nn::GruParams> grus;

  static CrnnTrunk make(const CrnnSpec& spec, Rng& rng);
  nn::TensorPtr forward(const nn::TensorPtr& x, bool train_mode);
  void collect(std::vector<nn::TensorPtr>* params) const;
};

/// SED CRNN: trunk -> FC(14) -> sigmoid -> x2 temporal upsample.
/// [N,C,T,F] with T % 16 == 0 -> probs [N, T/8, 14].
class SedModel {
 public:
  std::string kind;  // sed-m | sed-t
  CrnnTrunk trunk;
  nn::TensorPtr fc_w, fc_b;

  static SedModel make(const std::string& kind, const CrnnSpec& spec,
                       std::uint64_t seed);
  nn::TensorPtr forward(const nn::TensorPtr& x, bool train_mode);
  std::vector<nn::TensorPtr> parameters() const;
  nn::Checkpoint to_checkpoint() const;
  static SedModel from_checkpoint(const nn::Checkpoint& ckpt);
  /// Copies conv-block records with matching name and shape from any
  /// checkpoint (transfer-learning hook); returns how many records matched.
  int load_conv_weights(const nn::Checkpoint& ckpt);
};

/// DOA CRNN with separate azimuth/elevation sigmoid heads.
class DoaModel {
 public:
  std::string kind;  // doa-iv | doa-gcc | azi-hist | ele-hist
  CrnnTrunk trunk;
  nn::TensorPtr azi_w, azi_b;  // null when the head is absent
  nn::TensorPtr ele_w, ele_b;

  struct Output {
    nn::TensorPtr azi;  // [N, T/8, 72] or null
    nn::TensorPtr ele;  // [N, T/8, 19] or null
  };

  static DoaModel make(const std::string& kind, const CrnnSpec& spec,
                       std::uint64_t seed);
  Output forward(const nn::TensorPtr& x, bool train_mode);
  std::vector<nn::TensorPtr> parameters() const;
  nn::Checkpoint to_checkpoint() const;
  static DoaModel from_checkpoint(const nn::Checkpoint& ckpt);
  bool has_azi() const { return azi_w != nullptr; }
  bool has_ele() const { return ele_w != nullptr; }
};

constexpr int kFusedWidth = kNumClasses + DirectionGrid::kAzimuths +
                            DirectionGrid::kElevations;  // 14 + 72 + 19 = 105

/// Pure concatenation [sed | azi | ele] per frame -> [frames, 105].
std::vector<double> fuse_outputs(std::span<const double> sed_probs,
                                 std::span<const double> azi_probs,
                                 std::span<const double> ele_probs, int n_frames);

/// Alignment network: 2 bidirectional GRU layers over fused sequences,
/// class-probability head (sigmoid) and per-class xyz head (tanh).
class AlignModel {
 public:
  std::string kind = "align";
  int gru_hidden = 128;
  std::vector<nn::GruParams> grus;  // 2 layers over 105-dim input
  nn::TensorPtr sed_w, sed_b;       // -> 14
  nn::TensorPtr doa_w, doa_b;       // -> 42

  struct Output {
    nn::TensorPtr probs;  // [N, T, 14]
    nn::TensorPtr xyz;    // [N, T, 14, 3]
  };

  static AlignModel make(int gru_hidden, std::uint64_t seed);
  Output forward(const nn::TensorPtr& fused);
  std::vector<nn::TensorPtr> parameters() const;
  nn::Checkpoint to_checkpoint() const;
  static AlignModel from_checkpoint(const nn::Checkpoint& ckpt);
};

/// Alignment loss: w_sed * BCE(probs, sed targets) + w_doa * masked MSE of
/// xyz over active (frame, class) entries. Flat batch-major spans:
/// sed_targets and doa_mask are [N*T*14], xyz_targets is [N*T*14*3]; the
/// class mask is expanded over the xyz components internally.
nn::TensorPtr alignment_loss(const AlignModel::Output& out,
                             std::span<const double> sed_targets,
                             std::span<const double> xyz_targets,
                             std::span<const double> doa_mask, double w_sed,
                             double w_doa);

}  // namespace seldkit::seld
