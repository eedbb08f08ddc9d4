// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <utility>

#include "seldkit/common.hpp"

namespace seldkit::seld {

/// 5-degree direction grid: 72 azimuth bins over [-180, 180) and 19
/// elevation bins over [-45, 45].
struct DirectionGrid {
  static constexpr int kAzimuths = 72;
  static constexpr int kElevations = 19;
  static constexpr double kResolutionDeg = 5.0;

  /// Index of the nearest grid cell; exact for grid multiples.
  /// Throws on azimuth outside [-180, 180) or elevation outside [-45, 45].
  static int azi_index(double azi_deg);
  static int ele_index(double ele_deg);

  /// Nearest cell with azimuth wrap-around and elevation clamping; never
  /// throws. Used when binning estimated directions that may fall slightly
  /// out of range.
  static int azi_index_wrapped(double azi_deg);
  static int ele_index_clamped(double ele_deg);

  static double azi_center(int index);  // -180 + 5 * index
  static double ele_center(int index);  // -45 + 5 * index

  static std::array<double, 3> unit_vector(double azi_deg, double ele_deg);
  /// (azimuth, elevation) in degrees from a (not necessarily unit) vector.
  static std::pair<double, double> angles_of(const std::array<double, 3>& v);
};

}  // namespace seldkit::seld
