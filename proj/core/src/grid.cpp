// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/grid.hpp"

#include <cmath>

namespace seldkit::seld {

int DirectionGrid::azi_index(double azi_deg) {
  if (azi_deg < -180.0 || azi_deg >= 180.0) {
    throw ConfigError("azimuth out of [-180, 180): " + std::to_string(azi_deg));
  }
  return azi_index_wrapped(azi_deg);
}

int DirectionGrid::ele_index(double ele_deg) {
  if (ele_deg < -45.0 || ele_deg > 45.0) {
    throw ConfigError("elevation out of [-45, 45]: " + std::to_string(ele_deg));
  }
  return ele_index_clamped(ele_deg);
}

int DirectionGrid::azi_index_wrapped(double azi_deg) {
  const int i = static_cast<int>(std::lround((azi_deg + 180.0) / kResolutionDeg));
  return ((i % kAzimuths) + kAzimuths) % kAzimuths;
}

int DirectionGrid::ele_index_clamped(double ele_deg) {
  int i = static_cast<int>(std::lround((ele_deg + 45.0) / kResolutionDeg));
  if (i < 0) i = 0;
  if (i >= kElevations) i = kElevations - 1;
  return i;
}

double DirectionGrid::azi_center(int index) { return -180.0 + kResolutionDeg * index; }
double DirectionGrid::ele_center(int index) { return -45.0 + kResolutionDeg * index; }

std::array<double, 3> DirectionGrid::unit_vector(double azi_deg, double ele_deg) {
  const double a = deg_to_rad(azi_deg);
  const double e = deg_to_rad(ele_deg);
  return {std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
}

std::pair<double, double> DirectionGrid::angles_of(const std::array<double, 3>& v) {
  const double azi = rad_to_deg(std::atan2(v[1], v[0]));
  const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  const double ele = norm > 0.0 ? rad_to_deg(std::asin(v[2] / norm)) : 0.0;
  return {azi, ele};
}

}  // namespace seldkit::seld
