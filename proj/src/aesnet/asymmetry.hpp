// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <string>

namespace aesnet {

/// The 8 supervised coordinates, normalized to [0,1]. x grows rightward,
/// y grows downward; "left"/"right" are image-frame sides. The inferior
/// breast contours contribute vertical levels only.
struct KeypointSet {
  double nipple_left_x = 0.0;
  double nipple_left_y = 0.0;
  double nipple_right_x = 0.0;
  double nipple_right_y = 0.0;
  double sternal_notch_x = 0.0;
  double sternal_notch_y = 0.0;
  double contour_level_left = 0.0;
  double contour_level_right = 0.0;

  static constexpr std::size_t kCount = 8;

  std::array<double, kCount> to_array() const;
  static KeypointSet from_array(const std::array<double, kCount>& a);

  /// Throws std::invalid_argument if any coordinate leaves [0,1].
  void validate() const;
};

/// Column names of the keypoint CSV, in serialization order.
extern const std::array<const char*, KeypointSet::kCount> kKeypointColumns;

/// The four asymmetry measures, nonnegative, in normalized image units.
struct AsymmetryFeatures {
  double lbc = 0.0;
  double bce = 0.0;
  double unr = 0.0;
  double bra = 0.0;

  static constexpr std::size_t kCount = 4;
  std::array<double, kCount> to_array() const { return {lbc, bce, unr, bra}; }
};

extern const std::array<const char*, AsymmetryFeatures::kCount> kFeatureNames;

// Individual measures.
double unr(const KeypointSet& k);
double lbc(const KeypointSet& k);
double bce_feature(const KeypointSet& k);
double bra(const KeypointSet& k);

/// All four measures of a validated keypoint set.
AsymmetryFeatures features(const KeypointSet& k);

/// Raw-array forms used by the network's fixed feature layer. No range
/// validation; the layer feeds already-clamped coordinates.
void features_from_flat(const double kp[KeypointSet::kCount],
                        double out[AsymmetryFeatures::kCount]);

/// Jacobian d(features)/d(keypoints), row-major 4x8. Subgradient 0 at the
/// kinks of |.| and where a distance term vanishes.
void features_jacobian(const double kp[KeypointSet::kCount],
                       double jac[AsymmetryFeatures::kCount * KeypointSet::kCount]);

/// Horizontal flip with side swap: every x becomes 1-x and the left/right
/// entries exchange. All four features are invariant under this map.
KeypointSet flip_with_swap(const KeypointSet& k);

}  // namespace aesnet
