// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#include "aesnet/asymmetry.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace aesnet {

const std::array<const char*, KeypointSet::kCount> kKeypointColumns = {
    "xnl", "ynl", "xnr", "ynr", "xs", "ys", "cll", "clr"};

const std::array<const char*, AsymmetryFeatures::kCount> kFeatureNames = {
    "lbc", "bce", "unr", "bra"};

namespace {

// Flat layout, matching kKeypointColumns.
enum : std::size_t { XNL, YNL, XNR, YNR, XS, YS, CLL, CLR };

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline double dist(double dx, double dy) { return std::sqrt(dx * dx + dy * dy); }

}  // namespace

std::array<double, KeypointSet::kCount> KeypointSet::to_array() const {
  return {nipple_left_x,  nipple_left_y,  nipple_right_x,     nipple_right_y,
          sternal_notch_x, sternal_notch_y, contour_level_left, contour_level_right};
}

KeypointSet KeypointSet::from_array(const std::array<double, kCount>& a) {
  KeypointSet k;
  k.nipple_left_x = a[XNL];
  k.nipple_left_y = a[YNL];
  k.nipple_right_x = a[XNR];
  k.nipple_right_y = a[YNR];
  k.sternal_notch_x = a[XS];
  k.sternal_notch_y = a[YS];
  k.contour_level_left = a[CLL];
  k.contour_level_right = a[CLR];
  return k;
}

void KeypointSet::validate() const {
  const auto a = to_array();
  for (std::size_t i = 0; i < kCount; ++i) {
    if (!(a[i] >= 0.0 && a[i] <= 1.0)) {
      throw std::invalid_argument(std::string("keypoint '") + kKeypointColumns[i] +
                                  "' outside [0,1]");
    }
  }
}

double unr(const KeypointSet& k) {
  return std::fabs(k.nipple_left_y - k.nipple_right_y);
}

double lbc(const KeypointSet& k) {
  return std::fabs(k.contour_level_left - k.contour_level_right);
}

double bce_feature(const KeypointSet& k) {
  const double dl = dist(k.sternal_notch_x - k.nipple_left_x,
                         k.sternal_notch_y - k.contour_level_left);
  const double dr = dist(k.sternal_notch_x - k.nipple_right_x,
                         k.sternal_notch_y - k.contour_level_right);
  return std::fabs(dl - dr);
}

double bra(const KeypointSet& k) {
  const double xl = std::fabs(k.nipple_left_x - k.sternal_notch_x);
  const double xr = std::fabs(k.nipple_right_x - k.sternal_notch_x);
  const double yl = std::fabs(k.nipple_left_y - k.sternal_notch_y);
  const double yr = std::fabs(k.nipple_right_y - k.sternal_notch_y);
  return dist(xl - xr, yl - yr);
}

AsymmetryFeatures features(const KeypointSet& k) {
  k.validate();
  AsymmetryFeatures f;
  f.lbc = lbc(k);
  f.bce = bce_feature(k);
  f.unr = unr(k);
  f.bra = bra(k);
  return f;
}

void features_from_flat(const double kp[KeypointSet::kCount],
                        double out[AsymmetryFeatures::kCount]) {
  out[0] = std::fabs(kp[CLL] - kp[CLR]);
  const double dl = dist(kp[XS] - kp[XNL], kp[YS] - kp[CLL]);
  const double dr = dist(kp[XS] - kp[XNR], kp[YS] - kp[CLR]);
  out[1] = std::fabs(dl - dr);
  out[2] = std::fabs(kp[YNL] - kp[YNR]);
  const double xl = std::fabs(kp[XNL] - kp[XS]);
  const double xr = std::fabs(kp[XNR] - kp[XS]);
  const double yl = std::fabs(kp[YNL] - kp[YS]);
  const double yr = std::fabs(kp[YNR] - kp[YS]);
  out[3] = dist(xl - xr, yl - yr);
}

void features_jacobian(const double kp[KeypointSet::kCount],
                       double jac[AsymmetryFeatures::kCount * KeypointSet::kCount]) {
  std::memset(jac, 0, sizeof(double) * AsymmetryFeatures::kCount * KeypointSet::kCount);
  double* jlbc = jac + 0 * KeypointSet::kCount;
  double* jbce = jac + 1 * KeypointSet::kCount;
  double* junr = jac + 2 * KeypointSet::kCount;
  double* jbra = jac + 3 * KeypointSet::kCount;

  // lbc = |cll - clr|
  {
    const double s = sgn(kp[CLL] - kp[CLR]);
    jlbc[CLL] = s;
    jlbc[CLR] = -s;
  }

  // bce = |DL - DR| with DL, DR the notch-to-fold distances.
  {
    const double dlx = kp[XS] - kp[XNL];
    const double dly = kp[YS] - kp[CLL];
    const double drx = kp[XS] - kp[XNR];
    const double dry = kp[YS] - kp[CLR];
    const double dl = dist(dlx, dly);
    const double dr = dist(drx, dry);
    const double s = sgn(dl - dr);
    if (s != 0.0) {
      // Unit direction vectors; zero-length distances contribute nothing.
      const double ulx = dl > 0.0 ? dlx / dl : 0.0;
      const double uly = dl > 0.0 ? dly / dl : 0.0;
      const double urx = dr > 0.0 ? drx / dr : 0.0;
      const double ury = dr > 0.0 ? dry / dr : 0.0;
      jbce[XS] = s * (ulx - urx);
      jbce[YS] = s * (uly - ury);
      jbce[XNL] = s * -ulx;
      jbce[CLL] = s * -uly;
      jbce[XNR] = -s * -urx;
      jbce[CLR] = -s * -ury;
    }
  }

  // unr = |ynl - ynr|
  {
    const double s = sgn(kp[YNL] - kp[YNR]);
    junr[YNL] = s;
    junr[YNR] = -s;
  }

  // bra = hypot(XL - XR, YL - YR) of the notch-relative nipple offsets.
  {
    const double sxl = sgn(kp[XNL] - kp[XS]);
    const double sxr = sgn(kp[XNR] - kp[XS]);
    const double syl = sgn(kp[YNL] - kp[YS]);
    const double syr = sgn(kp[YNR] - kp[YS]);
    const double u = std::fabs(kp[XNL] - kp[XS]) - std::fabs(kp[XNR] - kp[XS]);
    const double v = std::fabs(kp[YNL] - kp[YS]) - std::fabs(kp[YNR] - kp[YS]);
    const double r = dist(u, v);
    if (r > 0.0) {
      const double gu = u / r;
      const double gv = v / r;
      jbra[XNL] = gu * sxl;
      jbra[XNR] = -gu * sxr;
      jbra[YNL] = gv * syl;
      jbra[YNR] = -gv * syr;
      jbra[XS] = gu * (-sxl + sxr);
      jbra[YS] = gv * (-syl + syr);
    }
  }
}

KeypointSet flip_with_swap(const KeypointSet& k) {
  KeypointSet f;
  f.nipple_left_x = 1.0 - k.nipple_right_x;
  f.nipple_left_y = k.nipple_right_y;
  f.nipple_right_x = 1.0 - k.nipple_left_x;
  f.nipple_right_y = k.nipple_left_y;
  f.sternal_notch_x = 1.0 - k.sternal_notch_x;
  f.sternal_notch_y = k.sternal_notch_y;
  f.contour_level_left = k.contour_level_right;
  f.contour_level_right = k.contour_level_left;
  return f;
}

}  // namespace aesnet
