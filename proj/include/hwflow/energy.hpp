#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hwflow/core.hpp"
#include "hwflow/image.hpp"
#include "hwflow/warp_grid.hpp"

namespace hwflow {

// Energy weights. Defaults are the live-capture preset; the other two
// presets are available by name.
struct EnergyParams {
  double w_reg = 1.0;
  double w_photo = 1.0;
  double w_grad = 2.0;
  double w_epi = 0.0;
  double w_smooth = 1.0;
  double w_mag = 1.0;
  double w_s = 5.0, w_m = 5.0, w_d = 0.5;       // smoothness per flow field
  double m_s = 5.0, m_m = 100.0, m_d = 1000.0;  // magnitude per flow field
  double eps_huber = 0.001;
  double eps_color = 0.2;

  double smooth_weight(int field) const {
    return field == 0 ? w_s : (field == 1 ? w_m : w_d);
  }
  double mag_weight(int field) const {
    return field == 0 ? m_s : (field == 1 ? m_m : m_d);
  }

  // "live", "facial" or "stereo-hq".
  static EnergyParams preset(const std::string& name);
  void validate() const;
};

inline double pseudo_huber(double x, double eps) {
  return std::sqrt(x * x + eps * eps);
}

// d/dx pseudo_huber.
inline double pseudo_huber_deriv(double x, double eps) {
  return x / pseudo_huber(x, eps);
}

// Per-level gating weights, frozen within a Gauss-Newton iteration.
struct PixelWeights {
  // Bit e = image_index(c,t) set iff the halfway pixel is visible in
  // that input image.
  std::vector<uint8_t> vis4;
  std::vector<uint8_t> outlier;  // W bit per pixel
  std::vector<double> node_w;    // w_i per grid node

  void init_all_visible(int n_pixels, int n_nodes) {
    vis4.assign(n_pixels, 0x0F);
    outlier.assign(n_pixels, 1);
    node_w.assign(n_nodes, 1.0);
  }

  // Visibility bit of check k: both endpoint images must see the pixel.
  bool check_visible(int pixel, int k) const {
    const uint8_t v = vis4[pixel];
    return (v >> kChecks[k].a & 1) && (v >> kChecks[k].b & 1);
  }
};

// Everything residual evaluation reads, all frozen for the duration of
// one evaluation / linearization.
struct EnergyContext {
  std::array<const Image*, 4> images{};
  std::array<const Image*, 4> illum{};  // nullable, halfway-pixel indexed
  const WarpGrid* total = nullptr;      // alignment, smoothness, epipolar
  const WarpGrid* delta = nullptr;      // magnitude term
  const PixelWeights* weights = nullptr;
  const Mat3* fundamental = nullptr;    // required iff w_epi > 0
  EnergyParams params;
  int width = 0, height = 0;
  int threads = 1;

  int pixel_count() const { return width * height; }
  int node_count() const { return total->node_count(); }
  // M = 2N + 14G.
  int residual_count() const { return 2 * pixel_count() + 14 * node_count(); }
};

// One pixel's photometric and gradient residuals plus their derivatives
// with respect to the pixel's interpolated flow (sx,sy,mx,my,dx,dy).
struct PixelEval {
  double r_photo = 0.0, r_grad = 0.0;
  double e_photo = 0.0, e_grad = 0.0;  // unweighted sums of V*W*Phi(.)
  Vec6 j_photo = Vec6::Zero();
  Vec6 j_grad = Vec6::Zero();
};

PixelEval eval_pixel(const EnergyContext& ctx, int px, int py, bool with_derivs);

// One node's smoothness (6), epipolar (2) and magnitude (6) residuals
// plus sparse derivative coefficients.
struct NodeEval {
  std::array<double, 6> smooth_r{};  // field-major, component-minor
  std::array<double, 2> epi_r{};
  std::array<double, 6> mag_r{};
  double e_smooth = 0.0, e_epi = 0.0, e_mag = 0.0;  // unweighted shares

  // Smooth row (f,a): coefficients of the same component at the node
  // itself and its forward neighbors.
  std::array<double, 6> smooth_jc{}, smooth_jr{}, smooth_jd{};
  std::array<Vec6, 2> epi_j{};  // per time step, w.r.t. node unknowns
  std::array<double, 6> mag_j{};
  int right = -1, down = -1;
};

NodeEval eval_node(const EnergyContext& ctx, int node, bool with_derivs);

// Stacks photo (N), grad (N), smooth (6G), epi (2G), mag (6G) blocks in
// that order; |R|^2 equals the weighted energy.
Eigen::VectorXd assemble_residuals(const EnergyContext& ctx);

// Unweighted per-term sums (the raw equation values before the w_*
// balance weights are applied).
struct EnergyBreakdown {
  double photo = 0.0, grad = 0.0, smooth = 0.0, epi = 0.0, mag = 0.0;
  double total(const EnergyParams& p) const {
    return p.w_photo * photo + p.w_grad * grad +
           p.w_reg * (p.w_smooth * smooth + p.w_epi * epi + p.w_mag * mag);
  }
};

EnergyBreakdown energy_breakdown(const EnergyContext& ctx);

// Refresh the outlier bits from the mean absolute intensity difference
// over the currently visible checks; W = 1 iff mean < eps_color.
void refresh_outlier_bits(const EnergyContext& ctx, PixelWeights& weights);

// Refresh per-node feature weights from the halfway-domain image (the
// average of the four warped, corrected inputs at current flows).
void refresh_feature_weights(const EnergyContext& ctx, PixelWeights& weights);

}  // namespace hwflow
