#pragma once

#include <array>
#include <vector>

#include "hwflow/core.hpp"
#include "hwflow/image.hpp"

namespace hwflow {

enum FlowField { kStereo = 0, kMotion = 1, kDifference = 2 };

// Per-pixel flow triple in pixels at the current level.
struct PixelFlow {
  Vec2 s = Vec2::Zero();
  Vec2 m = Vec2::Zero();
  Vec2 d = Vec2::Zero();

  const Vec2& field(int f) const { return f == 0 ? s : (f == 1 ? m : d); }
  Vec2& field(int f) { return f == 0 ? s : (f == 1 ? m : d); }
};

// Coarse deformation lattice holding the three flow fields. Node (a,b)
// anchors at pixel (a*step, b*step); the grid covers the full image.
class WarpGrid {
 public:
  WarpGrid() = default;
  // Grid sized to cover an image of the given dimensions.
  WarpGrid(int image_w, int image_h, int step);
  static WarpGrid with_dims(int grid_w, int grid_h, int step);

  int grid_w() const { return gw_; }
  int grid_h() const { return gh_; }
  int step() const { return step_; }
  int node_count() const { return gw_ * gh_; }

  int node_index(int a, int b) const { return b * gw_ + a; }
  Vec2 node_anchor(int a, int b) const {
    return {static_cast<double>(a) * step_, static_cast<double>(b) * step_};
  }
  Vec2 node_anchor(int k) const { return node_anchor(k % gw_, k / gw_); }

  const Vec2& node(int f, int k) const { return fields_[f][k]; }
  Vec2& node(int f, int k) { return fields_[f][k]; }
  const std::vector<Vec2>& field(int f) const { return fields_[f]; }
  std::vector<Vec2>& field(int f) { return fields_[f]; }

  void set_zero();

  // True if the pixel position lies within the lattice extent.
  bool covers(const Vec2& x) const;

  // The four enclosing nodes and their bilinear weights (partition of
  // unity; duplicates collapse on edges/nodes of the lattice).
  struct Support {
    std::array<int, 4> node;
    std::array<double, 4> weight;
  };
  Support support(const Vec2& x) const;

  // Bilinear interpolation of all three fields. Throws if x is outside
  // the lattice extent.
  PixelFlow interpolate(const Vec2& x) const;

  // this + other, nodewise (grids must have identical dims).
  WarpGrid plus(const WarpGrid& other) const;

 private:
  int gw_ = 0, gh_ = 0, step_ = 1;
  std::array<std::vector<Vec2>, 3> fields_;
};

// Halfway warp: x + sigma_c*s + sigma_t*m + sigma_c*sigma_t*d.
inline Vec2 warp_position(const Vec2& x, const PixelFlow& f, int cam, int time) {
  const double sc = sign_of(cam), st = sign_of(time);
  return x + sc * f.s + st * f.m + (sc * st) * f.d;
}

// The six consistency checks as (A, B) image-index pairs, residual
// d_k = I[A](warp_A) - I[B](warp_B). Order: stereo t=0, stereo t=1,
// motion c=0, motion c=1, cross, cross.
struct CheckPair {
  int a, b;
};
inline constexpr std::array<CheckPair, 6> kChecks = {{
    {1, 0}, {3, 2}, {2, 0}, {3, 1}, {3, 0}, {2, 1},
}};

// The six intensity differences at pixel x under flow f, with optional
// per-image additive corrections (illumination maps evaluated at x).
// When grads is non-null it receives the difference of the two warped
// image gradients of each check.
std::array<double, 6> consistency_residuals(
    const std::array<const Image*, 4>& images, const Vec2& x, const PixelFlow& f,
    const std::array<double, 4>& corrections = {0, 0, 0, 0},
    std::array<Vec2, 6>* grads = nullptr);

// Transformed node reference positions for the epipolar constraint:
// {l^0, r^0, l^1, r^1} as homogeneous 3-vectors, computed from the
// node's own flow values.
std::array<Vec3, 4> epipolar_positions(const WarpGrid& grid, int node);

}  // namespace hwflow
