#pragma once

#include <vector>

#include "hwflow/core.hpp"

namespace hwflow {

// Monochrome raster, row-major doubles. Input images live in [0,1]
// (clamped at load time); derived rasters (residuals, correction maps)
// may hold any finite values.
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : w_(width), h_(height), data_(static_cast<size_t>(width) * height, fill) {
    if (width < 0 || height < 0) throw std::invalid_argument("negative image dims");
  }

  int width() const { return w_; }
  int height() const { return h_; }
  bool empty() const { return w_ == 0 || h_ == 0; }
  size_t size() const { return data_.size(); }

  double& at(int x, int y) { return data_[static_cast<size_t>(y) * w_ + x]; }
  double at(int x, int y) const { return data_[static_cast<size_t>(y) * w_ + x]; }

  double at_clamped(int x, int y) const {
    x = x < 0 ? 0 : (x >= w_ ? w_ - 1 : x);
    y = y < 0 ? 0 : (y >= h_ ? h_ - 1 : y);
    return at(x, y);
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  // Bilinear interpolation, edge-clamped (total on all finite p).
  double sample(const Vec2& p) const;

  // Same, plus the exact in-cell derivative of the interpolant
  // (zero in a coordinate that is clamped at the border). This is the
  // derivative the analytic Jacobian must use to match finite
  // differences of sample().
  double sample(const Vec2& p, Vec2* dval_dp) const;

  // Central-difference gradient at an integer pixel; one-sided at the
  // borders.
  Vec2 pixel_grad(int x, int y) const;

  // Gradient field at a continuous position: bilinear interpolation of
  // per-pixel central differences.
  Vec2 grad(const Vec2& p) const;

  // Same, plus the exact derivative of the interpolated gradient with
  // respect to p (row k = d grad_k / d p).
  Vec2 grad(const Vec2& p, Mat2* dgrad_dp) const;

 private:
  int w_ = 0, h_ = 0;
  std::vector<double> data_;
};

// 2x2 block-mean downsampling; partial blocks at odd edges average the
// available pixels. Output dims = ceil(dims / 2).
Image downsample_mipmap(const Image& img);

// Separable Gaussian, kernel radius ceil(3*sigma), edge-clamped,
// normalized to unit sum. Rejects sigma <= 0.
Image gaussian_blur(const Image& img, double sigma);

// Feature weight from the structure tensor of the 3x3 patch around
// (cx, cy): 1 / (lambda_min + delta), clamped to [1, w_max].
// Featureless patches get the cap, strong corners the floor.
double structure_weight(const Image& img, int cx, int cy,
                        double delta = 1e-4, double w_max = 100.0);

// Mip-map pyramid, level 0 finest.
struct Pyramid {
  std::vector<Image> levels;
  int level_count() const { return static_cast<int>(levels.size()); }
};

Pyramid build_pyramid(const Image& img, int num_levels);

}  // namespace hwflow
