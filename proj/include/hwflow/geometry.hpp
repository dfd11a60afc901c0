#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hwflow/core.hpp"
#include "hwflow/warp_grid.hpp"

namespace hwflow {

// Fixed stereo calibration: fundamental matrix plus optional projection
// matrices for metric triangulation.
struct StereoRig {
  Mat3 F = Mat3::Zero();
  std::optional<Mat34> P0, P1;

  bool has_projections() const { return P0.has_value() && P1.has_value(); }

  // Checks rank(F) = 2 and, when projections are present, that F is
  // consistent with them on projected test points. Throws on failure.
  void validate() const;
};

// Dense outputs at input resolution.
struct FlowResult {
  int width = 0, height = 0;
  std::vector<Vec2> s, m, d;      // per-pixel flows, pixels
  std::vector<double> disparity;  // signed full disparity 2*s_x
  std::vector<uint8_t> vis4;      // visibility bits per image_index(c,t)

  bool has_points = false;        // filled when projections are available
  std::vector<Vec3> points0, points1, scene_flow;
  std::vector<uint8_t> point_valid;

  int pixel_count() const { return width * height; }
};

struct Triangulation {
  Vec3 point = Vec3::Zero();
  bool valid = false;
};

// Linear (DLT) two-view triangulation; near-parallel rays (point at
// infinity) are flagged invalid.
Triangulation triangulate_dlt(const Mat34& P0, const Mat34& P1,
                              const Vec2& x0, const Vec2& x1);

// Triangulates the halfway correspondence of pixel x at time step t.
Triangulation triangulate_pixel(const Vec2& x, const PixelFlow& f, int t,
                                const StereoRig& rig);

// Fills points0/points1/scene_flow from the per-pixel flows.
void compute_scene_points(FlowResult& result, const StereoRig& rig);

// Writes an OBJ mesh over the pixel grid. Vertices use triangulated 3D
// points when available, otherwise (x, y, disparity). Occluded or
// invalid vertices are dropped together with their triangles.
void export_mesh_obj(const FlowResult& result, const std::string& path);

}  // namespace hwflow
