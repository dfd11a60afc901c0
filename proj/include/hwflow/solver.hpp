#pragma once

#include <vector>

#include "hwflow/core.hpp"
#include "hwflow/energy.hpp"

namespace hwflow {

// Iteration schedule. gn_per_level is finest-first; when empty, the
// default rule applies: 2 nonlinear iterations on the two finest
// levels, 5 on all others. subdomain_px = 0 selects a single global
// PCG solve per Gauss-Newton iteration instead of Schwarz sweeps.
struct SolveSchedule {
  int levels = 5;
  std::vector<int> gn_per_level;
  int pcg_iters = 5;
  int patch_iters = 5;
  int subdomain_px = 16;
  int boundary_px = 2;
  int grid_step = 2;
  int threads = 1;
  double lm_lambda = 0.0;          // optional Levenberg diagonal boost
  uint8_t active_fields = 0b111;   // bit f: flow field f is optimized
  Vec2 coarse_s_offset = Vec2::Zero();  // ablation hook: added to coarsest base s
  // When set (global mode only), receives per-GN-iteration PCG
  // residual norms, including the initial residual.
  std::vector<std::vector<double>>* pcg_trace = nullptr;

  int gn_for_level(int level) const {
    if (!gn_per_level.empty())
      return gn_per_level[std::min<size_t>(level, gn_per_level.size() - 1)];
    return level <= 1 ? 2 : 5;
  }
};

// Block-sparse normal equations over the 6G unknowns, stored as 6x6
// node-pair blocks over the 3x3 grid neighborhood. The alignment-term
// blocks are cached separately (refreshed once per linearization);
// regularizer contributions are added on top.
class NormalSystem {
 public:
  NormalSystem(int grid_w, int grid_h);

  int grid_w() const { return gw_; }
  int grid_h() const { return gh_; }
  int node_count() const { return gw_ * gh_; }
  int dim() const { return 6 * node_count(); }

  static int slot(int dx, int dy) { return (dy + 1) * 3 + (dx + 1); }
  // Neighbor node of `node` at grid offset (dx,dy), or -1.
  int neighbor(int node, int dx, int dy) const;

  Mat6& block(int node, int s) { return blocks_[node * 9 + s]; }
  const Mat6& block(int node, int s) const { return blocks_[node * 9 + s]; }
  Mat6& align_block(int node, int s) { return align_[node * 9 + s]; }
  const Mat6& align_block(int node, int s) const { return align_[node * 9 + s]; }
  // 2x2 field-pair view of a cached alignment block.
  Mat2 align_subblock(int node, int dx, int dy, int f_row, int f_col) const {
    return align_[node * 9 + slot(dx, dy)].block<2, 2>(2 * f_row, 2 * f_col);
  }

  Eigen::VectorXd& rhs() { return rhs_; }
  const Eigen::VectorXd& rhs() const { return rhs_; }

  // y = (J^T J) x.
  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y, int threads = 1) const;
  // z = M^{-1} r with the block-diagonal (2x2 per node per field)
  // Jacobi preconditioner.
  void precondition(const Eigen::VectorXd& r, Eigen::VectorXd& z) const;
  const Mat2& precond_block(int node, int field) const {
    return precond_[node * 3 + field];
  }
  void build_preconditioner();

  // Densified J^T J (test oracle support).
  Eigen::MatrixXd dense() const;

 private:
  friend NormalSystem build_normal_system(const EnergyContext&,
                                          const SolveSchedule&);
  int gw_ = 0, gh_ = 0;
  std::vector<Mat6> blocks_;
  std::vector<Mat6> align_;
  std::vector<Mat2> precond_;  // 3 inverted 2x2 blocks per node
  Eigen::VectorXd rhs_;
};

// Analytic linearization of the full residual vector at the context's
// state, assembled directly as J^T J (blocked) and -J^T r.
NormalSystem build_normal_system(const EnergyContext& ctx,
                                 const SolveSchedule& sched);

// Row-wise sparse Jacobian plus residuals. Diagnostic path used by the
// derivative checker; the solver itself uses the blocked assembly.
struct JacobianRows {
  struct Entry {
    int row, col;
    double value;
  };
  Eigen::VectorXd residuals;
  std::vector<Entry> entries;
  int rows = 0, cols = 0;
};

// negate_field is a negative-control hook: it flips the sign of that
// flow field's analytic derivatives (residuals untouched) so the
// derivative checker can prove it catches a wrong chain rule.
JacobianRows assemble_jacobian(const EnergyContext& ctx,
                               uint8_t active_fields = 0b111,
                               int negate_field = -1);

// `iters` preconditioned CG iterations on J^T J x = rhs from a zero
// initial guess. Appends |r|_2 (initial plus one value per iteration)
// to *trace when given. Throws SolverDivergence if the preconditioned
// residual norm grows by more than 10x (non-SPD system).
Eigen::VectorXd pcg_solve(const NormalSystem& sys, int iters, int threads = 1,
                          std::vector<double>* trace = nullptr);
// Same, with an explicit right-hand side.
Eigen::VectorXd pcg_solve(const NormalSystem& sys, const Eigen::VectorXd& rhs,
                          int iters, int threads = 1,
                          std::vector<double>* trace = nullptr);

// Square pixel tile plus boundary ring, mapped to grid nodes by anchor
// position. Interiors of all subdomains partition the node set.
struct Subdomain {
  std::vector<int> interior;
  std::vector<int> boundary;
};

std::vector<Subdomain> build_subdomains(int grid_w, int grid_h, int step,
                                        int tile_px, int boundary_px);

// patch_iters sweeps of alternating Schwarz: each subdomain solves its
// interior unknowns with pcg_iters PCG iterations, non-interior
// neighbors held at the previous sweep's published values. Returns the
// accumulated update over all 6G unknowns.
Eigen::VectorXd schwarz_iterate(const NormalSystem& sys,
                                const std::vector<Subdomain>& subdomains,
                                int patch_iters, int pcg_iters, int threads = 1);

// Per-iteration energies of one Gauss-Newton run (under each
// iteration's own frozen weights).
struct GnStats {
  std::vector<double> energy_before;
  std::vector<double> energy_after;
};

// Nonlinear loop for one level: refresh W and w_i, linearize, solve
// (Schwarz or global PCG), apply the full step. Mutates delta and the
// refreshable parts of weights.
GnStats gauss_newton(EnergyContext& ctx, const WarpGrid& base, WarpGrid& delta,
                     PixelWeights& weights, const SolveSchedule& sched,
                     int gn_iters);

}  // namespace hwflow
