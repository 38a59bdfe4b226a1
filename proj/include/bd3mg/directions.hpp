#pragma once

#include <array>
#include <span>
#include <vector>

#include "bd3mg/objective.hpp"
#include "bd3mg/volume.hpp"

namespace bd3mg {

/// Symmetric 2x2 matrix [[a, b], [b, c]]. A 1x1 system is stored with b = c = 0.
struct Sym2 {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

/// Moore-Penrose pseudo-inverse of a symmetric 2x2 matrix: eigenvalues above
/// tol_rel * max|eigenvalue| are inverted, the rest zeroed.
Sym2 pinv_sym(const Sym2& m, double tol_rel = 1e-12);

/// Columns [-g | d_mem] of the memory-gradient subspace. Columns whose norm is
/// at most 1e-14 (1 + |g|) are zeroed and excluded from active_count.
struct SubspaceBasis {
  std::array<std::vector<double>, 2> columns;
  std::array<bool, 2> active{false, false};
  int active_count = 0;
};

SubspaceBasis make_basis(std::span<const double> grad, std::span<const double> d_mem);

/// D^T A D and D^T g for the current basis.
struct GramSystem {
  Sym2 gram;
  std::array<double, 2> rhs{0.0, 0.0};
  double pinv_tol = 1e-12;
};

/// Everything a direction kernel needs: the anchor slab, the block, and the
/// block restriction of the previous increment.
struct BlockTask {
  const Objective& obj;
  SlabView x;
  SliceBlock block;
  std::span<const double> d_mem;
};

struct Increment {
  std::vector<double> step;
  int solver_iterations = 0;
  bool solver_converged = true;
};

/// 3MG step: minimizes the block majorant over span{-g, d_mem}.
std::vector<double> mg_direction(const BlockTask& task);
/// -g / L.
std::vector<double> gd_direction(const BlockTask& task, double lipschitz);
/// Memory-gradient step with the majorant curvature replaced by L * Id.
std::vector<double> cg_direction(const BlockTask& task, double lipschitz);

struct KrylovOptions {
  double tol = 1e-8;
  int max_iterations = 200;
};

/// Solves A_(S) d = -g with conjugate gradients on majorant_apply.
Increment mm_direction(const BlockTask& task, const KrylovOptions& opts = {});

}  // namespace bd3mg
