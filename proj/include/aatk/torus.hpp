#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aatk/flows.hpp"
#include "aatk/systems.hpp"

namespace aatk {

/// Period/lattice analysis failure: divergent refinement, non-spanning
/// candidates, out-of-grid evaluation, failed continuation nodes.
struct TorusError : std::runtime_error {
    explicit TorusError(const std::string& what) : std::runtime_error(what) {}
};

/** Move from a nearby point onto the fiber F(x) = c by Gauss-Newton along the
    row space of dF (minimum-norm steps).  Throws TorusError when the solve
    does not reach |F(x) - c|_inf < tol or leaves domain_box. */
Eigen::VectorXd point_on_fiber(const SystemSpec& spec, const Eigen::VectorXd& from,
                               const Eigen::VectorXd& c, double tol = 1e-11,
                               int max_iter = 50);

struct PeriodRefinement {
    Eigen::VectorXd L;   ///< refined return vector in R^r
    double defect = 0.0; ///< |Phi(L, m) - m| at the solution
    int iterations = 0;
};

/** Newton (least-squares) on L -> Phi(L, m) - m from the near-return L0; the
    Jacobian columns are X_{f_j} at the current return point.  Converges to
    |Phi(L,m) - m| < defect_tol or throws TorusError (divergence after 25
    iterations, singular Jacobian). */
PeriodRefinement refine_period(const SystemSpec& spec, const Eigen::VectorXd& m,
                               const Eigen::VectorXd& L0, const FlowConfig& cfg = {},
                               double defect_tol = 1e-9);

/** Reduced basis of the period lattice at one fiber.  Rows of basis are the
    lambda_i.  r = 1: the real gcd of the candidates (shortest positive
    generator); r = 2: Lagrange-Gauss reduced (|l1| <= |l2| <= |l2 +- l1|)
    after folding every candidate into the lattice; r >= 3: greedy shortest
    independent set, flagged in note.  Candidates that refine the lattice to a
    finer one than the shortest inputs are incorporated and noted. */
struct PeriodLattice {
    Eigen::VectorXd base;   ///< c = F(m) in R^s
    Eigen::MatrixXd basis;  ///< r x r, row i = lambda_i
    double defect = 0.0;    ///< max_i |Phi(lambda_i, m) - m|
    std::string note;
};

/** Build the reduced lattice from refined return vectors at m.  Throws
    TorusError when the candidates do not span R^r. */
PeriodLattice lattice_basis(const SystemSpec& spec, const Eigen::VectorXd& m,
                            const std::vector<Eigen::VectorXd>& candidates,
                            const FlowConfig& cfg = {});

/** The whole pipeline at the seed fiber: scan for near-returns, refine each
    candidate, reduce to a lattice basis.  Propagates NonCompactError from the
    scan and TorusError when no refined candidates span R^r. */
PeriodLattice seed_period_lattice(const SystemSpec& spec, const FlowConfig& cfg = {});

/** Rectangular grid over the first r base coordinates (the transverse ones
    stay fixed).  shape[d] == 1 collapses axis d to the single value lo[d]. */
struct BaseGrid {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
    std::vector<int> shape;
};

struct LatticeNode {
    Eigen::VectorXd base;   ///< c in R^s
    Eigen::VectorXd point;  ///< the point on the fiber over c used for refinement
    Eigen::MatrixXd basis;  ///< r x r, row i = lambda_i(c)
    double defect = 0.0;
    bool ok = false;
};

struct LatticeField {
    BaseGrid grid;
    Eigen::VectorXd transverse_fixed;  ///< base coordinates r..s-1, shared by all nodes
    std::vector<LatticeNode> nodes;    ///< flat, axis 0 fastest
    std::vector<long> failed;          ///< flat indices of failed nodes
    bool ok = false;

    long flat_index(const std::vector<int>& node) const;
};

/** Continue seed_lattice over the grid, breadth-first from the node nearest
    F(seed): each node's point comes from the neighbor's point via
    point_on_fiber, each lambda_i from the neighbor's via refine_period, with
    a relative jump bound keeping the labeling continuous.  Failed nodes are
    recorded, not fatal. */
LatticeField continue_lattice(const SystemSpec& spec, const BaseGrid& grid,
                              const PeriodLattice& seed_lattice, const FlowConfig& cfg = {});

/** Multilinear interpolation of the period matrix at base-head value c_head
    (length r).  Throws TorusError outside the grid hull or when a containing
    cell corner failed. */
Eigen::MatrixXd lattice_lambda_at(const LatticeField& field, const Eigen::VectorXd& c_head);

/** Y_i(m) = sum_j lambda_i^j(F(m)) X_{f_j}(m), lambda interpolated
    multilinearly over the grid.  Throws TorusError when F(m) falls outside
    the grid hull or a containing cell corner failed. */
Eigen::VectorXd uniformized_field_at(const SystemSpec& spec, const LatticeField& field,
                                     const Eigen::VectorXd& m, int i);

struct TorusActionReport {
    Eigen::VectorXd period_defects;  ///< |Phi(lambda_i(F(m)), m) - m| per i
    double schouten_residual = 0.0;  ///< max_i max-entry |[Y_i, Pi]| at m
    Eigen::MatrixXd lambda;          ///< interpolated lambda(F(m))
};

/** Verify the uniformized action at m: each Y_i flows back to m after time 1
    (coefficients frozen along the fiber, where they are constant), and each
    Y_i is Poisson (vanishing Lie derivative of the bivector). */
TorusActionReport check_torus_action(const SystemSpec& spec, const LatticeField& field,
                                     const Eigen::VectorXd& m, const FlowConfig& cfg = {});

/// One row per node: base coordinates, lambda entries row-major, defect, ok.
std::string lattice_csv(const SystemSpec& spec, const LatticeField& field);

}  // namespace aatk
