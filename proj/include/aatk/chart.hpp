#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aatk/torus.hpp"

namespace aatk {

/** One fiber point per grid node, continued breadth-first from seed_point by
    Gauss-Newton along the row space of dF.  |F(points[k]) - node base| stays
    below the build tolerance; adjacent points stay within the continuation
    jump bound. */
struct Section {
    BaseGrid grid;
    Eigen::VectorXd transverse_fixed;
    std::vector<int> anchor_node;          ///< multi-index of the node holding seed_point
    std::vector<Eigen::VectorXd> points;   ///< flat, axis 0 fastest (LatticeField order)
};

/** Anchored action values p_1..p_r per grid node: p_i(c) is the line integral
    of sum_j lambda_i^j dc_j along the straight segment from the anchor node,
    so p_i vanishes there and dp_i/dc_j = lambda_i^j.  `panels` freezes the
    composite quadrature resolution so p is a smooth function of c. */
struct ActionTable {
    BaseGrid grid;
    std::vector<int> anchor_node;
    Eigen::VectorXd c0;                    ///< base head(r) at the anchor node
    long panels = 4;                       ///< 8-point Gauss-Legendre panels per segment
    std::vector<Eigen::VectorXd> values;   ///< flat, axis 0 fastest
};

/** The assembled action-angle chart around the traced torus: periods, section,
    actions, and (after straighten_section) the angle correction data.  All
    constituents share one grid.  Immutable once built. */
struct Chart {
    LatticeField field;
    Section section;
    ActionTable actions;
    std::vector<std::string> transverse_names;
    double angle_tol = 1e-9;               ///< phase-space Newton tolerance for angles
    bool straightened = false;
    std::vector<Eigen::MatrixXd> omega;    ///< measured {theta_i,theta_j} per node (r x r)
    double omega_before = 0.0;             ///< max |{theta_i,theta_j}| before correction
    double omega_after = 0.0;              ///< and after
    std::string note;
};

/** Increment of the actions along the straight segment from a to b (both
    length r, inside the grid hull): composite 8-point Gauss-Legendre with the
    given panel count on the interpolated periods. */
Eigen::VectorXd action_increment(const LatticeField& field, const Eigen::VectorXd& a,
                                 const Eigen::VectorXd& b, long panels);

/** Action table anchored at grid node c0_node: p(node) by the line integral
    from the anchor, panel count chosen by doubling on the farthest node until
    two successive values agree within quad_tol (at least 4 panels = 32
    quadrature nodes).  Requires a complete field (no failed nodes). */
ActionTable action_values(const LatticeField& field, const std::vector<int>& c0_node,
                          double quad_tol = 1e-10);

/// p at an arbitrary base-head value inside the hull, with the table's frozen panels.
Eigen::VectorXd action_at(const LatticeField& field, const ActionTable& table,
                          const Eigen::VectorXd& c_head);

/** Antisymmetrized centered-difference test of d lambda_i^j / dc_k =
    d lambda_i^k / dc_j over interior grid nodes — the closedness that makes
    the action 1-form integrate path-independently.  `relative` divides by
    max(1, scale) where scale is the largest derivative seen. */
struct ClosednessReport {
    double residual = 0.0;   ///< max |d_k lambda_i^j - d_j lambda_i^k|
    double scale = 0.0;      ///< max |d_k lambda_i^j|
    double relative = 0.0;
    long checked = 0;        ///< interior nodes examined
};

ClosednessReport closedness_check(const LatticeField& field);

/** Integration / solve configuration for chart construction and verification.
    The tol_* fields are the pass thresholds of verify_canonical. */
struct ChartConfig {
    FlowConfig flow{};
    double section_tol = 1e-11;      ///< Gauss-Newton tolerance for fiber solves
    double angle_tol = 1e-9;         ///< phase-space tolerance of the angle shooter
    double fd_step = 1e-5;           ///< relative step for chart-function gradients
    double quad_tol = 1e-10;         ///< quadrature doubling threshold
    double tol_theta_p = 1e-5;       ///< |{theta_i,p_j} - delta_ij|
    double tol_p_p = 1e-8;           ///< |{p_i,p_j}|
    double tol_z = 1e-6;             ///< Casimir-block residuals |{.,z}|
    double tol_theta_theta = 1e-4;   ///< |{theta_i,theta_j}|
    std::uint64_t sample_seed = 0xC4A27ULL;
};

/** Fiber points over every grid node, BFS-continued from seed_point (the node
    nearest F(seed) holds seed_point itself when the grid passes through the
    seed fiber).  Throws TorusError on a Gauss-Newton failure, a continuity
    jump, or a field with failed nodes. */
Section build_section(const SystemSpec& spec, const LatticeField& field,
                      const ChartConfig& cfg = {});

/// Section + actions anchored at the section's seed node, assembled into a Chart.
Chart build_chart(const SystemSpec& spec, const LatticeField& field,
                  const ChartConfig& cfg = {});

/** Angle coordinates of m: the unique t in [0,1)^r with
    Phi(sum_i t_i lambda_i(F(m)), s(F(m))) = m, found by a coarse 16^r scan and
    Newton with the uniformized fields as Jacobian columns; the anchor s(F(m))
    is continued from the nearest node's section point.  On a straightened
    chart the correction gamma(p) is added before wrapping.  Throws TorusError
    when no preimage is found (m not on the charted fiber component). */
Eigen::VectorXd angle_of(const SystemSpec& spec, const Chart& chart, const Eigen::VectorXd& m,
                         const ChartConfig& cfg = {});

/** Measure omega_ij = {theta_i, theta_j} at every grid node and correct the
    angles by theta_i + gamma_i(p), where the gamma_i solve
    d gamma_j / d p_i - d gamma_i / d p_j = -omega_ij via the Poincare-lemma
    line integral in action space.  Identity for r = 1.  The returned chart
    carries the measured residual before and after — the certificate is the
    measurement, not a proof.  Throws TorusError if omega fails its closedness
    precheck (r >= 3). */
Chart straighten_section(const SystemSpec& spec, const Chart& chart,
                         const ChartConfig& cfg = {});

/// Worst residual of one bracket class with the sample that attained it.
struct PairResidual {
    std::string label;
    double worst = 0.0;
    Eigen::VectorXd witness;
};

/** Canonical-form certificate: pairwise Poisson brackets of
    (theta_1..theta_r, p_1..p_r, z_1..z_{s-r}) estimated by finite differences
    of the numerically defined chart functions at sampled fiber points.
    Commutative charts require the full Casimir block ({theta,z}, {p,z},
    {z,z}); non-commutative charts require {p,z} and report {theta,z} as a
    diagnostic plus the per-fiber spread of {z_k,z_l} (which must be basic). */
struct CanonicalReport {
    double theta_p = 0.0;       ///< max |{theta_i,p_j} - delta_ij|
    double p_p = 0.0;           ///< max |{p_i,p_j}|
    double p_z = 0.0;           ///< max |{p_i,z_k}|
    double theta_theta = 0.0;   ///< max |{theta_i,theta_j}| (0 when r = 1)
    double theta_z = 0.0;       ///< max |{theta_i,z_k}| (diagnostic when non-commutative)
    double z_z = 0.0;           ///< max |{z_k,z_l}| (commutative Casimir block)
    double z_z_spread = 0.0;    ///< max in-fiber spread of {z_k,z_l} (non-commutative)
    long samples = 0;
    bool pass = false;
    std::vector<PairResidual> entries;
    std::string text;           ///< structured report, deterministic
};

CanonicalReport verify_canonical(const SystemSpec& spec, const Chart& chart, long n_samples,
                                 const ChartConfig& cfg = {});

/// One row per node: base coordinates, actions p_1..p_r, section point.
std::string chart_csv(const SystemSpec& spec, const Chart& chart);

}  // namespace aatk
