#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aatk/expr.hpp"
#include "aatk/util.hpp"

namespace aatk {

/** Poisson structure on R^n in coordinates `coords`: the bivector is stored as
    its strict upper triangle pi_upper[(i,j)] = Pi^{ij} for i < j; missing
    entries are zero and the lower triangle is the antisymmetric completion.
    Immutable once built; all operations below treat it as read-only. */
struct PoissonStructure {
    int n = 0;
    std::vector<std::string> coords;
    std::map<std::pair<int, int>, Expr> pi_upper;
};

/// Vector field with one Expr per coordinate component.
struct VectorFieldExpr {
    std::vector<Expr> components;
};

/** Bivector evaluated at a point: an exactly antisymmetric n x n matrix.
    Use antisymmetrize() for matrices assembled from finite differences. */
struct PointwiseBivector {
    Eigen::MatrixXd mat;
};

/// Numeric vector-field evaluator: point -> field value.
using NumericField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Pi^{ij} as an Expr for ANY pair (i,j): zero when absent, negated when i > j.
Expr pi_entry(const PoissonStructure& P, int i, int j);

/// Throws std::invalid_argument if f references a variable not matching P.coords.
void check_coordinates(const PoissonStructure& P, const Expr& f);

/// Pi(m) with the lower triangle filled by exact negation.
PointwiseBivector bivector_at(const PoissonStructure& P, const Eigen::VectorXd& m);

/// (A - A^T)/2; use on finite-difference output before rank or polar computations.
PointwiseBivector antisymmetrize(const Eigen::MatrixXd& A);

/** Poisson bracket {f,g} = sum_{i<j} Pi^{ij} (d_i f d_j g - d_j f d_i g),
    returned simplified. Throws std::invalid_argument on coordinate mismatch. */
Expr poisson_bracket(const PoissonStructure& P, const Expr& f, const Expr& g);

/// Hamiltonian vector field of h: component i is {x_i, h}.
VectorFieldExpr hamiltonian_vector_field(const PoissonStructure& P, const Expr& h);

/// Jacobiator {f,{g,h}} + {g,{h,f}} + {h,{f,g}}, returned simplified.
Expr jacobiator(const PoissonStructure& P, const Expr& f, const Expr& g, const Expr& h);

/// Componentwise evaluation of a VectorFieldExpr.
Eigen::VectorXd evaluate_field(const VectorFieldExpr& V, const Eigen::VectorXd& m);

/// Wraps a VectorFieldExpr as a NumericField (shares the component Exprs).
NumericField field_evaluator(const VectorFieldExpr& V);

/** Jacobi-identity residual for one coordinate triple i < j < k. */
struct TripleReport {
    int i = 0, j = 0, k = 0;
    bool symbolic_zero = false;  ///< jacobiator simplified to the zero node
    double max_abs = 0.0;        ///< max |J(x_i,x_j,x_k)| over the samples
    Eigen::VectorXd worst_point; ///< sample attaining max_abs
};

/** Result of verify_poisson: pass iff the residual of every coordinate triple
    stays below tol at every sample.  eval_failures counts sample points where
    some jacobiator could not be evaluated (domain error); such points are
    skipped and reported rather than thrown. */
struct PoissonReport {
    bool pass = false;
    double tol = 0.0;
    double max_abs = 0.0;
    int eval_failures = 0;
    std::vector<TripleReport> triples;
};

/** Samples n_samples uniform points in `box` and evaluates the jacobiator of
    every coordinate triple (i<j<k).  By the Leibniz rule coordinate triples
    certify the Jacobi identity for all smooth functions. */
PoissonReport verify_poisson(const PoissonStructure& P, const Box& box, int n_samples,
                             double tol, std::uint64_t seed = 0x9e3779b97f4a7c15ULL);

/** Numerical rank data of Pi(m).  rank counts singular values above
    tol * max(sigma_max, 1); gap = sigma_rank / sigma_{rank+1} measures how
    clear the cutoff is (+inf when no singular value was dropped or none kept). */
struct RankInfo {
    int rank = 0;
    double gap = 0.0;
    Eigen::VectorXd singular_values;
};

RankInfo rank_info_at(const PoissonStructure& P, const Eigen::VectorXd& m, double tol = 1e-9);

/// Rank of Pi(m); throws std::runtime_error if the count comes out odd.
int rank_at(const PoissonStructure& P, const Eigen::VectorXd& m, double tol = 1e-9);

/** Lie derivative of the bivector along a numeric field Y at m, via
    [Y,Pi]^{ij} = sum_k (Y^k d_k Pi^{ij} - Pi^{kj} d_k Y^i - Pi^{ik} d_k Y^j).
    d_k Pi is symbolic; d_k Y is a central difference with step h_step, or
    1e-5 * max(1,|m_k|) per direction when h_step <= 0.  The result is
    antisymmetrized to remove finite-difference noise.  Vanishes (to FD error)
    exactly when Y preserves the Poisson structure. */
PointwiseBivector lie_derivative_bivector(const NumericField& Y, const PoissonStructure& P,
                                          const Eigen::VectorXd& m, double h_step = 0.0);

/** Orthonormal basis (columns) of the polar of span(covectors) with respect to
    B: all xi with xi^T B eta = 0 for every spanning covector eta.  Computed as
    the SVD null space of the matrix with rows (B eta_a)^T; singular values
    below tol * max(sigma_max, 1) count as zero. */
Eigen::MatrixXd polar_subspace(const PointwiseBivector& B,
                               const std::vector<Eigen::VectorXd>& covectors,
                               double tol = 1e-9);

/** Largest principal angle (radians) between the column spans of A and B.
    Zero iff the spans coincide (requires equal dimensions; throws otherwise). */
double subspace_angle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

/// All n partial derivatives of f, each simplified.
std::vector<Expr> gradient_exprs(const Expr& f, int n);

/// Gradient of f evaluated at m.
Eigen::VectorXd gradient_at(const Expr& f, const Eigen::VectorXd& m);

}  // namespace aatk
