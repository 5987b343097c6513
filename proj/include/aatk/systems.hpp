#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aatk/expr.hpp"
#include "aatk/geometry.hpp"
#include "aatk/util.hpp"

namespace aatk {

/// Document / schema / fixture-invariant violation: an input error, distinct
/// from an analysis failure (which is carried in reports instead).
struct SpecError : std::runtime_error {
    explicit SpecError(const std::string& what) : std::runtime_error(what) {}
};

enum class SystemKind { Commutative, Noncommutative };

struct NamedFunction {
    std::string name;
    Expr expr;
};

/** A dynamical system to analyze: Poisson structure, ordered first integrals
    f_1..f_s (the first rank_r of them generate the torus directions), the
    declared transverse/base-Casimir function names (s - r of them), a sampling
    and containment box, and a seed point expected to satisfy the regularity
    conditions.  Immutable after load. */
struct SystemSpec {
    PoissonStructure structure;
    std::vector<NamedFunction> functions;
    int rank_r = 0;
    SystemKind kind = SystemKind::Commutative;
    std::vector<std::string> transverse_names;
    Box domain_box;
    Eigen::VectorXd seed_point;

    int n() const { return structure.n; }
    int s() const { return static_cast<int>(functions.size()); }
    int r() const { return rank_r; }

    /// Index of a function by name; throws SpecError if absent.
    int function_index(const std::string& name) const;

    /// Names of all functions in order — the coordinates of the base image.
    std::vector<std::string> base_names() const;

    /// Indices (into functions) of the declared transverse functions.
    std::vector<int> transverse_indices() const;

    /// F(m): all s function values at m.
    Eigen::VectorXd F_at(const Eigen::VectorXd& m) const;
};

/// Parse a JSON system document (schema in README).  Throws SpecError /
/// ParseError on schema violations, bad expressions, or invariant violations.
SystemSpec load_system(const std::string& document);

/// Deterministic JSON serialization; load_system(serialize_system(s)) == s.
std::string serialize_system(const SystemSpec& spec);

/// Names accepted by builtin().
const std::vector<std::string>& builtin_names();

/// The JSON document text of a built-in fixture; throws SpecError on unknown name.
std::string builtin_document(const std::string& name);

/// Built-in fixture, loaded through the same path as user documents.
SystemSpec builtin(const std::string& name);

/** One validation condition: verdict, worst numeric residual, the point
    witnessing it, and a human-readable note (symbolic-zero counts, rank gaps). */
struct ConditionVerdict {
    std::string label;
    bool pass = false;
    double residual = 0.0;
    Eigen::VectorXd witness;
    std::string note;
};

struct ValidationReport {
    bool pass = false;
    std::vector<ConditionVerdict> conditions;
};

/** Checks the commutative integrability definition:
    (1) pairwise involution |{f_i,f_j}| < tol at samples,
    (2) rank dF = s at the seed,
    (3) rank Pi(seed) = 2r,
    (4) declared transverse functions are Casimirs: |Pi·dz| < tol at samples.
    Throws std::invalid_argument if spec.kind is not Commutative. */
ValidationReport validate_commutative(const SystemSpec& spec, int n_samples, double tol);

/** Checks the non-commutative definition:
    (1) rank dF = s at the seed,
    (2) |{f_i,f_j}| < tol for i <= r, all j, at samples,
    (3) r + s = n,
    (4) X_{f_1}..X_{f_r} independent at the seed,
    (5) polarity: at n_samples regular points (rank dF = s, found by rejection
        sampling in domain_box), the polar of span{df_1..df_r} equals
        span{df_1..df_s} within subspace angle < tol.
    Throws std::invalid_argument if spec.kind is not Noncommutative. */
ValidationReport validate_noncommutative(const SystemSpec& spec, int n_samples, double tol);

/** Bracket induced on the base: g and h are expressions in the base names
    (the function names); {g∘F, h∘F} is evaluated at each fiber sample by the
    chain rule through the symbolic brackets {f_a,f_b}.  Returns the mean as
    the local value and the max deviation from the mean as the fiber-constancy
    spread.  Throws std::invalid_argument on fewer than 2 samples. */
std::pair<double, double> induced_base_bracket(const SystemSpec& spec, const Expr& g,
                                               const Expr& h,
                                               const std::vector<Eigen::VectorXd>& fiber_samples);

/** Does g (in base names) pull back to a function in involution with every
    f_j?  On pass, X_{g∘F} is decomposed against X_{f_1}..X_{f_r} by least
    squares at each sample. */
struct CasBasicReport {
    bool pass = false;
    double worst_residual = 0.0;   ///< max |{g∘F, f_j}| over samples and j
    Eigen::VectorXd witness;
    double expansion_residual = 0.0;  ///< max LSQ defect of X_{g∘F} = sum psi_i X_{f_i}
    Eigen::VectorXd psi;              ///< expansion coefficients at the seed point
};

CasBasicReport is_cas_basic(const SystemSpec& spec, const Expr& g, int n_samples, double tol);

}  // namespace aatk
