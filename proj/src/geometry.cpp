#include "aatk/geometry.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace aatk {

namespace {

void walk_check(const PoissonStructure& P, const Expr& e) {
    const ExprNode& n = e.node();
    if (n.kind == ExprKind::Var) {
        if (n.var_index < 0 || n.var_index >= P.n ||
            P.coords[static_cast<std::size_t>(n.var_index)] != n.var_name) {
            std::ostringstream os;
            os << "coordinate mismatch: expression references '" << n.var_name
               << "' (slot " << n.var_index << ") which is not a coordinate of the structure";
            throw std::invalid_argument(os.str());
        }
        return;
    }
    if (n.a.valid()) walk_check(P, n.a);
    if (n.b.valid()) walk_check(P, n.b);
}

/** Commutative product with a deterministic operand order (by printed form).
    Mirrored bracket terms then build identical subtrees, so expressions like
    {f,f} and {f,g}+{g,f} cancel structurally, not just numerically.  IEEE
    multiplication commutes, so the reordering never changes evaluated values. */
Expr canon_mul(const Expr& a, const Expr& b) {
    if (print_expr(b) < print_expr(a)) return make_binary(ExprKind::Mul, b, a);
    return make_binary(ExprKind::Mul, a, b);
}

}  // namespace

Expr pi_entry(const PoissonStructure& P, int i, int j) {
    if (i == j) return make_const(0.0);
    if (i < j) {
        auto it = P.pi_upper.find({i, j});
        return it == P.pi_upper.end() ? make_const(0.0) : it->second;
    }
    auto it = P.pi_upper.find({j, i});
    if (it == P.pi_upper.end()) return make_const(0.0);
    return simplify(make_unary(ExprKind::Neg, it->second));
}

void check_coordinates(const PoissonStructure& P, const Expr& f) { walk_check(P, f); }

PointwiseBivector bivector_at(const PoissonStructure& P, const Eigen::VectorXd& m) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(P.n, P.n);
    for (const auto& [ij, e] : P.pi_upper) {
        double v = evaluate(e, m);
        A(ij.first, ij.second) = v;
        A(ij.second, ij.first) = -v;
    }
    return PointwiseBivector{std::move(A)};
}

PointwiseBivector antisymmetrize(const Eigen::MatrixXd& A) {
    if (A.rows() != A.cols()) throw std::invalid_argument("antisymmetrize: matrix not square");
    return PointwiseBivector{0.5 * (A - A.transpose())};
}

Expr poisson_bracket(const PoissonStructure& P, const Expr& f, const Expr& g) {
    check_coordinates(P, f);
    check_coordinates(P, g);
    if (equal_trees(f, g)) return make_const(0.0);

    std::map<int, Expr> df, dg;
    auto deriv = [](std::map<int, Expr>& cache, const Expr& e, int i) {
        auto it = cache.find(i);
        if (it == cache.end()) it = cache.emplace(i, simplify(differentiate(e, i))).first;
        return it->second;
    };

    Expr acc;
    for (const auto& [ij, pie] : P.pi_upper) {
        const auto [i, j] = ij;
        Expr pos = canon_mul(deriv(df, f, i), deriv(dg, g, j));
        Expr neg = canon_mul(deriv(df, f, j), deriv(dg, g, i));
        Expr term = make_binary(ExprKind::Mul, pie, make_binary(ExprKind::Sub, pos, neg));
        acc = acc.valid() ? make_binary(ExprKind::Add, acc, term) : term;
    }
    if (!acc.valid()) return make_const(0.0);
    return simplify(acc);
}

VectorFieldExpr hamiltonian_vector_field(const PoissonStructure& P, const Expr& h) {
    check_coordinates(P, h);
    VectorFieldExpr V;
    V.components.reserve(static_cast<std::size_t>(P.n));
    for (int i = 0; i < P.n; ++i) {
        Expr xi = make_var(i, P.coords[static_cast<std::size_t>(i)]);
        V.components.push_back(poisson_bracket(P, xi, h));
    }
    return V;
}

Expr jacobiator(const PoissonStructure& P, const Expr& f, const Expr& g, const Expr& h) {
    Expr t1 = poisson_bracket(P, f, poisson_bracket(P, g, h));
    Expr t2 = poisson_bracket(P, g, poisson_bracket(P, h, f));
    Expr t3 = poisson_bracket(P, h, poisson_bracket(P, f, g));
    return simplify(make_binary(ExprKind::Add, make_binary(ExprKind::Add, t1, t2), t3));
}

Eigen::VectorXd evaluate_field(const VectorFieldExpr& V, const Eigen::VectorXd& m) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(V.components.size()));
    for (std::size_t i = 0; i < V.components.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = evaluate(V.components[i], m);
    return out;
}

NumericField field_evaluator(const VectorFieldExpr& V) {
    return [V](const Eigen::VectorXd& m) { return evaluate_field(V, m); };
}

PoissonReport verify_poisson(const PoissonStructure& P, const Box& box, int n_samples,
                             double tol, std::uint64_t seed) {
    if (box.dim() != P.n) throw std::invalid_argument("verify_poisson: box dimension mismatch");
    PoissonReport rep;
    rep.tol = tol;

    for (int i = 0; i < P.n; ++i)
        for (int j = i + 1; j < P.n; ++j)
            for (int k = j + 1; k < P.n; ++k) {
                TripleReport tr;
                tr.i = i;
                tr.j = j;
                tr.k = k;
                rep.triples.push_back(tr);
            }

    std::vector<Expr> jac(rep.triples.size());
    for (std::size_t t = 0; t < rep.triples.size(); ++t) {
        const TripleReport& tr = rep.triples[t];
        Expr xi = make_var(tr.i, P.coords[static_cast<std::size_t>(tr.i)]);
        Expr xj = make_var(tr.j, P.coords[static_cast<std::size_t>(tr.j)]);
        Expr xk = make_var(tr.k, P.coords[static_cast<std::size_t>(tr.k)]);
        jac[t] = jacobiator(P, xi, xj, xk);
        rep.triples[t].symbolic_zero = is_zero_node(jac[t]);
        rep.triples[t].worst_point = 0.5 * (box.lo + box.hi);
    }

    Rng rng(seed);
    for (int s = 0; s < n_samples; ++s) {
        Eigen::VectorXd m = box.sample(rng);
        for (std::size_t t = 0; t < rep.triples.size(); ++t) {
            double v;
            try {
                v = std::abs(evaluate(jac[t], m));
            } catch (const EvalError&) {
                ++rep.eval_failures;
                continue;
            }
            if (v >= rep.triples[t].max_abs) {
                rep.triples[t].max_abs = v;
                rep.triples[t].worst_point = m;
            }
        }
    }
    rep.max_abs = 0.0;
    for (const auto& tr : rep.triples) rep.max_abs = std::max(rep.max_abs, tr.max_abs);
    rep.pass = rep.max_abs < tol;
    return rep;
}

RankInfo rank_info_at(const PoissonStructure& P, const Eigen::VectorXd& m, double tol) {
    PointwiseBivector B = bivector_at(P, m);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B.mat);
    RankInfo info;
    info.singular_values = svd.singularValues();
    const double smax = info.singular_values.size() ? info.singular_values[0] : 0.0;
    const double threshold = tol * std::max(smax, 1.0);
    int r = 0;
    while (r < info.singular_values.size() && info.singular_values[r] > threshold) ++r;
    info.rank = r;
    if (r == 0 || r == info.singular_values.size() || info.singular_values[r] <= 0.0)
        info.gap = std::numeric_limits<double>::infinity();
    else
        info.gap = info.singular_values[r - 1] / info.singular_values[r];
    return info;
}

int rank_at(const PoissonStructure& P, const Eigen::VectorXd& m, double tol) {
    RankInfo info = rank_info_at(P, m, tol);
    if (info.rank % 2 != 0) {
        std::ostringstream os;
        os << "rank_at: antisymmetric matrix produced odd numerical rank " << info.rank
           << " (singular values:";
        for (int i = 0; i < info.singular_values.size(); ++i) os << ' ' << info.singular_values[i];
        os << "); tighten or loosen tol to step past the borderline pair";
        throw std::runtime_error(os.str());
    }
    return info.rank;
}

PointwiseBivector lie_derivative_bivector(const NumericField& Y, const PoissonStructure& P,
                                          const Eigen::VectorXd& m, double h_step) {
    const int n = P.n;
    const Eigen::VectorXd Ym = Y(m);
    if (Ym.size() != n)
        throw std::invalid_argument("lie_derivative_bivector: field dimension mismatch");

    // central-difference Jacobian of Y: JY(i,k) = d_k Y^i
    Eigen::MatrixXd JY(n, n);
    for (int k = 0; k < n; ++k) {
        const double h = h_step > 0.0 ? h_step : 1e-5 * std::max(1.0, std::abs(m[k]));
        Eigen::VectorXd mp = m, mm = m;
        mp[k] += h;
        mm[k] -= h;
        JY.col(k) = (Y(mp) - Y(mm)) / (2.0 * h);
    }

    const Eigen::MatrixXd B = bivector_at(P, m).mat;

    // d_k Pi^{ij} at m, symbolic derivatives of the upper triangle
    std::vector<Eigen::MatrixXd> dPi(static_cast<std::size_t>(n),
                                     Eigen::MatrixXd::Zero(n, n));
    for (const auto& [ij, e] : P.pi_upper) {
        for (int k = 0; k < n; ++k) {
            double v = evaluate(simplify(differentiate(e, k)), m);
            dPi[static_cast<std::size_t>(k)](ij.first, ij.second) = v;
            dPi[static_cast<std::size_t>(k)](ij.second, ij.first) = -v;
        }
    }

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double acc = 0.0;
            for (int k = 0; k < n; ++k)
                acc += Ym[k] * dPi[static_cast<std::size_t>(k)](i, j) - B(k, j) * JY(i, k) -
                       B(i, k) * JY(j, k);
            A(i, j) = acc;
        }
    return antisymmetrize(A);
}

Eigen::MatrixXd polar_subspace(const PointwiseBivector& B,
                               const std::vector<Eigen::VectorXd>& covectors, double tol) {
    const int n = static_cast<int>(B.mat.rows());
    if (covectors.empty()) return Eigen::MatrixXd::Identity(n, n);

    Eigen::MatrixXd M(static_cast<Eigen::Index>(covectors.size()), n);
    for (std::size_t a = 0; a < covectors.size(); ++a) {
        if (covectors[a].size() != n)
            throw std::invalid_argument("polar_subspace: covector dimension mismatch");
        M.row(static_cast<Eigen::Index>(a)) = (B.mat * covectors[a]).transpose();
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double smax = sv.size() ? sv[0] : 0.0;
    const double threshold = tol * std::max(smax, 1.0);
    int rank = 0;
    while (rank < sv.size() && sv[rank] > threshold) ++rank;
    return svd.matrixV().rightCols(n - rank);
}

double subspace_angle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw std::invalid_argument("subspace_angle: subspaces of different shape");
    if (A.cols() == 0) return 0.0;

    auto orthonormal = [](const Eigen::MatrixXd& X) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU);
        const Eigen::VectorXd& sv = svd.singularValues();
        if (sv[sv.size() - 1] <= 1e-12 * std::max(sv[0], 1.0))
            throw std::invalid_argument("subspace_angle: rank-deficient span");
        return Eigen::MatrixXd(svd.matrixU());
    };

    Eigen::MatrixXd UA = orthonormal(A), UB = orthonormal(B);
    // sine formula: asin of the residual norm is well-conditioned near zero,
    // where acos of a cosine singular value would lose half the digits
    Eigen::MatrixXd R = UB - UA * (UA.transpose() * UB);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(R);
    double s = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
    return std::asin(std::min(1.0, s));
}

std::vector<Expr> gradient_exprs(const Expr& f, int n) {
    std::vector<Expr> g;
    g.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g.push_back(simplify(differentiate(f, i)));
    return g;
}

Eigen::VectorXd gradient_at(const Expr& f, const Eigen::VectorXd& m) {
    Eigen::VectorXd g(m.size());
    for (int i = 0; i < m.size(); ++i) g[i] = evaluate(simplify(differentiate(f, i)), m);
    return g;
}

}  // namespace aatk
