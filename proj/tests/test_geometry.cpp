#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "aatk/expr.hpp"
#include "aatk/geometry.hpp"
#include "aatk/util.hpp"

using namespace aatk;

namespace {

PoissonStructure make_structure(std::vector<std::string> coords,
                                std::vector<std::tuple<int, int, std::string>> entries) {
    PoissonStructure P;
    P.coords = std::move(coords);
    P.n = static_cast<int>(P.coords.size());
    for (auto& [i, j, s] : entries) P.pi_upper[{i, j}] = parse_expr(s, P.coords);
    return P;
}

PoissonStructure canonical_r2() { return make_structure({"q", "p"}, {{0, 1, "1"}}); }

PoissonStructure canonical_r4() {
    return make_structure({"q1", "p1", "q2", "p2"}, {{0, 1, "1"}, {2, 3, "1"}});
}

PoissonStructure so3_fixture() {
    return make_structure({"x", "y", "z"}, {{0, 1, "z"}, {1, 2, "x"}, {0, 2, "-y"}});
}

// Rank-varying bivector on R^4 in coordinates (f1,f2,g1,g2): the two
// Hamiltonian fields X_f1, X_f2 span a non-compact orbit direction.
PoissonStructure triangular_fixture() {
    return make_structure({"f1", "f2", "g1", "g2"},
                          {{0, 2, "-1"}, {1, 2, "-g2"}, {1, 3, "-g2^2"}});
}

// Linear bivector violating the Jacobi identity: J(x1,x2,x3) = -x2 (derived
// by expanding the three cyclic brackets by hand; re-derived numerically below).
PoissonStructure broken_fixture() {
    return make_structure({"x1", "x2", "x3"}, {{0, 1, "x1"}, {0, 2, "x2"}});
}

// Same shape but decomposable (both entries proportional to x1): this one
// satisfies Jacobi even though it looks like a near-miss of the broken one.
PoissonStructure decomposable_fixture() {
    return make_structure({"x1", "x2", "x3"}, {{0, 1, "x1"}, {0, 2, "x1"}});
}

/** Independent bracket oracle: same contraction, but every partial derivative
    is a central finite difference of `evaluate` — no symbolic differentiation
    in the loop, so it cross-checks poisson_bracket end to end. */
double oracle_bracket_fd(const PoissonStructure& P, const Expr& f, const Expr& g,
                         const Eigen::VectorXd& m) {
    auto pd = [&](const Expr& e, int i) {
        const double h = 1e-6 * std::max(1.0, std::abs(m[i]));
        Eigen::VectorXd mp = m, mm = m;
        mp[i] += h;
        mm[i] -= h;
        return (evaluate(e, mp) - evaluate(e, mm)) / (2.0 * h);
    };
    double acc = 0.0;
    for (const auto& [ij, pie] : P.pi_upper)
        acc += evaluate(pie, m) * (pd(f, ij.first) * pd(g, ij.second) -
                                   pd(f, ij.second) * pd(g, ij.first));
    return acc;
}

/// Random polynomial tree: +, -, *, ^2, quarter-integer constants.
Expr poly_tree(Rng& rng, const std::vector<std::string>& vars, int depth) {
    if (depth == 0 || rng.uniform() < 0.3) {
        if (rng.uniform() < 0.7) {
            int v = static_cast<int>(rng.next() % vars.size());
            return make_var(v, vars[static_cast<std::size_t>(v)]);
        }
        return make_const(std::round(rng.uniform(-1.5, 1.5) * 4.0) / 4.0);
    }
    double u = rng.uniform();
    if (u < 0.12) return make_unary(ExprKind::Neg, poly_tree(rng, vars, depth - 1));
    if (u < 0.22)
        return make_binary(ExprKind::Pow, poly_tree(rng, vars, depth - 1), make_const(2.0));
    ExprKind k = u < 0.55 ? ExprKind::Add : (u < 0.8 ? ExprKind::Mul : ExprKind::Sub);
    return make_binary(k, poly_tree(rng, vars, depth - 1), poly_tree(rng, vars, depth - 1));
}

/// Random smooth tree: polynomial skeleton with occasional sin/cos/exp wrappers.
Expr smooth_tree(Rng& rng, const std::vector<std::string>& vars, int depth) {
    Expr e = poly_tree(rng, vars, depth);
    double u = rng.uniform();
    if (u < 0.25) return make_unary(ExprKind::Sin, e);
    if (u < 0.5) return make_unary(ExprKind::Cos, e);
    if (u < 0.6) return make_unary(ExprKind::Exp, poly_tree(rng, vars, 1));
    return e;
}

double max_abs_entry(const PointwiseBivector& B) { return B.mat.cwiseAbs().maxCoeff(); }

/// Distance from v to the column span of Q (columns orthonormal).
double span_residual(const Eigen::MatrixXd& Q, const Eigen::VectorXd& v) {
    return (v - Q * (Q.transpose() * v)).norm();
}

}  // namespace

TEST_CASE("bracket matches the finite-difference oracle on all fixtures") {
    struct Pick {
        PoissonStructure P;
        std::vector<std::string> fs;
    };
    std::vector<Pick> picks;
    picks.push_back({canonical_r4(), {"(q1^2+p1^2)/2", "q1*p2 - q2*p1", "sin(q1)*p2"}});
    picks.push_back({so3_fixture(), {"x^2/2 + y^2/4 + z^2/6", "x^2+y^2+z^2", "cos(x)+y*z"}});
    picks.push_back({triangular_fixture(), {"f1", "f2", "g1*g2 + f1^2"}});

    Rng rng(11);
    int checked = 0;
    for (auto& pk : picks) {
        std::vector<Expr> es;
        for (auto& s : pk.fs) es.push_back(parse_expr(s, pk.P.coords));
        for (std::size_t a = 0; a < es.size(); ++a)
            for (std::size_t b = 0; b < es.size(); ++b) {
                Expr br = poisson_bracket(pk.P, es[a], es[b]);
                for (int t = 0; t < 10; ++t) {
                    Eigen::VectorXd m = Box::cube(pk.P.n, -1.0, 1.0).sample(rng);
                    double got = evaluate(br, m);
                    double want = oracle_bracket_fd(pk.P, es[a], es[b], m);
                    CHECK(std::abs(got - want) <= 1e-6 * std::max(1.0, std::abs(want)));
                    ++checked;
                }
            }
    }
    CHECK(checked >= 270);
}

TEST_CASE("canonical plane: bracket and Hamiltonian fields") {
    PoissonStructure P = canonical_r2();
    Expr q = parse_expr("q", P.coords), p = parse_expr("p", P.coords);

    Expr qp = poisson_bracket(P, q, p);
    CHECK(equal_trees(qp, make_const(1.0)));

    // h = (q^2+p^2)/2 drives the rotation field (p, -q)
    Expr h = parse_expr("(q^2 + p^2)/2", P.coords);
    VectorFieldExpr X = hamiltonian_vector_field(P, h);
    REQUIRE(X.components.size() == 2);
    CHECK(zero_certificate(simplify(make_binary(ExprKind::Sub, X.components[0], p)), 2).symbolic);
    CHECK(zero_certificate(
              simplify(make_binary(ExprKind::Add, X.components[1], q)), 2)
              .symbolic);

    VectorFieldExpr Z = hamiltonian_vector_field(P, make_const(3.25));
    CHECK(is_zero_node(Z.components[0]));
    CHECK(is_zero_node(Z.components[1]));

    // {f,f} folds to zero even for transcendental f, via structural cancellation
    Expr f1 = parse_expr("sin(q)*exp(p) + q^2", P.coords);
    Expr f2 = parse_expr("sin(q)*exp(p) + q^2", P.coords);
    CHECK(is_zero_node(poisson_bracket(P, f1, f2)));
}

TEST_CASE("rotation-algebra fixture: cyclic brackets and the Casimir") {
    PoissonStructure P = so3_fixture();
    Expr x = parse_expr("x", P.coords), y = parse_expr("y", P.coords),
         z = parse_expr("z", P.coords);
    CHECK(equal_trees(poisson_bracket(P, x, y), z));
    CHECK(equal_trees(poisson_bracket(P, y, z), x));
    CHECK(equal_trees(poisson_bracket(P, z, x), y));

    // the sphere radius is a Casimir: {x, x^2+y^2+z^2} must cancel exactly
    Expr C = parse_expr("x^2 + y^2 + z^2", P.coords);
    CHECK(is_zero_node(poisson_bracket(P, x, C)));
    CHECK(is_zero_node(poisson_bracket(P, y, C)));
    CHECK(is_zero_node(poisson_bracket(P, z, C)));
}

TEST_CASE("triangular fixture: second Hamiltonian field has the upper-triangular form") {
    PoissonStructure P = triangular_fixture();
    VectorFieldExpr X = hamiltonian_vector_field(P, parse_expr("f2", P.coords));
    REQUIRE(X.components.size() == 4);
    CHECK(is_zero_node(X.components[0]));
    CHECK(is_zero_node(X.components[1]));
    CHECK(zero_certificate(simplify(make_binary(ExprKind::Sub, X.components[2],
                                                parse_expr("g2", P.coords))),
                           4)
              .symbolic);
    CHECK(zero_certificate(simplify(make_binary(ExprKind::Sub, X.components[3],
                                                parse_expr("g2^2", P.coords))),
                           4)
              .symbolic);
}

TEST_CASE("jacobiator: constant and triangular structures fold to zero") {
    PoissonStructure C4 = canonical_r4();
    Expr a = parse_expr("q1", C4.coords), b = parse_expr("p1", C4.coords),
         c = parse_expr("q2", C4.coords);
    CHECK(is_zero_node(jacobiator(C4, a, b, c)));

    PoissonStructure T = triangular_fixture();
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            for (int k = j + 1; k < 4; ++k) {
                Expr xi = make_var(i, T.coords[static_cast<std::size_t>(i)]);
                Expr xj = make_var(j, T.coords[static_cast<std::size_t>(j)]);
                Expr xk = make_var(k, T.coords[static_cast<std::size_t>(k)]);
                CHECK(is_zero_node(jacobiator(T, xi, xj, xk)));
            }
}

TEST_CASE("jacobiator: the broken linear bivector is caught, its near-miss is not") {
    PoissonStructure B = broken_fixture();
    Expr x1 = parse_expr("x1", B.coords), x2 = parse_expr("x2", B.coords),
         x3 = parse_expr("x3", B.coords);
    Expr J = jacobiator(B, x1, x2, x3);

    // brute-force cross-check: J must equal -x2 pointwise
    Rng rng(7);
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd m = Box::cube(3, -2.0, 2.0).sample(rng);
        CHECK(std::abs(evaluate(J, m) - (-m[1])) < 1e-12);
    }
    CHECK(zero_certificate(simplify(make_binary(ExprKind::Add, J, x2)), 3).symbolic);

    // the decomposable cousin satisfies Jacobi despite the similar shape
    PoissonStructure D = decomposable_fixture();
    Expr y1 = parse_expr("x1", D.coords), y2 = parse_expr("x2", D.coords),
         y3 = parse_expr("x3", D.coords);
    CHECK(is_zero_node(jacobiator(D, y1, y2, y3)));
}

TEST_CASE("verify_poisson passes the Poisson fixtures and rejects the broken one") {
    PoissonReport r1 = verify_poisson(so3_fixture(), Box::cube(3, -1.0, 1.0), 100, 1e-9);
    CHECK(r1.pass);
    CHECK(r1.max_abs < 1e-9);
    for (const auto& tr : r1.triples) CHECK(tr.symbolic_zero);

    PoissonReport r2 = verify_poisson(triangular_fixture(), Box::cube(4, -1.0, 1.0), 100, 1e-9);
    CHECK(r2.pass);
    for (const auto& tr : r2.triples) CHECK(tr.symbolic_zero);

    PoissonStructure B = broken_fixture();
    PoissonReport r3 = verify_poisson(B, Box::cube(3, -1.0, 1.0), 100, 1e-9);
    CHECK_FALSE(r3.pass);
    CHECK(r3.max_abs > 1e-9);
    REQUIRE(r3.triples.size() == 1);
    CHECK_FALSE(r3.triples[0].symbolic_zero);
    // the reported worst point reproduces the reported residual: J = -x2 there
    CHECK(std::abs(r3.triples[0].worst_point[1]) == doctest::Approx(r3.max_abs).epsilon(1e-12));
}

TEST_CASE("pointwise rank: fixtures against an LU oracle, evenness everywhere") {
    PoissonStructure T = triangular_fixture();
    Eigen::VectorXd origin = Eigen::VectorXd::Zero(4);
    CHECK(rank_at(T, origin) == 2);

    Eigen::VectorXd m1(4);
    m1 << 0.0, 0.0, 0.0, 1.0;
    // oracle: hand-built matrix at (0,0,0,1), rank via full-pivot LU
    Eigen::MatrixXd M(4, 4);
    M << 0, 0, -1, 0, 0, 0, -1, -1, 1, 1, 0, 0, 0, 1, 0, 0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
    CHECK(lu.rank() == 4);
    CHECK(rank_at(T, m1) == 4);
    CHECK((bivector_at(T, m1).mat - M).cwiseAbs().maxCoeff() == 0.0);

    PoissonStructure S = so3_fixture();
    CHECK(rank_at(S, Eigen::VectorXd::Zero(3)) == 0);
    Eigen::VectorXd m2(3);
    m2 << 0.1, 0.2, 0.9;
    CHECK(rank_at(S, m2) == 2);
    CHECK(rank_info_at(S, m2).gap > 1e12);  // huge or infinite: clean cutoff

    PoissonStructure C4 = canonical_r4();
    Rng rng(23);
    // evenness + LU agreement at random points of a rank-jumping 5d structure
    PoissonStructure R5 = make_structure(
        {"x1", "x2", "x3", "x4", "x5"},
        {{0, 1, "x3"}, {0, 4, "x2*x3"}, {1, 2, "1 + x5"}, {2, 3, "x4^2"}, {3, 4, "x1"}});
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd p4 = Box::cube(4, -2.0, 2.0).sample(rng);
        CHECK(rank_at(C4, p4) == 4);
        Eigen::VectorXd p5 = Box::cube(5, -2.0, 2.0).sample(rng);
        int r = rank_at(R5, p5);
        CHECK(r % 2 == 0);
        Eigen::FullPivLU<Eigen::MatrixXd> lu5(bivector_at(R5, p5).mat);
        lu5.setThreshold(1e-9);
        CHECK(r == lu5.rank());
    }
}

TEST_CASE("structure-preservation residual: Hamiltonian fields pass, the radial field scores -2") {
    PoissonStructure P = canonical_r2();
    Expr h = parse_expr("(q^2 + p^2)/2", P.coords);
    NumericField XH = field_evaluator(hamiltonian_vector_field(P, h));

    Rng rng(31);
    for (int t = 0; t < 10; ++t) {
        Eigen::VectorXd m = Box::cube(2, -2.0, 2.0).sample(rng);
        CHECK(max_abs_entry(lie_derivative_bivector(XH, P, m)) < 1e-8);
    }

    // the radial field scales the symplectic form: [Y,Pi]^{qp} = -2 identically
    NumericField radial = [](const Eigen::VectorXd& m) { return m; };
    std::vector<Eigen::VectorXd> pts;
    Eigen::VectorXd a(2), b(2), c(2);
    a << 0.3, 0.7;
    b << 3.0, -2.0;
    c << 0.0, 0.0;
    pts = {a, b, c};
    for (const auto& m : pts) {
        PointwiseBivector L = lie_derivative_bivector(radial, P, m);
        CHECK(L.mat(0, 1) == doctest::Approx(-2.0).epsilon(1e-9));
        CHECK(L.mat(1, 0) == doctest::Approx(2.0).epsilon(1e-9));
    }
}

TEST_CASE("structure-preservation residual stays below FD noise for symbolic fields") {
    Rng rng(41);
    PoissonStructure S = so3_fixture();
    PoissonStructure C4 = canonical_r4();
    for (int t = 0; t < 8; ++t) {
        Expr hs = poly_tree(rng, S.coords, 2);
        NumericField Xs = field_evaluator(hamiltonian_vector_field(S, hs));
        Eigen::VectorXd ms = Box::cube(3, 0.2, 1.0).sample(rng);
        CHECK(max_abs_entry(lie_derivative_bivector(Xs, S, ms)) < 1e-7);

        Expr hc = poly_tree(rng, C4.coords, 2);
        NumericField Xc = field_evaluator(hamiltonian_vector_field(C4, hc));
        Eigen::VectorXd mc = Box::cube(4, -1.0, 1.0).sample(rng);
        CHECK(max_abs_entry(lie_derivative_bivector(Xc, C4, mc)) < 1e-7);
    }
}

TEST_CASE("polar subspaces: zero pairing, codimension one, and the rigid-body equality") {
    // zero bivector pairs with nothing: the polar is everything
    PointwiseBivector Z{Eigen::MatrixXd::Zero(3, 3)};
    Eigen::VectorXd e1 = Eigen::VectorXd::Unit(3, 0);
    Eigen::MatrixXd W = polar_subspace(Z, {e1});
    CHECK(W.cols() == 3);
    CHECK((W.transpose() * W - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);

    PoissonStructure C4 = canonical_r4();
    Eigen::VectorXd m(4);
    m << 0.7, -0.3, 0.4, 1.1;
    Expr H1 = parse_expr("(q1^2 + p1^2)/2", C4.coords);
    Eigen::VectorXd dH1 = gradient_at(H1, m);
    Eigen::MatrixXd pol = polar_subspace(bivector_at(C4, m), {dH1});
    CHECK(pol.cols() == 3);
    CHECK(span_residual(pol, dH1) < 1e-12);

    PoissonStructure S = so3_fixture();
    Eigen::VectorXd ms(3);
    ms << 0.1, 0.2, 0.9;
    Eigen::VectorXd dH = gradient_at(parse_expr("x^2/2 + y^2/4 + z^2/6", S.coords), ms);
    Eigen::VectorXd dC = gradient_at(parse_expr("x^2 + y^2 + z^2", S.coords), ms);
    Eigen::MatrixXd polS = polar_subspace(bivector_at(S, ms), {dH, dC});
    REQUIRE(polS.cols() == 2);
    Eigen::MatrixXd span(3, 2);
    span.col(0) = dH;
    span.col(1) = dC;
    CHECK(subspace_angle(polS, span) < 1e-9);
}

TEST_CASE("polarity is a closure: the double polar contains the original span") {
    Rng rng(53);
    std::vector<PoissonStructure> Ps = {so3_fixture(), canonical_r4(), triangular_fixture()};
    for (auto& P : Ps) {
        for (int t = 0; t < 25; ++t) {
            Eigen::VectorXd m = Box::cube(P.n, -1.0, 1.0).sample(rng);
            int k = 1 + static_cast<int>(rng.next() % 2);
            std::vector<Eigen::VectorXd> sigma;
            for (int a = 0; a < k; ++a) {
                Eigen::VectorXd v(P.n);
                for (int i = 0; i < P.n; ++i) v[i] = rng.uniform(-1.0, 1.0);
                sigma.push_back(v.normalized());
            }
            PointwiseBivector B = bivector_at(P, m);
            Eigen::MatrixXd p1 = polar_subspace(B, sigma);
            std::vector<Eigen::VectorXd> p1cols;
            for (int cidx = 0; cidx < p1.cols(); ++cidx) p1cols.push_back(p1.col(cidx));
            Eigen::MatrixXd p2 = polar_subspace(B, p1cols);
            for (const auto& v : sigma) CHECK(span_residual(p2, v) < 1e-9);
        }
    }
}

TEST_CASE("bracket antisymmetry folds to the zero node") {
    Rng rng(61);
    std::vector<PoissonStructure> Ps = {so3_fixture(), canonical_r4()};
    for (auto& P : Ps) {
        for (int t = 0; t < 20; ++t) {
            Expr f = poly_tree(rng, P.coords, 3);
            Expr g = poly_tree(rng, P.coords, 3);
            Expr s = simplify(make_binary(ExprKind::Add, poisson_bracket(P, f, g),
                                          poisson_bracket(P, g, f)));
            CHECK(is_zero_node(s));
        }
        // transcendental pairs cancel numerically (mirrored trees evaluate alike)
        for (int t = 0; t < 10; ++t) {
            Expr f = smooth_tree(rng, P.coords, 2);
            Expr g = smooth_tree(rng, P.coords, 2);
            Expr s = simplify(make_binary(ExprKind::Add, poisson_bracket(P, f, g),
                                          poisson_bracket(P, g, f)));
            ZeroCertificate zc = zero_certificate(s, P.n);
            CHECK(zc.max_abs < 1e-10);
        }
    }
}

TEST_CASE("bracket satisfies the Leibniz rule pointwise") {
    Rng rng(71);
    std::vector<PoissonStructure> Ps = {so3_fixture(), canonical_r4()};
    for (auto& P : Ps) {
        for (int t = 0; t < 5; ++t) {
            Expr f = poly_tree(rng, P.coords, 2);
            Expr g = poly_tree(rng, P.coords, 2);
            Expr h = poly_tree(rng, P.coords, 2);
            Expr fg = make_binary(ExprKind::Mul, f, g);
            Expr lhs = poisson_bracket(P, fg, h);
            Expr bgh = poisson_bracket(P, g, h);
            Expr bfh = poisson_bracket(P, f, h);
            for (int s = 0; s < 100; ++s) {
                Eigen::VectorXd m = Box::cube(P.n, -1.0, 1.0).sample(rng);
                double resid = evaluate(lhs, m) - evaluate(f, m) * evaluate(bgh, m) -
                               evaluate(g, m) * evaluate(bfh, m);
                CHECK(std::abs(resid) < 1e-10);
            }
        }
    }
}

TEST_CASE("coordinate mismatch is rejected") {
    PoissonStructure S = so3_fixture();
    Expr foreign = parse_expr("a + b", {"a", "b"});
    CHECK_THROWS_AS(poisson_bracket(S, foreign, parse_expr("x", S.coords)),
                    std::invalid_argument);
    CHECK_THROWS_AS(hamiltonian_vector_field(S, foreign), std::invalid_argument);
    Expr shifted = parse_expr("q2", {"q1", "p1", "q2", "p2"});
    CHECK_THROWS_AS(poisson_bracket(S, shifted, shifted), std::invalid_argument);
}

TEST_CASE("subspace angles: coincident spans read zero, orthogonal spans read pi/2") {
    Eigen::MatrixXd A(3, 2), B(3, 2), C(3, 2);
    A << 1, 0, 0, 1, 0, 0;
    // same plane, rotated/mixed basis
    B << 1, 1, 1, -1, 0, 0;
    C << 0, 1, 0, 0, 1, 0;  // shares one direction with A, adds e3
    CHECK(subspace_angle(A, B) < 1e-12);
    CHECK(subspace_angle(A, A) < 1e-13);
    double ang = subspace_angle(A, C);
    CHECK(ang == doctest::Approx(std::acos(0.0)).epsilon(1e-12));
    Eigen::MatrixXd D(3, 1);
    D << 1, 0, 0;
    CHECK_THROWS_AS(subspace_angle(A, D), std::invalid_argument);

    Eigen::MatrixXd R(3, 2);
    R << 1, 1, 0, 0, 0, 0;  // rank deficient
    CHECK_THROWS_AS(subspace_angle(R, A), std::invalid_argument);
}
