#include "aatk/chart.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "aatk/geometry.hpp"

namespace aatk {

namespace {

// relative continuity bound between adjacent section points
const double SECTION_JUMP_REL = 0.5;

// 8-point Gauss-Legendre rule on [-1, 1]
const std::array<double, 4> GL_X = {0.18343464249564980494, 0.52553240991632898582,
                                    0.79666647741362673959, 0.96028985649753623168};
const std::array<double, 4> GL_W = {0.36268378337836198297, 0.31370664587788728734,
                                    0.22238103445337447054, 0.10122853629037625915};

int grid_rank(const BaseGrid& grid) { return static_cast<int>(grid.shape.size()); }

double axis_delta(const BaseGrid& grid, int d) {
    const int nd = grid.shape[static_cast<std::size_t>(d)];
    return nd > 1 ? (grid.hi[d] - grid.lo[d]) / (nd - 1) : 0.0;
}

std::vector<int> nearest_node(const BaseGrid& grid, const Eigen::VectorXd& c_head) {
    const int r = grid_rank(grid);
    std::vector<int> node(static_cast<std::size_t>(r), 0);
    for (int d = 0; d < r; ++d) {
        const int nd = grid.shape[static_cast<std::size_t>(d)];
        if (nd == 1) continue;
        const double delta = axis_delta(grid, d);
        long k = std::lround((c_head[d] - grid.lo[d]) / delta);
        node[static_cast<std::size_t>(d)] = static_cast<int>(std::clamp(k, 0L, long(nd - 1)));
    }
    return node;
}

// evaluate lambda . (b - a) at the quadrature points of the segment a -> b.
// The interpolated lambda restricted to the segment is a polynomial of degree
// <= rank inside each grid cell with slope kinks at cell faces, so the panel
// cuts are aligned with every face crossing: each piece is then integrated
// exactly by the 8-point rule and p is the exact primitive of lambda — the
// derivative the canonical bracket {theta, p} is measured against.
Eigen::VectorXd segment_integral(const LatticeField& field, const Eigen::VectorXd& a,
                                 const Eigen::VectorXd& b, long panels) {
    const Eigen::VectorXd dir = b - a;
    const int r = static_cast<int>(a.size());

    std::vector<double> cuts;
    cuts.push_back(0.0);
    for (long p = 1; p < panels; ++p) cuts.push_back(double(p) / panels);
    cuts.push_back(1.0);
    for (int d = 0; d < r; ++d) {
        const int nd = field.grid.shape[static_cast<std::size_t>(d)];
        if (nd < 3 || dir[d] == 0.0) continue;
        const double delta = (field.grid.hi[d] - field.grid.lo[d]) / (nd - 1);
        for (int j = 1; j < nd - 1; ++j) {
            const double t = (field.grid.lo[d] + j * delta - a[d]) / dir[d];
            if (t > 0.0 && t < 1.0) cuts.push_back(t);
        }
    }
    std::sort(cuts.begin(), cuts.end());

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(r);
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
        const double half = 0.5 * (cuts[p + 1] - cuts[p]);
        if (half <= 0.0) continue;
        const double mid = 0.5 * (cuts[p] + cuts[p + 1]);
        for (int g = 0; g < 4; ++g) {
            for (int sgn = -1; sgn <= 1; sgn += 2) {
                const double t = mid + sgn * half * GL_X[static_cast<std::size_t>(g)];
                const Eigen::MatrixXd lam = lattice_lambda_at(field, a + t * dir);
                acc += GL_W[static_cast<std::size_t>(g)] * half * (lam * dir);
            }
        }
    }
    return acc;
}

}  // namespace

Eigen::VectorXd action_increment(const LatticeField& field, const Eigen::VectorXd& a,
                                 const Eigen::VectorXd& b, long panels) {
    const int r = grid_rank(field.grid);
    if (a.size() != r || b.size() != r)
        throw std::invalid_argument("action_increment: endpoint arity");
    if (panels < 1) throw std::invalid_argument("action_increment: panels must be positive");
    if ((b - a).lpNorm<Eigen::Infinity>() == 0.0) return Eigen::VectorXd::Zero(r);
    return segment_integral(field, a, b, panels);
}

ActionTable action_values(const LatticeField& field, const std::vector<int>& c0_node,
                          double quad_tol) {
    const int r = grid_rank(field.grid);
    if (!field.ok) throw TorusError("action table requires a complete lattice field");
    if (static_cast<int>(c0_node.size()) != r)
        throw std::invalid_argument("action_values: anchor node arity");
    for (int d = 0; d < r; ++d)
        if (c0_node[static_cast<std::size_t>(d)] < 0 ||
            c0_node[static_cast<std::size_t>(d)] >= field.grid.shape[static_cast<std::size_t>(d)])
            throw std::invalid_argument("action_values: anchor node outside the grid");

    ActionTable table;
    table.grid = field.grid;
    table.anchor_node = c0_node;
    const long anchor_flat = field.flat_index(c0_node);
    table.c0 = field.nodes[static_cast<std::size_t>(anchor_flat)].base.head(r);

    // freeze the quadrature resolution on the longest segment so p is one
    // smooth function of c, not a resolution-dependent family
    Eigen::VectorXd far = table.c0;
    double best = -1.0;
    for (const auto& node : field.nodes) {
        const double d = (node.base.head(r) - table.c0).norm();
        if (d > best) {
            best = d;
            far = node.base.head(r);
        }
    }
    long panels = 4;
    if (best > 0.0) {
        Eigen::VectorXd prev = segment_integral(field, table.c0, far, panels);
        for (;;) {
            Eigen::VectorXd next = segment_integral(field, table.c0, far, 2 * panels);
            panels *= 2;
            if ((next - prev).lpNorm<Eigen::Infinity>() < quad_tol) break;
            if (panels > 4096) throw TorusError("action quadrature did not converge");
            prev = next;
        }
    }
    table.panels = panels;

    table.values.reserve(field.nodes.size());
    for (long k = 0; k < static_cast<long>(field.nodes.size()); ++k) {
        if (k == anchor_flat) {
            table.values.push_back(Eigen::VectorXd::Zero(r));
            continue;
        }
        const Eigen::VectorXd head = field.nodes[static_cast<std::size_t>(k)].base.head(r);
        table.values.push_back(action_increment(field, table.c0, head, panels));
    }
    return table;
}

Eigen::VectorXd action_at(const LatticeField& field, const ActionTable& table,
                          const Eigen::VectorXd& c_head) {
    return action_increment(field, table.c0, c_head, table.panels);
}

ClosednessReport closedness_check(const LatticeField& field) {
    const int r = grid_rank(field.grid);
    if (!field.ok) throw TorusError("closedness check requires a complete lattice field");
    ClosednessReport rep;

    std::vector<int> varying;
    for (int d = 0; d < r; ++d)
        if (field.grid.shape[static_cast<std::size_t>(d)] > 2) varying.push_back(d);
    if (varying.empty()) return rep;

    auto lam = [&](const std::vector<int>& node) -> const Eigen::MatrixXd& {
        return field.nodes[static_cast<std::size_t>(field.flat_index(node))].basis;
    };

    const long total = static_cast<long>(field.nodes.size());
    for (long flat = 0; flat < total; ++flat) {
        std::vector<int> node(static_cast<std::size_t>(r));
        long rem = flat;
        bool interior = true;
        for (int d = 0; d < r; ++d) {
            const int nd = field.grid.shape[static_cast<std::size_t>(d)];
            node[static_cast<std::size_t>(d)] = static_cast<int>(rem % nd);
            rem /= nd;
            if (nd > 1 &&
                (node[static_cast<std::size_t>(d)] == 0 || node[static_cast<std::size_t>(d)] == nd - 1))
                interior = false;
        }
        if (!interior) continue;
        ++rep.checked;

        // all centered derivatives d lambda(i,j) / dc_k at this node
        std::vector<Eigen::MatrixXd> deriv(static_cast<std::size_t>(r),
                                           Eigen::MatrixXd::Zero(r, r));
        for (int k : varying) {
            std::vector<int> up = node, dn = node;
            ++up[static_cast<std::size_t>(k)];
            --dn[static_cast<std::size_t>(k)];
            deriv[static_cast<std::size_t>(k)] = (lam(up) - lam(dn)) / (2.0 * axis_delta(field.grid, k));
            rep.scale = std::max(rep.scale, deriv[static_cast<std::size_t>(k)].cwiseAbs().maxCoeff());
        }
        for (std::size_t aj = 0; aj < varying.size(); ++aj)
            for (std::size_t ak = aj + 1; ak < varying.size(); ++ak) {
                const int j = varying[aj], k = varying[ak];
                for (int i = 0; i < r; ++i)
                    rep.residual = std::max(
                        rep.residual, std::abs(deriv[static_cast<std::size_t>(k)](i, j) -
                                               deriv[static_cast<std::size_t>(j)](i, k)));
            }
    }
    rep.relative = rep.residual / std::max(1.0, rep.scale);
    return rep;
}

Section build_section(const SystemSpec& spec, const LatticeField& field, const ChartConfig& cfg) {
    if (!field.ok) throw TorusError("section requires a complete lattice field");
    const int r = grid_rank(field.grid);

    Section sec;
    sec.grid = field.grid;
    sec.transverse_fixed = field.transverse_fixed;
    sec.points.assign(field.nodes.size(), Eigen::VectorXd());

    const Eigen::VectorXd seed_head = spec.F_at(spec.seed_point).head(r);
    sec.anchor_node = nearest_node(field.grid, seed_head);

    const long start = field.flat_index(sec.anchor_node);
    std::vector<bool> queued(field.nodes.size(), false);
    std::deque<std::pair<long, long>> bfs;  // (node, parent), parent -1 = seed_point
    bfs.emplace_back(start, -1);
    queued[static_cast<std::size_t>(start)] = true;

    while (!bfs.empty()) {
        auto [flat, parent] = bfs.front();
        bfs.pop_front();
        const Eigen::VectorXd& from =
            parent < 0 ? spec.seed_point : sec.points[static_cast<std::size_t>(parent)];
        const Eigen::VectorXd target = field.nodes[static_cast<std::size_t>(flat)].base;
        Eigen::VectorXd pt = point_on_fiber(spec, from, target, cfg.section_tol);
        if ((pt - from).norm() > SECTION_JUMP_REL * (1.0 + from.norm()))
            throw TorusError("section continuation jump bound exceeded");
        sec.points[static_cast<std::size_t>(flat)] = pt;

        std::vector<int> node(static_cast<std::size_t>(r));
        long rem = flat;
        for (int d = 0; d < r; ++d) {
            const int nd = field.grid.shape[static_cast<std::size_t>(d)];
            node[static_cast<std::size_t>(d)] = static_cast<int>(rem % nd);
            rem /= nd;
        }
        for (int d = 0; d < r; ++d)
            for (int step = -1; step <= 1; step += 2) {
                std::vector<int> nb = node;
                nb[static_cast<std::size_t>(d)] += step;
                if (nb[static_cast<std::size_t>(d)] < 0 ||
                    nb[static_cast<std::size_t>(d)] >= field.grid.shape[static_cast<std::size_t>(d)])
                    continue;
                const long nb_flat = field.flat_index(nb);
                if (queued[static_cast<std::size_t>(nb_flat)]) continue;
                queued[static_cast<std::size_t>(nb_flat)] = true;
                bfs.emplace_back(nb_flat, flat);
            }
    }
    return sec;
}

Chart build_chart(const SystemSpec& spec, const LatticeField& field, const ChartConfig& cfg) {
    Chart chart;
    chart.field = field;
    chart.section = build_section(spec, field, cfg);
    chart.actions = action_values(field, chart.section.anchor_node, cfg.quad_tol);
    chart.transverse_names = spec.transverse_names;
    chart.angle_tol = cfg.angle_tol;
    return chart;
}

namespace {

/** Shared machinery for angles and chart gradients.  Holds the compiled
    Hamiltonian fields and, on a straightened chart, the omega values wrapped
    as a lattice field so the same multilinear interpolation applies. */
struct AngleContext {
    const SystemSpec& spec;
    const Chart& chart;
    const ChartConfig& cfg;
    int n, r, s;
    std::vector<VectorFieldExpr> X;  // X_{f_1} .. X_{f_r}
    LatticeField omega_field;        // basis slots hold omega when straightened

    // Linearized inter-node reference stitching (r >= 2).  Each node carries
    // its own section anchor; neighbouring anchors need not agree in phase (a
    // sheared section twists them against each other), and an FD stencil
    // confined to one node's reference would read {theta_i,theta_j} = 0 no
    // matter how curved the section is.  offset_slope[node](i,a) estimates
    // d alpha_i / d c_a from the angles of neighbouring section points, and
    // alpha-hat(c) = slope * (c - c_node) joins theta to first order.
    mutable bool offsets_ready = false;
    mutable std::vector<Eigen::MatrixXd> offset_slope;

    AngleContext(const SystemSpec& sp, const Chart& ch, const ChartConfig& cf)
        : spec(sp), chart(ch), cfg(cf), n(sp.n()), r(sp.r()), s(sp.s()) {
        X.reserve(static_cast<std::size_t>(r));
        for (int j = 0; j < r; ++j)
            X.push_back(hamiltonian_vector_field(spec.structure,
                                                 spec.functions[static_cast<std::size_t>(j)].expr));
        if (chart.straightened) {
            if (chart.omega.size() != chart.field.nodes.size())
                throw TorusError("straightened chart is missing omega values");
            omega_field = chart.field;
            for (std::size_t k = 0; k < omega_field.nodes.size(); ++k)
                omega_field.nodes[k].basis = chart.omega[k];
        }
    }

    Eigen::VectorXd anchor(long node_flat, const Eigen::VectorXd& c_full) const {
        return point_on_fiber(spec, chart.section.points[static_cast<std::size_t>(node_flat)],
                              c_full, cfg.section_tol);
    }

    Eigen::VectorXd flow(const Eigen::MatrixXd& lam, const Eigen::VectorXd& t,
                         const Eigen::VectorXd& from) const {
        return joint_flow(spec, lam.transpose() * t, from, cfg.flow).state;
    }

    /// c_head with action value q, by Newton with the interpolated lambda as Jacobian
    Eigen::VectorXd invert_action(const Eigen::VectorXd& q) const {
        Eigen::VectorXd c = chart.actions.c0;
        for (int it = 0; it < 25; ++it) {
            const Eigen::VectorXd res =
                action_at(chart.field, chart.actions, c) - q;
            if (res.lpNorm<Eigen::Infinity>() < 1e-11 * (1.0 + q.norm())) return c;
            const Eigen::MatrixXd lam = lattice_lambda_at(chart.field, c);
            c -= lam.partialPivLu().solve(res);
            for (int d = 0; d < r; ++d) {
                // clamp into the hull plus the interpolation's extrapolation
                // margin: stencil points near the boundary overshoot slightly
                const int nd = chart.field.grid.shape[static_cast<std::size_t>(d)];
                const double delta =
                    nd > 1 ? (chart.field.grid.hi[d] - chart.field.grid.lo[d]) / (nd - 1) : 0.0;
                c[d] = std::clamp(c[d], chart.field.grid.lo[d] - 0.45 * delta,
                                  chart.field.grid.hi[d] + 0.45 * delta);
            }
        }
        throw TorusError("action inversion did not converge");
    }

    /** gamma(p) = integral_0^1 t * omega(c(t p)) p dt — the Poincare-lemma
        potential with d gamma = -omega in action coordinates. */
    Eigen::VectorXd gamma_of(const Eigen::VectorXd& p) const {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(r);
        const long panels = chart.actions.panels;
        for (long pa = 0; pa < panels; ++pa) {
            const double mid = (pa + 0.5) / panels;
            const double half = 0.5 / panels;
            for (int g = 0; g < 4; ++g)
                for (int sgn = -1; sgn <= 1; sgn += 2) {
                    const double t = mid + sgn * half * GL_X[static_cast<std::size_t>(g)];
                    const Eigen::VectorXd c = invert_action(t * p);
                    const Eigen::MatrixXd om = lattice_lambda_at(omega_field, c);
                    acc += GL_W[static_cast<std::size_t>(g)] * half * t * (om * p);
                }
        }
        return acc;
    }

    /// angle components wrapped into [-1/2, 1/2)
    static Eigen::VectorXd wrap_half(Eigen::VectorXd t) {
        for (int i = 0; i < t.size(); ++i) t[i] -= std::round(t[i]);
        return t;
    }

    const Eigen::MatrixXd& offsets_of(long node_flat) const {
        if (!offsets_ready) {
            const BaseGrid& grid = chart.field.grid;
            const std::size_t nn = chart.field.nodes.size();
            offset_slope.assign(nn, Eigen::MatrixXd::Zero(r, r));
            const Eigen::VectorXd zero = Eigen::VectorXd::Zero(r);
            for (std::size_t kf = 0; kf < nn; ++kf) {
                std::vector<int> idx(grid.shape.size());
                long rem = static_cast<long>(kf);
                for (std::size_t d = 0; d < grid.shape.size(); ++d) {
                    idx[d] = static_cast<int>(rem % grid.shape[d]);
                    rem /= grid.shape[d];
                }
                for (int a = 0; a < r; ++a) {
                    const int nd = grid.shape[static_cast<std::size_t>(a)];
                    if (nd < 2) continue;
                    const double delta = (grid.hi[a] - grid.lo[a]) / (nd - 1);
                    const int lo = std::max(idx[static_cast<std::size_t>(a)] - 1, 0);
                    const int hi = std::min(idx[static_cast<std::size_t>(a)] + 1, nd - 1);
                    std::vector<int> nb = idx;
                    nb[static_cast<std::size_t>(a)] = lo;
                    const Eigen::VectorXd off_lo = wrap_half(solve(
                        chart.section.points[static_cast<std::size_t>(chart.field.flat_index(nb))],
                        static_cast<long>(kf), &zero));
                    nb[static_cast<std::size_t>(a)] = hi;
                    const Eigen::VectorXd off_hi = wrap_half(solve(
                        chart.section.points[static_cast<std::size_t>(chart.field.flat_index(nb))],
                        static_cast<long>(kf), &zero));
                    offset_slope[kf].col(a) = (off_hi - off_lo) / ((hi - lo) * delta);
                }
            }
            offsets_ready = true;
        }
        return offset_slope[static_cast<std::size_t>(node_flat)];
    }

    /** Unwrapped angle of x against the anchor continued from node_flat's
        section point.  guess == nullptr runs the coarse 16^r scan first.
        lam_frozen, when given, replaces the interpolated lambda at x: FD
        stencils pass the center's lambda so the measured angle varies only
        through the smooth return time, not through the piecewise-linear
        interpolation.  The omitted dtheta components lie in span{df_a}, which
        every bracket partner annihilates exactly. */
    Eigen::VectorXd solve(const Eigen::VectorXd& x, long node_flat, const Eigen::VectorXd* guess,
                          const Eigen::MatrixXd* lam_frozen = nullptr) const {
        const Eigen::VectorXd c_full = spec.F_at(x);
        const Eigen::MatrixXd lam =
            lam_frozen ? *lam_frozen : lattice_lambda_at(chart.field, c_full.head(r));
        const Eigen::VectorXd a = anchor(node_flat, c_full);

        Eigen::VectorXd t;
        if (guess) {
            t = *guess;
        } else {
            t = Eigen::VectorXd::Zero(r);
            double best = std::numeric_limits<double>::infinity();
            long total = 1;
            for (int i = 0; i < r; ++i) total *= 16;
            for (long flat = 0; flat < total; ++flat) {
                Eigen::VectorXd tc(r);
                long rem = flat;
                for (int i = 0; i < r; ++i) {
                    tc[i] = (rem % 16) / 16.0;
                    rem /= 16;
                }
                const double d = (flow(lam, tc, a) - x).norm();
                if (d < best) {
                    best = d;
                    t = tc;
                }
            }
        }

        for (int it = 0; it < 40; ++it) {
            const Eigen::VectorXd y = flow(lam, t, a);
            const Eigen::VectorXd res = x - y;
            std::vector<Eigen::VectorXd> Xy(static_cast<std::size_t>(r));
            for (int j = 0; j < r; ++j) Xy[static_cast<std::size_t>(j)] = evaluate_field(X[static_cast<std::size_t>(j)], y);
            Eigen::MatrixXd J(n, r);
            for (int i = 0; i < r; ++i) {
                Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
                for (int j = 0; j < r; ++j) col += lam(i, j) * Xy[static_cast<std::size_t>(j)];
                J.col(i) = col;
            }
            Eigen::VectorXd dt = J.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(res);
            if (!dt.allFinite()) break;
            // never jump more than a fraction of a period at once
            const double mag = dt.lpNorm<Eigen::Infinity>();
            if (mag > 0.4) dt *= 0.4 / mag;
            t += dt;
            // the accepted value is the polished iterate, not the one the
            // stop fired on: finite differences of angles would otherwise
            // inherit the full stopping tolerance as a non-smooth error field
            if (res.lpNorm<Eigen::Infinity>() < cfg.angle_tol) return t;
        }
        throw TorusError(
            "angle solve did not converge; the point may not lie on the charted fiber component");
    }

    /// corrected angle value (unwrapped) and the chart functions p, z at x
    struct Values {
        Eigen::VectorXd theta;  // unwrapped, with reference-phase corrections
        Eigen::VectorXd raw;    // bare flow time against the node anchor (warm-start seed)
        Eigen::VectorXd p;
        Eigen::VectorXd z;
    };

    Values values_at(const Eigen::VectorXd& x, long node_flat, const Eigen::VectorXd* guess,
                     const Eigen::MatrixXd* lam_frozen = nullptr) const {
        Values v;
        const Eigen::VectorXd c_full = spec.F_at(x);
        v.p = action_at(chart.field, chart.actions, c_full.head(r));
        v.z = c_full.tail(s - r);
        v.raw = solve(x, node_flat, guess, lam_frozen);
        v.theta = v.raw;
        if (r >= 2)
            v.theta += offsets_of(node_flat) *
                       (c_full.head(r) -
                        chart.field.nodes[static_cast<std::size_t>(node_flat)].base.head(r));
        if (chart.straightened) v.theta += gamma_of(v.p);
        return v;
    }
};

struct ChartGradients {
    Eigen::MatrixXd dtheta;  // r x n
    Eigen::MatrixXd dp;      // r x n
    Eigen::MatrixXd dz;      // (s-r) x n
    Eigen::VectorXd theta0;  // unwrapped center angle
};

/** Fourth-order centered differences of the chart functions around m.  The
    five-point stencil keeps the truncation term h^4 f''''' — small tori have
    steep higher angle derivatives, so a plain h^2 stencil is not enough.  The
    anchor node and the interpolated lambda are frozen for the whole stencil
    and every angle solve warm-starts from its inner neighbour's unwrapped
    value — the continuous lift needed to differentiate a circle-valued
    function.  Freezing also keeps the stencil indifferent to the slope jumps
    of the piecewise-multilinear lambda at cell faces: the angle is then a
    true flow time at a fixed scale, and the face kinks enter only through
    the action gradient, whose integrand is continuous across faces. */
ChartGradients chart_gradients(const AngleContext& ctx, const Eigen::VectorXd& m,
                               const Eigen::VectorXd* guess) {
    const int n = ctx.n, r = ctx.r, s = ctx.s;
    const BaseGrid& grid = ctx.chart.field.grid;
    const Eigen::VectorXd c_head = ctx.spec.F_at(m).head(r);
    const long node = ctx.chart.field.flat_index(nearest_node(grid, c_head));
    const Eigen::MatrixXd lam_c = lattice_lambda_at(ctx.chart.field, c_head);

    AngleContext::Values center = ctx.values_at(m, node, guess, &lam_c);

    ChartGradients g;
    g.dtheta.resize(r, n);
    g.dp.resize(r, n);
    g.dz.resize(s - r, n);
    g.theta0 = center.theta;

    for (int k = 0; k < n; ++k) {
        const double h = ctx.cfg.fd_step * std::max(1.0, std::abs(m[k]));
        Eigen::VectorXd x1p = m, x1m = m, x2p = m, x2m = m;
        x1p[k] += h;
        x1m[k] -= h;
        x2p[k] += 2.0 * h;
        x2m[k] -= 2.0 * h;
        const AngleContext::Values v1p = ctx.values_at(x1p, node, &center.raw, &lam_c);
        const AngleContext::Values v1m = ctx.values_at(x1m, node, &center.raw, &lam_c);
        const AngleContext::Values v2p = ctx.values_at(x2p, node, &v1p.raw, &lam_c);
        const AngleContext::Values v2m = ctx.values_at(x2m, node, &v1m.raw, &lam_c);
        const double d = 12.0 * h;
        g.dtheta.col(k) = (v2m.theta - v2p.theta + 8.0 * (v1p.theta - v1m.theta)) / d;
        g.dp.col(k) = (v2m.p - v2p.p + 8.0 * (v1p.p - v1m.p)) / d;
        g.dz.col(k) = (v2m.z - v2p.z + 8.0 * (v1p.z - v1m.z)) / d;
    }
    return g;
}

/** {a,b}(m) over the strict upper triangle of Pi — pairs cancel exactly, so
    {a,a} is bitwise zero. */
double bracket_of(const Eigen::MatrixXd& P, const Eigen::VectorXd& ga, const Eigen::VectorXd& gb) {
    double acc = 0.0;
    for (int i = 0; i < P.rows(); ++i)
        for (int j = i + 1; j < P.cols(); ++j)
            acc += P(i, j) * (ga[i] * gb[j] - ga[j] * gb[i]);
    return acc;
}

Eigen::MatrixXd omega_at_point(const AngleContext& ctx, const Eigen::VectorXd& m,
                               const Eigen::VectorXd* guess) {
    const ChartGradients g = chart_gradients(ctx, m, guess);
    const Eigen::MatrixXd P = bivector_at(ctx.spec.structure, m).mat;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(ctx.r, ctx.r);
    for (int i = 0; i < ctx.r; ++i)
        for (int j = i + 1; j < ctx.r; ++j) {
            w(i, j) = bracket_of(P, g.dtheta.row(i).transpose(), g.dtheta.row(j).transpose());
            w(j, i) = -w(i, j);
        }
    return w;
}

}  // namespace

Eigen::VectorXd angle_of(const SystemSpec& spec, const Chart& chart, const Eigen::VectorXd& m,
                         const ChartConfig& cfg) {
    AngleContext ctx(spec, chart, cfg);
    const long node = chart.field.flat_index(nearest_node(chart.field.grid, spec.F_at(m).head(spec.r())));
    Eigen::VectorXd t = ctx.values_at(m, node, nullptr).theta;
    for (int i = 0; i < t.size(); ++i) {
        t[i] -= std::floor(t[i]);
        if (t[i] > 1.0 - 1e-9) t[i] = 0.0;  // snap the seam so anchors read 0, not 1 - eps
    }
    return t;
}

Chart straighten_section(const SystemSpec& spec, const Chart& chart, const ChartConfig& cfg) {
    Chart out = chart;
    const int r = spec.r();
    if (r < 2) {
        out.note = "single angle coordinate; nothing to straighten";
        return out;
    }

    AngleContext ctx(spec, chart, cfg);
    const long total = static_cast<long>(chart.field.nodes.size());
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(r);
    out.omega.assign(static_cast<std::size_t>(total), Eigen::MatrixXd::Zero(r, r));
    out.omega_before = 0.0;
    for (long k = 0; k < total; ++k) {
        // omega is basic, so one representative per fiber suffices; the
        // section point has angle zero, giving the Newton solves a free start
        const Eigen::VectorXd& m = chart.section.points[static_cast<std::size_t>(k)];
        out.omega[static_cast<std::size_t>(k)] = omega_at_point(ctx, m, &zero);
        out.omega_before =
            std::max(out.omega_before, out.omega[static_cast<std::size_t>(k)].cwiseAbs().maxCoeff());
    }

    if (r >= 3) {
        // d omega must vanish in the p-directions or no potential gamma exists
        LatticeField wf = chart.field;
        for (std::size_t k = 0; k < wf.nodes.size(); ++k) wf.nodes[k].basis = out.omega[k];
        const ClosednessReport dclosed = closedness_check(wf);
        // closedness_check antisymmetrizes pairs; the full cyclic sum is bounded
        // by twice that residual, which is what the correction needs
        if (dclosed.relative > 1e-3)
            throw TorusError("straightening: measured omega is not closed; no correction applied");
    }

    out.straightened = true;
    std::ostringstream note;
    note << "angle correction from measured {theta_i,theta_j}: max |omega| "
         << fmt17(out.omega_before);

    // re-measure with the correction active — the certificate is the measurement
    AngleContext ctx2(spec, out, cfg);
    out.omega_after = 0.0;
    for (long k = 0; k < total; ++k) {
        const Eigen::VectorXd& m = out.section.points[static_cast<std::size_t>(k)];
        const Eigen::MatrixXd w = omega_at_point(ctx2, m, &zero);
        out.omega_after = std::max(out.omega_after, w.cwiseAbs().maxCoeff());
    }
    note << " -> " << fmt17(out.omega_after);
    out.note = note.str();
    return out;
}

CanonicalReport verify_canonical(const SystemSpec& spec, const Chart& chart, long n_samples,
                                 const ChartConfig& cfg) {
    if (n_samples < 1) throw std::invalid_argument("verify_canonical: n_samples must be positive");
    AngleContext ctx(spec, chart, cfg);
    const int r = ctx.r, s = ctx.s;
    const int nz = s - r;

    Rng rng(cfg.sample_seed);
    CanonicalReport rep;

    auto feed = [](double v, const Eigen::VectorXd& m, double& worst, Eigen::VectorXd& witness) {
        if (v > worst) {
            worst = v;
            witness = m;
        }
    };

    Eigen::VectorXd w_theta_p, w_p_p, w_p_z, w_theta_theta, w_theta_z, w_z_z;

    // fiber-grouped z-bracket values for the non-commutative spread
    std::vector<std::vector<Eigen::MatrixXd>> zz_by_fiber;

    const BaseGrid& grid = chart.field.grid;
    long produced = 0;
    while (produced < n_samples) {
        Eigen::VectorXd c_head(r);
        for (int d = 0; d < r; ++d) {
            const int nd = grid.shape[static_cast<std::size_t>(d)];
            if (nd == 1) {
                c_head[d] = grid.lo[d];
            } else {
                const double w = grid.hi[d] - grid.lo[d];
                c_head[d] = rng.uniform(grid.lo[d] + 0.1 * w, grid.hi[d] - 0.1 * w);
            }
        }
        Eigen::VectorXd c_full(s);
        c_full.head(r) = c_head;
        c_full.tail(nz) = chart.field.transverse_fixed;

        const long node = chart.field.flat_index(nearest_node(grid, c_head));
        const Eigen::VectorXd a = ctx.anchor(node, c_full);
        const Eigen::MatrixXd lam = lattice_lambda_at(chart.field, c_head);

        zz_by_fiber.emplace_back();
        for (int draw = 0; draw < 4 && produced < n_samples; ++draw, ++produced) {
            Eigen::VectorXd t(r);
            for (int i = 0; i < r; ++i) t[i] = rng.uniform();
            const Eigen::VectorXd m = ctx.flow(lam, t, a);

            const ChartGradients g = chart_gradients(ctx, m, &t);
            const Eigen::MatrixXd P = bivector_at(spec.structure, m).mat;

            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j) {
                    const double b = bracket_of(P, g.dtheta.row(i).transpose(), g.dp.row(j).transpose());
                    feed(std::abs(b - (i == j ? 1.0 : 0.0)), m, rep.theta_p, w_theta_p);
                }
            for (int i = 0; i < r; ++i)
                for (int j = i + 1; j < r; ++j) {
                    feed(std::abs(bracket_of(P, g.dp.row(i).transpose(), g.dp.row(j).transpose())), m, rep.p_p, w_p_p);
                    feed(std::abs(bracket_of(P, g.dtheta.row(i).transpose(), g.dtheta.row(j).transpose())), m,
                         rep.theta_theta, w_theta_theta);
                }
            Eigen::MatrixXd zz = Eigen::MatrixXd::Zero(std::max(nz, 1), std::max(nz, 1));
            for (int i = 0; i < r; ++i)
                for (int k = 0; k < nz; ++k) {
                    feed(std::abs(bracket_of(P, g.dp.row(i).transpose(), g.dz.row(k).transpose())), m, rep.p_z, w_p_z);
                    feed(std::abs(bracket_of(P, g.dtheta.row(i).transpose(), g.dz.row(k).transpose())), m, rep.theta_z,
                         w_theta_z);
                }
            for (int k = 0; k < nz; ++k)
                for (int l = k + 1; l < nz; ++l) {
                    const double b = bracket_of(P, g.dz.row(k).transpose(), g.dz.row(l).transpose());
                    zz(k, l) = b;
                    feed(std::abs(b), m, rep.z_z, w_z_z);
                }
            if (nz >= 2) zz_by_fiber.back().push_back(zz);
        }
    }
    rep.samples = produced;

    if (spec.kind == SystemKind::Noncommutative && nz >= 2) {
        for (const auto& fiber : zz_by_fiber) {
            if (fiber.size() < 2) continue;
            for (int k = 0; k < nz; ++k)
                for (int l = k + 1; l < nz; ++l) {
                    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
                    for (const auto& zz : fiber) {
                        lo = std::min(lo, zz(k, l));
                        hi = std::max(hi, zz(k, l));
                    }
                    rep.z_z_spread = std::max(rep.z_z_spread, hi - lo);
                }
        }
    }

    const bool commutative = spec.kind == SystemKind::Commutative;
    rep.pass = rep.theta_p < cfg.tol_theta_p && rep.p_p < cfg.tol_p_p;
    if (r > 1) rep.pass = rep.pass && rep.theta_theta < cfg.tol_theta_theta;
    if (nz > 0) {
        rep.pass = rep.pass && rep.p_z < cfg.tol_z;
        if (commutative) rep.pass = rep.pass && rep.theta_z < cfg.tol_z && rep.z_z < cfg.tol_z;
        // non-commutative {theta,z} and the {z,z} spread stay diagnostic: the
        // chart does not construct corrected transverse coordinates
    }

    auto push = [&rep](const std::string& label, double worst, const Eigen::VectorXd& witness) {
        PairResidual pr;
        pr.label = label;
        pr.worst = worst;
        pr.witness = witness;
        rep.entries.push_back(std::move(pr));
    };
    push("{theta_i,p_j} - delta_ij", rep.theta_p, w_theta_p);
    if (r > 1) {
        push("{p_i,p_j}", rep.p_p, w_p_p);
        push("{theta_i,theta_j}", rep.theta_theta, w_theta_theta);
    }
    if (nz > 0) {
        push("{p_i,z_k}", rep.p_z, w_p_z);
        push("{theta_i,z_k}", rep.theta_z, w_theta_z);
        if (nz >= 2) push("{z_k,z_l}", rep.z_z, w_z_z);
    }

    std::ostringstream text;
    text << "canonical chart verification\n";
    text << "samples: " << rep.samples << "\n";
    text << "kind: " << (commutative ? "commutative" : "noncommutative") << "\n";
    text << "straightened: " << (chart.straightened ? "yes" : "no") << "\n";
    for (const auto& e : rep.entries) {
        text << e.label << ": worst " << fmt17(e.worst) << " at (";
        for (int i = 0; i < e.witness.size(); ++i) {
            if (i) text << ", ";
            text << fmt17(e.witness[i]);
        }
        text << ")\n";
    }
    if (spec.kind == SystemKind::Noncommutative && nz >= 2)
        text << "{z_k,z_l} fiber spread: " << fmt17(rep.z_z_spread) << " (diagnostic)\n";
    text << "pass: " << (rep.pass ? "yes" : "no") << "\n";
    rep.text = text.str();
    return rep;
}

std::string chart_csv(const SystemSpec& spec, const Chart& chart) {
    std::ostringstream out;
    const int r = spec.r();
    for (const auto& name : spec.base_names()) out << name << ",";
    for (int i = 1; i <= r; ++i) out << "p_" << i << ",";
    for (std::size_t i = 0; i < spec.structure.coords.size(); ++i) {
        out << "s_" << spec.structure.coords[i];
        out << (i + 1 == spec.structure.coords.size() ? "\n" : ",");
    }
    for (std::size_t k = 0; k < chart.field.nodes.size(); ++k) {
        const Eigen::VectorXd& base = chart.field.nodes[k].base;
        for (int i = 0; i < base.size(); ++i) out << fmt17(base[i]) << ",";
        const Eigen::VectorXd& p = chart.actions.values[k];
        for (int i = 0; i < p.size(); ++i) out << fmt17(p[i]) << ",";
        const Eigen::VectorXd& pt = chart.section.points[k];
        for (int i = 0; i < pt.size(); ++i) {
            out << fmt17(pt[i]);
            out << (i + 1 == pt.size() ? "\n" : ",");
        }
    }
    return out.str();
}

}  // namespace aatk
