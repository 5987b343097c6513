#include "aatk/torus.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "aatk/util.hpp"

namespace aatk {

namespace {

static const double LATTICE_INT_TOL = 1e-6;  // integer-coefficient recognition
static const double JUMP_BOUND_REL = 0.25;   // continuation labeling jump bound

Eigen::MatrixXd jacobian_dF(const std::vector<std::vector<Expr>>& grads,
                            const Eigen::VectorXd& x) {
    const int s = static_cast<int>(grads.size());
    const int n = static_cast<int>(grads[0].size());
    Eigen::MatrixXd J(s, n);
    for (int a = 0; a < s; ++a)
        for (int i = 0; i < n; ++i)
            J(a, i) = evaluate(grads[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)], x);
    return J;
}

std::vector<NumericField> compile_first_r(const SystemSpec& spec) {
    std::vector<NumericField> out;
    for (int i = 0; i < spec.r(); ++i) {
        auto X = std::make_shared<VectorFieldExpr>(hamiltonian_vector_field(
            spec.structure, spec.functions[static_cast<std::size_t>(i)].expr));
        out.push_back([X](const Eigen::VectorXd& m) { return evaluate_field(*X, m); });
    }
    return out;
}

/// gcd of positive reals by Euclid with symmetric remainders.
double real_gcd(double a, double b, double tol) {
    a = std::abs(a);
    b = std::abs(b);
    if (a < b) std::swap(a, b);
    while (b > tol) {
        double rem = std::abs(a - b * std::round(a / b));
        a = b;
        b = rem;
    }
    return a;
}

/// Integer coordinates of v in the lattice with the given basis rows, or
/// false when some coordinate is further than LATTICE_INT_TOL from an integer.
bool in_lattice(const Eigen::MatrixXd& basis, const Eigen::VectorXd& v, Eigen::VectorXd* coeffs) {
    Eigen::VectorXd k = basis.transpose().partialPivLu().solve(v);
    bool integral = true;
    for (int i = 0; i < k.size(); ++i)
        integral = integral && std::abs(k[i] - std::round(k[i])) < LATTICE_INT_TOL;
    if (coeffs) *coeffs = k;
    return integral;
}

/// Shortest r independent rows out of the given generators (norm-ascending greedy).
Eigen::MatrixXd greedy_independent(std::vector<Eigen::VectorXd> gens, int r) {
    std::sort(gens.begin(), gens.end(),
              [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.norm() < b.norm(); });
    Eigen::MatrixXd B(0, r);
    for (const auto& g : gens) {
        if (g.norm() < 1e-12) continue;
        Eigen::MatrixXd trial(B.rows() + 1, r);
        trial << B, g.transpose();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(trial);
        int rank = 0;
        for (int i = 0; i < svd.singularValues().size(); ++i)
            if (svd.singularValues()[i] > 1e-9 * std::max(svd.singularValues()[0], 1.0)) ++rank;
        if (rank == trial.rows()) B = trial;
        if (B.rows() == r) break;
    }
    if (B.rows() < r) throw TorusError("lattice candidates do not span R^r");
    return B;
}

void lagrange_gauss(Eigen::MatrixXd& B) {
    for (int guard = 0; guard < 64; ++guard) {
        if (B.row(0).norm() > B.row(1).norm()) B.row(0).swap(B.row(1));
        double mu = std::round(B.row(1).dot(B.row(0)) / B.row(0).squaredNorm());
        if (mu == 0.0) return;
        B.row(1) -= mu * B.row(0);
    }
}

/// Deterministic sign convention: the largest-magnitude entry of each row is positive.
void normalize_rows(Eigen::MatrixXd& B) {
    for (int i = 0; i < B.rows(); ++i) {
        int j = 0;
        B.row(i).cwiseAbs().maxCoeff(&j);
        if (B(i, j) < 0) B.row(i) = -B.row(i);
    }
}

struct CellLocation {
    std::vector<int> cell;     // lower corner per axis
    std::vector<double> frac;  // interpolation weight toward the upper corner
    std::vector<bool> single;  // axis collapsed to one node
};

CellLocation locate_cell(const LatticeField& field, const Eigen::VectorXd& c) {
    const int r = static_cast<int>(field.grid.shape.size());
    CellLocation loc;
    loc.cell.resize(static_cast<std::size_t>(r));
    loc.frac.resize(static_cast<std::size_t>(r));
    loc.single.resize(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) {
        const int nd = field.grid.shape[static_cast<std::size_t>(d)];
        if (nd == 1) {
            if (std::abs(c[d] - field.grid.lo[d]) > 1e-6 * std::max(1.0, std::abs(c[d])))
                throw TorusError("base value outside the lattice grid");
            loc.cell[static_cast<std::size_t>(d)] = 0;
            loc.frac[static_cast<std::size_t>(d)] = 0.0;
            loc.single[static_cast<std::size_t>(d)] = true;
            continue;
        }
        const double delta = (field.grid.hi[d] - field.grid.lo[d]) / (nd - 1);
        const double u = (c[d] - field.grid.lo[d]) / delta;
        // half a boundary cell of linear extrapolation: finite-difference
        // stencils at edge fibers must stay evaluable
        if (u < -0.5 || u > nd - 1 + 0.5)
            throw TorusError("base value outside the lattice grid");
        int cell = std::clamp(static_cast<int>(std::floor(u)), 0, nd - 2);
        loc.cell[static_cast<std::size_t>(d)] = cell;
        loc.frac[static_cast<std::size_t>(d)] = u - cell;
        loc.single[static_cast<std::size_t>(d)] = false;
    }
    return loc;
}

/// Multilinear interpolation of the full lambda matrix at first-r base value c.
Eigen::MatrixXd interp_lambda(const LatticeField& field, const Eigen::VectorXd& c, int r) {
    CellLocation loc = locate_cell(field, c);
    Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(r, r);
    const int corners = 1 << r;
    for (int mask = 0; mask < corners; ++mask) {
        double w = 1.0;
        std::vector<int> node(static_cast<std::size_t>(r));
        bool skip = false;
        for (int d = 0; d < r; ++d) {
            const bool up = (mask >> d) & 1;
            if (loc.single[static_cast<std::size_t>(d)]) {
                if (up) skip = true;  // collapsed axis has one corner
                node[static_cast<std::size_t>(d)] = 0;
                continue;
            }
            node[static_cast<std::size_t>(d)] = loc.cell[static_cast<std::size_t>(d)] + (up ? 1 : 0);
            w *= up ? loc.frac[static_cast<std::size_t>(d)] : 1.0 - loc.frac[static_cast<std::size_t>(d)];
        }
        if (skip || w == 0.0) continue;
        const LatticeNode& ln = field.nodes[static_cast<std::size_t>(field.flat_index(node))];
        if (!ln.ok) throw TorusError("containing grid cell has a failed corner node");
        lambda += w * ln.basis;
    }
    return lambda;
}

}  // namespace

long LatticeField::flat_index(const std::vector<int>& node) const {
    long flat = 0, stride = 1;
    for (std::size_t d = 0; d < grid.shape.size(); ++d) {
        flat += node[d] * stride;
        stride *= grid.shape[d];
    }
    return flat;
}

Eigen::VectorXd point_on_fiber(const SystemSpec& spec, const Eigen::VectorXd& from,
                               const Eigen::VectorXd& c, double tol, int max_iter) {
    if (c.size() != spec.s()) throw std::invalid_argument("point_on_fiber: c arity must be s");
    std::vector<std::vector<Expr>> grads;
    for (const auto& f : spec.functions) grads.push_back(gradient_exprs(f.expr, spec.n()));

    Eigen::VectorXd x = from;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd res = c - spec.F_at(x);
        if (res.cwiseAbs().maxCoeff() < tol) {
            if (!spec.domain_box.contains(x, 1e-9))
                throw TorusError("point_on_fiber: solution left domain_box");
            return x;
        }
        Eigen::MatrixXd J = jacobian_dF(grads, x);
        Eigen::VectorXd step = J.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(res);
        if (!step.allFinite()) throw TorusError("point_on_fiber: singular step");
        x += step;
    }
    throw TorusError("point_on_fiber: no convergence to the requested base value");
}

PeriodRefinement refine_period(const SystemSpec& spec, const Eigen::VectorXd& m,
                               const Eigen::VectorXd& L0, const FlowConfig& cfg,
                               double defect_tol) {
    const int r = spec.r();
    if (L0.size() != r) throw std::invalid_argument("refine_period: L0 arity must be r");
    auto fields = compile_first_r(spec);

    PeriodRefinement out;
    out.L = L0;
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it <= 25; ++it) {
        Eigen::VectorXd end = joint_flow(spec, out.L, m, cfg).state;
        Eigen::VectorXd G = end - m;
        out.defect = G.norm();
        out.iterations = it;
        if (out.defect < defect_tol) return out;
        if (out.defect > 5.0 * prev)
            throw TorusError("refine_period: Newton diverged");
        prev = out.defect;

        Eigen::MatrixXd J(spec.n(), r);
        for (int j = 0; j < r; ++j) J.col(j) = fields[static_cast<std::size_t>(j)](end);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        if (sv[sv.size() - 1] < 1e-10 * std::max(sv[0], 1.0))
            throw TorusError("refine_period: singular Jacobian (degenerate fiber direction)");
        out.L += svd.solve(-G);
    }
    throw TorusError("refine_period: no convergence after 25 iterations");
}

PeriodLattice lattice_basis(const SystemSpec& spec, const Eigen::VectorXd& m,
                            const std::vector<Eigen::VectorXd>& candidates,
                            const FlowConfig& cfg) {
    const int r = spec.r();
    std::vector<Eigen::VectorXd> gens;
    for (const auto& v : candidates) {
        if (v.size() != r) throw std::invalid_argument("lattice_basis: candidate arity must be r");
        if (v.norm() > 1e-12) gens.push_back(v);
    }
    if (gens.empty()) throw TorusError("lattice_basis: no nonzero candidates");

    PeriodLattice out;
    out.base = spec.F_at(m);
    std::ostringstream note;

    if (r == 1) {
        double shortest = std::numeric_limits<double>::infinity();
        for (const auto& v : gens) shortest = std::min(shortest, std::abs(v[0]));
        double g = 0.0;
        for (const auto& v : gens) g = g == 0.0 ? std::abs(v[0]) : real_gcd(g, std::abs(v[0]),
                                                                            1e-6 * shortest);
        out.basis = Eigen::MatrixXd::Constant(1, 1, g);
        if (g < shortest * (1.0 - 1e-6))
            note << "real gcd refined the lattice below the shortest candidate; ";
    } else {
        Eigen::MatrixXd B = greedy_independent(gens, r);
        // fold the remaining candidates in; a non-integral one refines the lattice
        for (int guard = 0; guard < 16; ++guard) {
            bool refined = false;
            for (const auto& v : gens) {
                Eigen::VectorXd k;
                if (in_lattice(B, v, &k)) continue;
                Eigen::VectorXd residual = v;
                for (int i = 0; i < r; ++i) residual -= std::round(k[i]) * B.row(i).transpose();
                std::vector<Eigen::VectorXd> regen;
                for (int i = 0; i < r; ++i) regen.push_back(B.row(i).transpose());
                regen.push_back(residual);
                B = greedy_independent(regen, r);
                note << "candidate refined the lattice; ";
                refined = true;
                break;
            }
            if (!refined) break;
        }
        if (r == 2) lagrange_gauss(B);
        else note << "greedy heuristic reduction for r >= 3; ";
        out.basis = B;
    }
    normalize_rows(out.basis);

    for (int i = 0; i < r; ++i) {
        double d = (joint_flow(spec, out.basis.row(i), m, cfg).state - m).norm();
        out.defect = std::max(out.defect, d);
    }
    out.note = note.str();
    return out;
}

PeriodLattice seed_period_lattice(const SystemSpec& spec, const FlowConfig& cfg) {
    const int r = spec.r();
    const double horizon = r == 1 ? 64.0 : 16.0;
    const int scan_grid = r == 1 ? 4096 : (r == 2 ? 256 : 32);
    std::vector<NearReturn> cands = near_returns(
        spec, spec.seed_point, Eigen::VectorXd::Constant(r, horizon), scan_grid, cfg);
    if (cands.empty())
        throw NonCompactError("no near-return within the scan horizon: fiber appears non-compact");

    std::vector<Eigen::VectorXd> refined;
    for (const auto& c : cands) {
        try {
            refined.push_back(refine_period(spec, spec.seed_point, c.tvec, cfg).L);
        } catch (const TorusError&) {
            // a noisy candidate may fail to refine; the basis only needs a spanning subset
        } catch (const FlowError&) {
        }
    }
    if (refined.empty()) throw TorusError("no near-return candidate could be refined");
    return lattice_basis(spec, spec.seed_point, refined, cfg);
}

LatticeField continue_lattice(const SystemSpec& spec, const BaseGrid& grid,
                              const PeriodLattice& seed_lattice, const FlowConfig& cfg) {
    const int r = spec.r();
    const int s = spec.s();
    if (grid.lo.size() != r || grid.hi.size() != r ||
        static_cast<int>(grid.shape.size()) != r)
        throw std::invalid_argument("continue_lattice: grid arity must be r");
    for (int d = 0; d < r; ++d) {
        if (grid.shape[static_cast<std::size_t>(d)] < 1)
            throw std::invalid_argument("continue_lattice: grid shape must be >= 1");
        if (grid.lo[d] > grid.hi[d])
            throw std::invalid_argument("continue_lattice: grid lo > hi");
    }
    if (seed_lattice.base.size() != s || seed_lattice.basis.rows() != r)
        throw std::invalid_argument("continue_lattice: seed lattice arity mismatch");

    LatticeField out;
    out.grid = grid;
    out.transverse_fixed = seed_lattice.base.tail(s - r);

    long total = 1;
    for (int d = 0; d < r; ++d) total *= grid.shape[static_cast<std::size_t>(d)];
    out.nodes.resize(static_cast<std::size_t>(total));

    Eigen::VectorXd delta(r);
    for (int d = 0; d < r; ++d) {
        const int nd = grid.shape[static_cast<std::size_t>(d)];
        delta[d] = nd > 1 ? (grid.hi[d] - grid.lo[d]) / (nd - 1) : 0.0;
    }

    // assemble every node's base value up front so failed nodes still report it
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    for (long flat = 0; flat < total; ++flat) {
        long rem = flat;
        Eigen::VectorXd base(s);
        for (int d = 0; d < r; ++d) {
            const int nd = grid.shape[static_cast<std::size_t>(d)];
            base[d] = grid.lo[d] + (rem % nd) * delta[d];
            rem /= nd;
        }
        base.tail(s - r) = out.transverse_fixed;
        out.nodes[static_cast<std::size_t>(flat)].base = base;
        out.nodes[static_cast<std::size_t>(flat)].basis = Eigen::MatrixXd::Zero(r, r);
    }

    // breadth-first continuation from the node nearest the seed base value
    for (int d = 0; d < r; ++d) {
        const int nd = grid.shape[static_cast<std::size_t>(d)];
        int i = nd == 1 ? 0
                        : static_cast<int>(std::lround((seed_lattice.base[d] - grid.lo[d]) / delta[d]));
        idx[static_cast<std::size_t>(d)] = std::clamp(i, 0, nd - 1);
    }
    const long start = out.flat_index(idx);

    std::deque<std::pair<long, long>> queue;  // (node, parent); parent -1 = the seed itself
    std::vector<bool> queued(static_cast<std::size_t>(total), false);
    queue.push_back({start, -1});
    queued[static_cast<std::size_t>(start)] = true;

    while (!queue.empty()) {
        auto [me, parent] = queue.front();
        queue.pop_front();
        LatticeNode& node = out.nodes[static_cast<std::size_t>(me)];
        const Eigen::VectorXd& from =
            parent < 0 ? spec.seed_point : out.nodes[static_cast<std::size_t>(parent)].point;
        const Eigen::MatrixXd& basis0 =
            parent < 0 ? seed_lattice.basis : out.nodes[static_cast<std::size_t>(parent)].basis;

        bool converged = true;
        try {
            node.point = point_on_fiber(spec, from, node.base);
            for (int i = 0; i < r; ++i) {
                PeriodRefinement ref = refine_period(spec, node.point, basis0.row(i), cfg);
                if ((ref.L - basis0.row(i).transpose()).norm() >
                    JUMP_BOUND_REL * (1.0 + basis0.row(i).norm()))
                    throw TorusError("continuation jump bound exceeded");
                node.basis.row(i) = ref.L;
                node.defect = std::max(node.defect, ref.defect);
            }
            node.ok = true;
        } catch (const TorusError&) {
            converged = false;
        } catch (const FlowError&) {
            converged = false;
        }
        if (!converged) {
            out.failed.push_back(me);
            continue;  // do not expand a failed node
        }

        long rem = me, stride = 1;
        for (int d = 0; d < r; ++d) {
            const int nd = grid.shape[static_cast<std::size_t>(d)];
            const int i = static_cast<int>((rem % nd));
            rem /= nd;
            for (int dir : {-1, +1}) {
                if (i + dir < 0 || i + dir >= nd) continue;
                const long nb = me + dir * stride;
                if (queued[static_cast<std::size_t>(nb)]) continue;
                queued[static_cast<std::size_t>(nb)] = true;
                queue.push_back({nb, me});
            }
            stride *= nd;
        }
    }

    // nodes never reached (walled off by failures) are failures too
    for (long flat = 0; flat < total; ++flat)
        if (!out.nodes[static_cast<std::size_t>(flat)].ok &&
            std::find(out.failed.begin(), out.failed.end(), flat) == out.failed.end())
            out.failed.push_back(flat);
    std::sort(out.failed.begin(), out.failed.end());
    out.ok = out.failed.empty();
    return out;
}

Eigen::MatrixXd lattice_lambda_at(const LatticeField& field, const Eigen::VectorXd& c_head) {
    const int r = static_cast<int>(field.grid.shape.size());
    if (c_head.size() != r) throw std::invalid_argument("lattice_lambda_at: c_head arity");
    return interp_lambda(field, c_head, r);
}

Eigen::VectorXd uniformized_field_at(const SystemSpec& spec, const LatticeField& field,
                                     const Eigen::VectorXd& m, int i) {
    const int r = spec.r();
    if (i < 0 || i >= r) throw std::invalid_argument("uniformized_field_at: index out of range");
    Eigen::MatrixXd lambda = interp_lambda(field, spec.F_at(m).head(r), r);
    auto fields = compile_first_r(spec);
    Eigen::VectorXd Y = Eigen::VectorXd::Zero(spec.n());
    for (int j = 0; j < r; ++j) Y += lambda(i, j) * fields[static_cast<std::size_t>(j)](m);
    return Y;
}

TorusActionReport check_torus_action(const SystemSpec& spec, const LatticeField& field,
                                     const Eigen::VectorXd& m, const FlowConfig& cfg) {
    const int r = spec.r();
    TorusActionReport rep;
    rep.lambda = interp_lambda(field, spec.F_at(m).head(r), r);

    rep.period_defects = Eigen::VectorXd(r);
    for (int i = 0; i < r; ++i)
        rep.period_defects[i] = (joint_flow(spec, rep.lambda.row(i), m, cfg).state - m).norm();

    auto fields = compile_first_r(spec);
    for (int i = 0; i < r; ++i) {
        NumericField Y = [&spec, &field, &fields, i, r](const Eigen::VectorXd& x) {
            Eigen::MatrixXd lam = interp_lambda(field, spec.F_at(x).head(r), r);
            Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
            for (int j = 0; j < r; ++j) y += lam(i, j) * fields[static_cast<std::size_t>(j)](x);
            return y;
        };
        double res = lie_derivative_bivector(Y, spec.structure, m).mat.cwiseAbs().maxCoeff();
        rep.schouten_residual = std::max(rep.schouten_residual, res);
    }
    return rep;
}

std::string lattice_csv(const SystemSpec& spec, const LatticeField& field) {
    const int r = spec.r();
    std::ostringstream os;
    for (int a = 0; a < spec.s(); ++a) os << (a ? "," : "") << spec.functions[static_cast<std::size_t>(a)].name;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) os << ",lambda_" << i + 1 << "_" << j + 1;
    os << ",defect,ok\n";
    for (const auto& node : field.nodes) {
        for (int a = 0; a < spec.s(); ++a) os << (a ? "," : "") << fmt17(node.base[a]);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) os << "," << fmt17(node.basis(i, j));
        os << "," << fmt17(node.defect) << "," << (node.ok ? 1 : 0) << "\n";
    }
    return os.str();
}

}  // namespace aatk
