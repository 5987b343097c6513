#include "aatk/flows.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace aatk {

namespace {

void check_cfg(const FlowConfig& cfg) {
    if (!(cfg.abs_tol > 0.0) || !(cfg.rel_tol > 0.0) || cfg.max_step < 0.0 || cfg.max_steps < 1)
        throw std::invalid_argument(
            "FlowConfig: tolerances must be positive, max_step >= 0, max_steps >= 1");
}

double resolve_max_step(const FlowConfig& cfg, double horizon) {
    if (cfg.max_step > 0.0) return cfg.max_step;
    return std::max(horizon, 1e-12) / 100.0;
}

/// Norm watchdog: fires when the orbit grows monotonically past 10x its start.
struct GrowthMonitor {
    double threshold = 0.0;
    double last = 0.0;
    int consecutive = 0;

    explicit GrowthMonitor(const Eigen::VectorXd& start) {
        last = start.norm();
        threshold = 10.0 * std::max(last, 0.1);
    }

    void observe(const Eigen::VectorXd& y) {
        double norm = y.norm();
        if (norm > last)
            ++consecutive;
        else
            consecutive = 0;
        last = norm;
        if (norm > threshold && consecutive >= 3) {
            std::ostringstream os;
            os << "fiber appears non-compact: orbit norm grew monotonically to " << norm
               << ", past 10x its initial size " << threshold / 10.0;
            throw NonCompactError(os.str());
        }
    }
};

// Dormand-Prince 5(4) tableau
constexpr double A21 = 1.0 / 5;
constexpr double A31 = 3.0 / 40, A32 = 9.0 / 40;
constexpr double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9;
constexpr double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561,
                 A54 = -212.0 / 729;
constexpr double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176,
                 A65 = -5103.0 / 18656;
constexpr double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784,
                 B6 = 11.0 / 84;
// difference between the 5th-order and embedded 4th-order weights
constexpr double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920,
                 E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40;

/** One adaptive integration over [0, T], T > 0, with PI step-size control.
    Throws FlowError on the step cap, step underflow, or domain exit; the
    optional monitor may throw NonCompactError from inside the loop (needed so
    blow-up orbits are diagnosed before the error control stalls on them). */
Eigen::VectorXd dopri5(const NumericField& f, Eigen::VectorXd y, double T,
                       const FlowConfig& cfg, double max_step, const Box* domain,
                       GrowthMonitor* monitor, long& steps) {
    const int n = static_cast<int>(y.size());
    double t = 0.0;
    double h = std::min(max_step, T);
    double err_old = 1e-4;
    Eigen::VectorXd k1 = f(y), k2, k3, k4, k5, k6, k7, ynew, errv;

    // horizons below the underflow guard: one Euler step is exact to O(T^2),
    // far inside any tolerance this integrator is asked for
    if (T < 1e-13) return y + T * k1;

    while (t < T) {
        if (h < 1e-14 * std::max(1.0, t))
            throw FlowError("integration step size underflow (stiff or singular orbit)");
        h = std::min(h, T - t);
        if (++steps > cfg.max_steps) throw FlowError("integration exceeded max_steps");

        k2 = f(y + h * (A21 * k1));
        k3 = f(y + h * (A31 * k1 + A32 * k2));
        k4 = f(y + h * (A41 * k1 + A42 * k2 + A43 * k3));
        k5 = f(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4));
        k6 = f(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5));
        ynew = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
        k7 = f(ynew);
        errv = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);

        double err = 0.0;
        for (int i = 0; i < n; ++i) {
            double scale = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            double q = errv[i] / scale;
            err += q * q;
        }
        err = std::sqrt(err / std::max(1, n));

        if (err <= 1.0) {
            t += h;
            y = ynew;
            k1 = k7;  // first-same-as-last
            if (domain && !domain->contains(y)) {
                std::ostringstream os;
                os << "flow left domain_box at t = " << t;
                throw FlowError(os.str());
            }
            if (monitor) monitor->observe(y);
            double fac = err > 0.0 ? 0.9 * std::pow(err, -0.17) * std::pow(err_old, 0.04) : 5.0;
            h = std::min(h * std::clamp(fac, 0.2, 5.0), max_step);
            err_old = std::max(err, 1e-4);
        } else {
            h *= std::clamp(0.9 * std::pow(err, -0.2), 0.1, 1.0);
        }
    }
    return y;
}

NumericField compiled_field(const SystemSpec& spec, int func_index, double sign) {
    auto X = std::make_shared<VectorFieldExpr>(hamiltonian_vector_field(
        spec.structure, spec.functions[static_cast<std::size_t>(func_index)].expr));
    if (sign == 1.0)
        return [X](const Eigen::VectorXd& m) { return evaluate_field(*X, m); };
    return [X, sign](const Eigen::VectorXd& m) -> Eigen::VectorXd {
        return sign * evaluate_field(*X, m);
    };
}

/** Walk the grid t in prod_d {0, delta_d, ..., (npts_d - 1) delta_d} of joint
    flow times, innermost axis last-applied (field 1), visiting every node.
    Axis sweeps reuse the running orbit: one segment integration per node. */
struct GridScan {
    const SystemSpec* spec = nullptr;
    std::vector<NumericField> fields;  // forward fields of f_1..f_r
    FlowConfig cfg;
    double max_step = 0.0;
    GrowthMonitor* monitor = nullptr;
    Eigen::VectorXd delta;
    std::vector<int> npts;
    std::function<void(const Eigen::VectorXd&, const Eigen::VectorXd&)> visit;
    Eigen::VectorXd tvec;
    long steps = 0;

    void run(const Eigen::VectorXd& m) {
        tvec = Eigen::VectorXd::Zero(delta.size());
        sweep(static_cast<int>(delta.size()) - 1, m);
    }

    void sweep(int axis, Eigen::VectorXd x) {
        for (int i = 0; i < npts[static_cast<std::size_t>(axis)]; ++i) {
            tvec[axis] = i * delta[axis];
            if (i > 0)
                x = dopri5(fields[static_cast<std::size_t>(axis)], x, delta[axis], cfg, max_step,
                           &spec->domain_box, monitor, steps);
            if (axis == 0)
                visit(tvec, x);
            else
                sweep(axis - 1, x);
        }
        tvec[axis] = 0.0;
    }
};

}  // namespace

FlowResult integrate_flow(const SystemSpec& spec, const std::string& h_name,
                          const Eigen::VectorXd& m, double t, const FlowConfig& cfg) {
    check_cfg(cfg);
    const int idx = spec.function_index(h_name);  // SpecError on unknown name
    if (m.size() != spec.n()) throw SpecError("integrate_flow: point arity mismatch");
    if (!spec.domain_box.contains(m))
        throw SpecError("integrate_flow: start point outside domain_box");

    FlowResult out;
    if (t == 0.0) {
        out.state = m;
        return out;
    }
    NumericField f = compiled_field(spec, idx, t > 0 ? 1.0 : -1.0);
    out.state = dopri5(f, m, std::abs(t), cfg, resolve_max_step(cfg, std::abs(t)),
                       &spec.domain_box, nullptr, out.steps);
    out.f_drift = (spec.F_at(out.state) - spec.F_at(m)).cwiseAbs().maxCoeff();
    return out;
}

FlowResult joint_flow(const SystemSpec& spec, const Eigen::VectorXd& tvec,
                      const Eigen::VectorXd& m, const FlowConfig& cfg) {
    check_cfg(cfg);
    if (tvec.size() != spec.r()) throw SpecError("joint_flow: time vector arity must be r");

    FlowResult out;
    out.state = m;
    for (int i = spec.r() - 1; i >= 0; --i) {
        FlowResult leg = integrate_flow(spec, spec.functions[static_cast<std::size_t>(i)].name,
                                        out.state, tvec[i], cfg);
        out.state = leg.state;
        out.steps += leg.steps;
    }
    out.f_drift = (spec.F_at(out.state) - spec.F_at(m)).cwiseAbs().maxCoeff();
    return out;
}

std::vector<NearReturn> near_returns(const SystemSpec& spec, const Eigen::VectorXd& m,
                                     const Eigen::VectorXd& horizon, int grid_per_dim,
                                     const FlowConfig& cfg, double exclude_radius) {
    check_cfg(cfg);
    const int r = spec.r();
    if (horizon.size() != r) throw std::invalid_argument("near_returns: horizon arity must be r");
    if (horizon.minCoeff() <= 0.0) throw std::invalid_argument("near_returns: horizon must be positive");
    if (grid_per_dim < 2) throw std::invalid_argument("near_returns: grid_per_dim must be >= 2");
    if (!spec.domain_box.contains(m))
        throw SpecError("near_returns: start point outside domain_box");

    GridScan scan;
    scan.spec = &spec;
    for (int i = 0; i < r; ++i) scan.fields.push_back(compiled_field(spec, i, 1.0));
    scan.cfg = cfg;
    scan.max_step = resolve_max_step(cfg, horizon.maxCoeff());
    GrowthMonitor monitor(m);
    scan.monitor = &monitor;
    scan.delta = horizon / static_cast<double>(grid_per_dim);
    scan.npts.assign(static_cast<std::size_t>(r), grid_per_dim + 1);  // endpoint included

    std::vector<double> dist;
    long total = 1;
    for (int i = 0; i < r; ++i) total *= grid_per_dim + 1;
    dist.assign(static_cast<std::size_t>(total), 0.0);

    std::vector<long> stride(static_cast<std::size_t>(r), 1);
    for (int d = 1; d < r; ++d) stride[static_cast<std::size_t>(d)] = stride[d - 1] * (grid_per_dim + 1);

    double diameter = 0.0;
    scan.visit = [&](const Eigen::VectorXd& t, const Eigen::VectorXd& x) {
        long flat = 0;
        for (int d = 0; d < r; ++d)
            flat += std::lround(t[d] / scan.delta[d]) * stride[static_cast<std::size_t>(d)];
        double dd = (x - m).norm();
        dist[static_cast<std::size_t>(flat)] = dd;
        diameter = std::max(diameter, dd);
    };
    scan.run(m);

    // grid-local minima outside the exclusion ball, below the scale-aware threshold
    const double threshold = 0.05 * diameter;
    struct Raw {
        std::vector<int> node;
        double d;
    };
    std::vector<Raw> raw;
    std::vector<int> node(static_cast<std::size_t>(r), 0);
    for (long flat = 0; flat < total; ++flat) {
        long rem = flat;
        double tnorm2 = 0.0;
        for (int d = r - 1; d >= 0; --d) {
            node[static_cast<std::size_t>(d)] = static_cast<int>(rem / stride[static_cast<std::size_t>(d)]);
            rem %= stride[static_cast<std::size_t>(d)];
            double td = node[static_cast<std::size_t>(d)] * scan.delta[d];
            tnorm2 += td * td;
        }
        if (std::sqrt(tnorm2) < exclude_radius) continue;
        double d0 = dist[static_cast<std::size_t>(flat)];
        if (d0 >= threshold) continue;
        bool is_min = true;
        for (int d = 0; d < r && is_min; ++d) {
            if (node[static_cast<std::size_t>(d)] > 0 &&
                dist[static_cast<std::size_t>(flat - stride[static_cast<std::size_t>(d)])] < d0)
                is_min = false;
            if (node[static_cast<std::size_t>(d)] < grid_per_dim &&
                dist[static_cast<std::size_t>(flat + stride[static_cast<std::size_t>(d)])] < d0)
                is_min = false;
        }
        if (is_min) raw.push_back({node, d0});
    }

    std::sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) { return a.d < b.d; });

    // merge plateau/adjacent duplicates, best-first
    std::vector<NearReturn> out;
    std::vector<std::vector<int>> kept;
    for (const auto& c : raw) {
        bool dup = false;
        for (const auto& k : kept) {
            bool close = true;
            for (int d = 0; d < r; ++d)
                close = close && std::abs(c.node[static_cast<std::size_t>(d)] -
                                          k[static_cast<std::size_t>(d)]) <= 1;
            if (close) {
                dup = true;
                break;
            }
        }
        if (dup) continue;
        kept.push_back(c.node);
        NearReturn nr;
        nr.tvec = Eigen::VectorXd(r);
        for (int d = 0; d < r; ++d) nr.tvec[d] = c.node[static_cast<std::size_t>(d)] * scan.delta[d];
        nr.distance = c.d;
        out.push_back(std::move(nr));
        if (out.size() == 16) break;
    }
    return out;
}

TorusSample trace_torus(const SystemSpec& spec, const Eigen::VectorXd& m, int samples_per_dim,
                        const FlowConfig& cfg) {
    check_cfg(cfg);
    if (samples_per_dim < 2) throw std::invalid_argument("trace_torus: need >= 2 samples per dim");
    const int r = spec.r();

    // scan horizon heuristics: generous for one slow direction, tighter when
    // the grid is multi-dimensional
    const double horizon = r == 1 ? 64.0 : 16.0;
    const int scan_grid = r == 1 ? 4096 : (r == 2 ? 256 : 32);
    std::vector<NearReturn> cands =
        near_returns(spec, m, Eigen::VectorXd::Constant(r, horizon), scan_grid, cfg);
    if (cands.empty())
        throw NonCompactError(
            "no near-return within the scan horizon: fiber appears non-compact");

    // spanning set of shortest return vectors -> fundamental-domain estimate
    std::sort(cands.begin(), cands.end(),
              [](const NearReturn& a, const NearReturn& b) { return a.tvec.norm() < b.tvec.norm(); });
    Eigen::MatrixXd sel(r, 0);
    for (const auto& c : cands) {
        Eigen::MatrixXd trial(r, sel.cols() + 1);
        trial << sel, c.tvec;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(trial);
        int rank = 0;
        for (int i = 0; i < svd.singularValues().size(); ++i)
            if (svd.singularValues()[i] > 1e-9 * std::max(svd.singularValues()[0], 1.0)) ++rank;
        if (rank == trial.cols()) sel = trial;
        if (sel.cols() == r) break;
    }
    if (sel.cols() < r)
        throw FlowError("near-return vectors do not span R^r: cannot bound a fundamental domain");

    TorusSample out;
    out.anchor = m;
    out.base_value = spec.F_at(m);
    out.fundamental = sel.cwiseAbs().rowwise().maxCoeff();

    GridScan scan;
    scan.spec = &spec;
    for (int i = 0; i < r; ++i) scan.fields.push_back(compiled_field(spec, i, 1.0));
    scan.cfg = cfg;
    scan.max_step = resolve_max_step(cfg, out.fundamental.maxCoeff());
    GrowthMonitor monitor(m);
    scan.monitor = &monitor;
    scan.delta = out.fundamental / static_cast<double>(samples_per_dim);
    scan.npts.assign(static_cast<std::size_t>(r), samples_per_dim);  // endpoint = start: excluded

    scan.visit = [&](const Eigen::VectorXd& t, const Eigen::VectorXd& x) {
        out.samples.push_back({t, x});
        out.f_drift =
            std::max(out.f_drift, (spec.F_at(x) - out.base_value).cwiseAbs().maxCoeff());
    };
    scan.run(m);
    return out;
}

}  // namespace aatk
