#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aatk/systems.hpp"

namespace aatk {

/// Integration failure: step cap, step-size underflow, or domain exit.
struct FlowError : std::runtime_error {
    explicit FlowError(const std::string& what) : std::runtime_error(what) {}
};

/// The fiber through the start point appears non-compact: the orbit norm grew
/// monotonically past 10x its initial size, or no near-return exists within
/// the scan horizon.
struct NonCompactError : FlowError {
    explicit NonCompactError(const std::string& what) : FlowError(what) {}
};

/** Adaptive step control for the embedded Runge-Kutta 5(4) integrator.
    max_step == 0 means "derive from the run": one hundredth of the total
    integration horizon.  All other fields must be positive. */
struct FlowConfig {
    double abs_tol = 1e-10;
    double rel_tol = 1e-10;
    double max_step = 0.0;
    long max_steps = 500000;
};

struct FlowResult {
    Eigen::VectorXd state;
    double f_drift = 0.0;  ///< |F(state) - F(start)|_inf, conservation check
    long steps = 0;        ///< accepted + rejected integrator steps
};

/** Flow of the Hamiltonian vector field of the named function for time t
    (either sign).  Throws SpecError on an unknown name or a start point
    outside domain_box; FlowError on step cap / underflow / domain exit. */
FlowResult integrate_flow(const SystemSpec& spec, const std::string& h_name,
                          const Eigen::VectorXd& m, double t, const FlowConfig& cfg = {});

/** Joint flow of the first r fields: the time-tvec[0] flow of f_1 applied
    after the time-tvec[1] flow of f_2, and so on (the last listed field acts
    first; the order is immaterial once commutation is verified). */
FlowResult joint_flow(const SystemSpec& spec, const Eigen::VectorXd& tvec,
                      const Eigen::VectorXd& m, const FlowConfig& cfg = {});

struct NearReturn {
    Eigen::VectorXd tvec;
    double distance;
};

/** Grid scan of t -> |Phi(t, m) - m| over the box [0, horizon] in R^r
    (componentwise), excluding the ball |t| < exclude_radius around the
    trivial return.  Returns grid-local minima with distance below
    0.05 x (orbit diameter estimate), sorted by distance, at most 16.
    The innermost sweeps reuse the running orbit, so the cost is one long
    integration per grid line, not per node.  Throws NonCompactError if the
    orbit norm grows monotonically past 10x its initial size. */
std::vector<NearReturn> near_returns(const SystemSpec& spec, const Eigen::VectorXd& m,
                                     const Eigen::VectorXd& horizon, int grid_per_dim,
                                     const FlowConfig& cfg = {}, double exclude_radius = 0.1);

/** Points of one connected fiber, reached from the anchor by the joint flow
    over a grid of a fundamental-domain estimate (the componentwise extent of
    a spanning set of shortest near-return vectors). */
struct TorusSample {
    Eigen::VectorXd base_value;   ///< F(anchor)
    Eigen::VectorXd anchor;
    Eigen::VectorXd fundamental;  ///< per-direction time extent of the sampled domain
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> samples;  ///< (tvec, point)
    double f_drift = 0.0;  ///< max |F(point) - base_value|_inf over samples
};

/** Sample the fiber through m on a samples_per_dim^r grid of joint-flow
    times.  Throws NonCompactError when the fiber appears non-compact (orbit
    growth, or no near-return below threshold within the internal horizon). */
TorusSample trace_torus(const SystemSpec& spec, const Eigen::VectorXd& m, int samples_per_dim,
                        const FlowConfig& cfg = {});

}  // namespace aatk
