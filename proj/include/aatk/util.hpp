#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include <Eigen/Dense>

namespace aatk {

/** Deterministic uniform sampler.
    Uses a fixed xoshiro-style mix so results are identical across standard
    library implementations (std::uniform_real_distribution is not portable). */
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0x5eedULL) : state_(seed ? seed : 1) {}

    std::uint64_t next() {
        // splitmix64: passes statistical tests, trivially reproducible
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// uniform in [0, 1)
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    /// uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// componentwise uniform point in the box [lo, hi]
    Eigen::VectorXd point_in_box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
        Eigen::VectorXd x(lo.size());
        for (int i = 0; i < lo.size(); ++i) x[i] = uniform(lo[i], hi[i]);
        return x;
    }

private:
    std::uint64_t state_;
};

/** Coordinate-aligned box, used for sampling domains and validity regions. */
struct Box {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    int dim() const { return static_cast<int>(lo.size()); }

    bool contains(const Eigen::VectorXd& x, double slack = 0.0) const {
        for (int i = 0; i < lo.size(); ++i)
            if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
        return true;
    }

    Eigen::VectorXd sample(Rng& rng) const { return rng.point_in_box(lo, hi); }

    static Box cube(int n, double lo_v, double hi_v) {
        Box b;
        b.lo = Eigen::VectorXd::Constant(n, lo_v);
        b.hi = Eigen::VectorXd::Constant(n, hi_v);
        return b;
    }
};

/// Formats a double with 17 significant digits (round-trip exact, stable output).
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

/// FNV-1a 64-bit digest of a byte string, hex-encoded; used for run manifests.
inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace aatk
