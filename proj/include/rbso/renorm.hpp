#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rbso/greens.hpp"
#include "rbso/mfield.hpp"
#include "rbso/models.hpp"
#include "rbso/stats.hpp"

namespace rbso {

inline cd iota(cd m) {
    cd den = 1.0 - m * m;
    if (std::abs(den) == 0.0) throw std::domain_error("iota: pole at m^2 = 1");
    return m * m / den;
}

struct LoopStructure {
    int k = 1;
    int l0 = 2;
    std::vector<int> lengths;  // sorted multiset

    LoopStructure() = default;
    LoopStructure(int k_, int l0_, std::vector<int> len) : k(k_), l0(l0_), lengths(std::move(len)) {
        std::sort(lengths.begin(), lengths.end());
        if (l0 < 0 || l0 % 2 != 0) throw std::invalid_argument("LoopStructure: l0 must be even and >= 0");
        for (int l : lengths)
            if (l < 2 || l % 2 != 0) throw std::invalid_argument("LoopStructure: loop lengths must be even and >= 2");
        if (static_cast<int>(lengths.size()) != k - 1)
            throw std::invalid_argument("LoopStructure: need k - 1 further loops");
    }
    // (l0 + 2) + sum(lengths) = 2p + 2
    int p() const { return (l0 + std::accumulate(lengths.begin(), lengths.end(), 0)) / 2; }
    bool operator==(const LoopStructure&) const = default;
};

inline LoopStructure Pi0() { return {1, 2, {}}; }
inline LoopStructure Pi1() { return {1, 4, {}}; }
inline LoopStructure Pi2() { return {2, 2, {2}}; }

struct not_tabulated : std::invalid_argument {
    not_tabulated() : std::invalid_argument("delta_coeff: structure not tabulated") {}
};

struct DeltaCoeff {
    int p = 0;
    LoopStructure structure;
    cd value;
    std::optional<cd> factored;
};

inline DeltaCoeff delta_coeff(const LoopStructure& st, cd m) {
    DeltaCoeff c;
    c.structure = st;
    c.p = st.p();
    cd io = iota(m), ib = std::conj(io);
    double am = std::abs(m);
    if (st == Pi0()) {
        c.value = std::pow(am, 4) * (1.0 + io + ib);
    } else if (st == Pi1()) {
        c.value = std::pow(am, 6) *
                  (1.0 + 2.0 * io + 2.0 * ib + std::norm(io) + 2.0 * io * io + 2.0 * ib * ib + io * io * io + ib * ib * ib);
        c.factored = std::pow(am, 6) * (io + ib + 1.0) * (io * io + ib * ib - std::norm(io) + io + ib + 1.0);
    } else if (st == Pi2()) {
        c.value = 0.0;
    } else {
        throw not_tabulated();
    }
    return c;
}

// tr[(G G^dagger)^{p+1}]: the loop G G^dag G G^dag ... summed over all index tuples.
inline cd loop_sum_full(const Mat& G, int p) {
    if (p < 1) throw std::invalid_argument("loop_sum_full: p >= 1");
    Mat A = G * G.adjoint();
    Mat P = A;
    for (int i = 0; i < p; ++i) P = P * A;
    return P.trace();
}

inline double loop_sum_spectral(const Eigen::VectorXd& evals, cd z, int p) {
    std::vector<double> t(evals.size());
    for (Eigen::Index k = 0; k < evals.size(); ++k) t[k] = std::pow(std::norm(evals(k) - z), -(p + 1));
    return pairwise_sum(t);
}

namespace detail {

struct Partition4 {
    std::array<int, 4> label;  // block label of x0..x3
    int blocks;
    double mobius;             // prod over blocks of (-1)^{|b|-1} (|b|-1)!
};

inline std::vector<Partition4> partitions4() {
    std::vector<Partition4> out;
    std::array<int, 4> a{};
    auto rec = [&](auto&& self, int i, int used) -> void {
        if (i == 4) {
            Partition4 p{a, used, 1.0};
            for (int b = 0; b < used; ++b) {
                int sz = 0;
                for (int v : a) sz += v == b;
                double f = 1.0;
                for (int j = 2; j < sz; ++j) f *= j;
                p.mobius *= ((sz - 1) % 2 ? -1.0 : 1.0) * f;
            }
            out.push_back(p);
            return;
        }
        for (int b = 0; b <= used; ++b) {
            a[i] = b;
            self(self, i + 1, std::max(used, b + 1));
        }
    };
    rec(rec, 0, 0);
    return out;
}

// Sum of G_{x0x1} Gd_{x1x2} G_{x2x3} Gd_{x3x0} over tuples constant on the blocks of p
// (different blocks may coincide).
inline cd coincidence_sum(const Mat& G, const Mat& Gd, const Partition4& p) {
    const Eigen::Index N = G.rows();
    if (p.blocks == 4) return (G * Gd * G * Gd).trace();
    cd s = 0.0;
    std::array<Eigen::Index, 4> y{};
    auto term = [&]() {
        const auto x0 = y[p.label[0]], x1 = y[p.label[1]], x2 = y[p.label[2]], x3 = y[p.label[3]];
        return G(x0, x1) * Gd(x1, x2) * G(x2, x3) * Gd(x3, x0);
    };
    if (p.blocks == 1) {
        for (y[0] = 0; y[0] < N; ++y[0]) s += term();
    } else if (p.blocks == 2) {
        for (y[0] = 0; y[0] < N; ++y[0])
            for (y[1] = 0; y[1] < N; ++y[1]) s += term();
    } else {
        for (y[0] = 0; y[0] < N; ++y[0])
            for (y[1] = 0; y[1] < N; ++y[1])
                for (y[2] = 0; y[2] < N; ++y[2]) s += term();
    }
    return s;
}

}  // namespace detail

// Sum over pairwise distinct x0..x3 of G_{x0x1} G^dag_{x1x2} G_{x2x3} G^dag_{x3x0}, by
// inclusion-exclusion over the 15 set partitions of the four indices.
inline cd loop_sum_distinct(const Mat& G) {
    static const auto parts = detail::partitions4();
    const Mat Gd = G.adjoint();
    cd s = 0.0;
    for (const auto& p : parts) s += p.mobius * detail::coincidence_sum(G, Gd, p);
    return s;
}

inline cd loop_sum_distinct_brute(const Mat& G) {
    const Eigen::Index N = G.rows();
    const Mat Gd = G.adjoint();
    cd s = 0.0;
    for (Eigen::Index a = 0; a < N; ++a)
        for (Eigen::Index b = 0; b < N; ++b) {
            if (b == a) continue;
            for (Eigen::Index c = 0; c < N; ++c) {
                if (c == a || c == b) continue;
                for (Eigen::Index d = 0; d < N; ++d) {
                    if (d == a || d == b || d == c) continue;
                    s += G(a, b) * Gd(b, c) * G(c, d) * Gd(d, a);
                }
            }
        }
    return s;
}

enum class Verdict { Pass, Fail, Inconclusive };

inline std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Pass: return "pass";
        case Verdict::Fail: return "fail";
        case Verdict::Inconclusive: return "inconclusive";
    }
    return "?";
}

struct LoopCompare {
    int N = 0;
    double E = 0.0, eta = 0.0;
    double normalized = 0.0;  // MC mean of Sigma* / (N (Im m / eta)^4)
    double stderr_ = 0.0;
    double delta0 = 0.0;
    double budget = 0.0;      // gate * eta
    std::size_t n = 0, n_failed = 0;
    Verdict verdict = Verdict::Inconclusive;
};

inline LoopCompare loop_mc_compare(int N, double E, double eps0, std::size_t n_samples, int workers,
                                   double gate = 5.0, std::uint64_t seed = 0) {
    if (!(eps0 > 0.0 && eps0 < 0.5)) throw std::invalid_argument("loop_mc_compare: eps0 in (0, 1/2)");
    LoopCompare r;
    r.N = N;
    r.E = E;
    r.eta = std::pow(static_cast<double>(N), -eps0);
    const cd z(E, r.eta);
    const cd m = msc(z);
    const double norm = N * std::pow(m.imag() / r.eta, 4);
    ModelSpec spec(ModelKind::GUE, TorusLattice(1, N, 1), 0.0, seed);
    auto res = parallel_ensemble(
        n_samples, workers,
        [&](std::size_t i) {
            Mat G = resolvent(assemble(spec, i), z).G;
            return std::vector<double>{loop_sum_distinct(G).real() / norm};
        },
        {"normalized_loop"});
    r.normalized = res.stats[0].mean();
    r.stderr_ = res.stats[0].std_error();
    r.n = res.n_requested - res.n_failed;
    r.n_failed = res.n_failed;
    r.delta0 = delta_coeff(Pi0(), m).value.real();
    r.budget = gate * r.eta;
    if (r.stderr_ > r.eta)
        r.verdict = Verdict::Inconclusive;
    else
        r.verdict = (std::abs(r.normalized) <= r.budget && std::abs(r.normalized - r.delta0) <= r.budget)
                        ? Verdict::Pass
                        : Verdict::Fail;
    return r;
}

struct TexpCheck {
    cd lhs, rhs, residual;  // MC means; residual = lhs - rhs
    double se_re = 0.0, se_im = 0.0;
    double se_abs() const { return std::hypot(se_re, se_im); }
    double lhs_abs_se = 0.0;
    std::size_t n = 0, n_failed = 0;
    Verdict verdict = Verdict::Inconclusive;
};

// Deterministic pieces shared by every sample of the second-order T-expansion check.
struct TexpKernels {
    KernelSet ks;
    Mat S, theta, M, thetaM0S;
};

inline TexpKernels texp_kernels(const ModelSpec& spec, cd z) {
    TexpKernels k{build_kernels(spec, z), {}, {}, {}, {}};
    k.S = k.ks.site(k.ks.S_blk);
    k.theta = k.ks.site(k.ks.theta_blk);
    k.M = k.ks.M_full();
    Mat M0 = k.M.cwiseAbs2().cast<cd>();
    k.thetaM0S = k.theta * M0 * k.S;
    return k;
}

// One-sample value of T_{a,b1b2} and of the expansion without its Q-terms.
inline std::pair<cd, cd> texp_sample(const TexpKernels& k, const Mat& G, int a, int b1, int b2) {
    const auto kind = k.ks.spec.kind;
    const cd m = k.ks.m;
    if (kind == ModelKind::WegnerOrbital || kind == ModelKind::GUE) {
        Vec v = G.col(b1).cwiseProduct(G.col(b2).conjugate());
        Vec Sv = k.S * v;
        Vec dG = G.diagonal().array() - m;
        Vec A = m * ((k.S * dG).cwiseProduct(v) + dG.conjugate().cwiseProduct(Sv));
        cd lhs = Sv(a);
        cd rhs = m * k.theta(a, b1) * std::conj(G(b1, b2)) + (k.theta.row(a) * A)(0);
        return {lhs, rhs};
    }
    Mat Gr = G - k.M;
    Vec v = Gr.col(b1).cwiseProduct(Gr.col(b2).conjugate());
    cd lhs = (k.S * v)(a);
    Vec Mb1 = k.M.col(b1), Mb2c = k.M.col(b2).conjugate();
    Vec lead = Mb1.cwiseProduct(Mb2c) + Gr.col(b1).cwiseProduct(Mb2c) + Mb1.cwiseProduct(Gr.col(b2).conjugate());
    cd term1 = (k.thetaM0S.row(a) * lead)(0);
    Vec u = G.col(b1).cwiseProduct(G.col(b2).conjugate());
    Vec Su = k.S * u;
    Mat C = k.M.cwiseProduct(Gr.conjugate());
    Vec first = C * Su;
    Vec Sdg = k.S * Vec(Gr.diagonal());
    Vec second = Gr.col(b2).conjugate().cwiseProduct(k.M * Sdg.cwiseProduct(G.col(b1)));
    cd rhs = term1 + (k.theta.row(a) * (first + second))(0);
    return {lhs, rhs};
}

inline TexpCheck texp_second_order_check(const ModelSpec& spec, cd z, int a, int b1, int b2, std::size_t n_samples,
                                         int workers, double max_rel_stderr = 0.1) {
    const TexpKernels k = texp_kernels(spec, z);
    auto res = parallel_ensemble(
        n_samples, workers,
        [&](std::size_t i) {
            Mat G = resolvent(assemble(spec, i), z).G;
            auto [l, r] = texp_sample(k, G, a, b1, b2);
            cd d = l - r;
            return std::vector<double>{d.real(), d.imag(), l.real(), l.imag(), r.real(), r.imag()};
        },
        {"res_re", "res_im", "lhs_re", "lhs_im", "rhs_re", "rhs_im"});
    TexpCheck t;
    t.residual = {res.stats[0].mean(), res.stats[1].mean()};
    t.lhs = {res.stats[2].mean(), res.stats[3].mean()};
    t.rhs = {res.stats[4].mean(), res.stats[5].mean()};
    t.se_re = res.stats[0].std_error();
    t.se_im = res.stats[1].std_error();
    t.lhs_abs_se = std::hypot(res.stats[2].std_error(), res.stats[3].std_error());
    t.n = res.n_requested - res.n_failed;
    t.n_failed = res.n_failed;
    if (!(t.se_abs() <= max_rel_stderr * std::abs(t.lhs)))
        t.verdict = Verdict::Inconclusive;
    else
        t.verdict = std::abs(t.residual) <= 3.0 * t.se_abs() ? Verdict::Pass : Verdict::Fail;
    return t;
}

struct FourthCumulant {
    cd value;
    double ratio = 0.0;  // |value| / (eta |A4|)
};

inline FourthCumulant fourth_cumulant_sum(cd m, cd z, double t0, cd tplus, double kappa4, int W, int d) {
    if (std::abs(1.0 - tplus) == 0.0) throw std::domain_error("fourth_cumulant_sum: pole at t+ = 1");
    const double A4 = kappa4 * std::pow(static_cast<double>(W), -d);
    const double eta = z.imag();
    const cd tminus = std::conj(tplus);
    const cd i2(0.0, 2.0);
    const cd mb = std::conj(m);
    FourthCumulant f;
    f.value = A4 * m * m * m * (tplus - t0) / ((1.0 - tplus) * i2 * (eta + m.imag())) +
              A4 * mb * mb * mb * (tminus - t0) * t0 / ((1.0 - tminus) * (-i2) * (eta + m.imag())) +
              2.0 * A4 * (m * m).real() * t0 * t0 + A4 * std::norm(m) * t0 * t0;
    f.ratio = A4 == 0.0 ? 0.0 : std::abs(f.value) / (eta * std::abs(A4));
    return f;
}

inline FourthCumulant fourth_cumulant_sum(const KernelSet& ks, double kappa4) {
    return fourth_cumulant_sum(ks.m, ks.z, ks.t0, ks.tplus, kappa4, ks.lat().W(), ks.lat().d());
}

}  // namespace rbso
