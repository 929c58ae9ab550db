#pragma once

#include <fftw3.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "rbso/lattice.hpp"
#include "rbso/models.hpp"
#include "rbso/stats.hpp"

namespace rbso {

struct SpectralPoint {
    double E = 0.0;
    double eta = 0.0;
    cd z() const { return {E, eta}; }
};

struct solver_error : std::runtime_error {
    double residual;
    solver_error(const std::string& what, double r) : std::runtime_error(what), residual(r) {}
};

struct zero_mode_error : std::domain_error {
    zero_mode_error() : std::domain_error("zero-mode singularity: theta needs eta > 0") {}
};

struct use_exact_kernel : std::domain_error {
    use_exact_kernel() : std::domain_error("use-exact-kernel: B asymptotics need d >= 3") {}
};

// Semicircle Stieltjes transform, Im m > 0 for eta > 0. On the real axis the branch is the
// limit from the upper half plane.
inline cd msc(cd z) {
    if (z.imag() < 0.0) throw std::domain_error("msc: Im z must be >= 0");
    if (z.imag() == 0.0) {
        double E = z.real();
        if (std::abs(E) < 2.0) return {-E / 2.0, std::sqrt(4.0 - E * E) / 2.0};
        double r = std::sqrt(E * E - 4.0);
        return {E > 0 ? (-E + r) / 2.0 : (-E - r) / 2.0, 0.0};
    }
    cd s = std::sqrt(z * z - 4.0);
    cd a = (-z + s) / 2.0, b = (-z - s) / 2.0;
    return a.imag() > 0.0 ? a : b;
}

// Bulk limit eta -> 0+ at real E; only meaningful inside (-2, 2).
inline cd msc_bulk(double E) {
    if (!(std::abs(E) < 2.0)) throw std::domain_error("msc_bulk: |E| >= 2 has no bulk limit");
    return msc(cd(E, 0.0));
}

struct StieltjesM {
    cd m;
    cd z;
    double residual = 0.0;
    int iterations = 0;
    bool newton = false;
};

// Eigenvalues of lambda*Psi for BA (L-grid, each once) and AO (n-grid, each W^d times, listed once).
inline std::vector<double> interaction_spectrum(const ModelSpec& spec) {
    const auto& lat = spec.lat;
    int side = spec.kind == ModelKind::BlockAnderson ? lat.L() : lat.n();
    std::vector<double> ev;
    for (const auto& p : fourier_grid(side, lat.d())) ev.push_back(spec.lambda * adjacency_symbol(p, side));
    return ev;
}

inline StieltjesM solve_m(const ModelSpec& spec, cd z) {
    StieltjesM out;
    out.z = z;
    if (spec.kind == ModelKind::WegnerOrbital || spec.kind == ModelKind::GUE) {
        double s = spec.variance_row_sum();
        double r = std::sqrt(s);
        out.m = msc(z / r) / r;
        out.residual = std::abs(s * out.m * out.m + z * out.m + 1.0);
        return out;
    }
    const std::vector<double> ev = interaction_spectrum(spec);
    std::vector<double> re(ev.size()), im(ev.size());
    auto F = [&](cd m, cd* dF) {
        for (std::size_t k = 0; k < ev.size(); ++k) {
            cd g = 1.0 / (ev[k] - z - m);
            re[k] = g.real();
            im[k] = g.imag();
        }
        double n = static_cast<double>(ev.size());
        cd f(pairwise_sum(re) / n, pairwise_sum(im) / n);
        if (dF) {
            for (std::size_t k = 0; k < ev.size(); ++k) {
                cd g = 1.0 / (ev[k] - z - m);
                g *= g;
                re[k] = g.real();
                im[k] = g.imag();
            }
            *dF = cd(pairwise_sum(re) / n, pairwise_sum(im) / n);
        }
        return f;
    };
    constexpr double tol = 1e-12;
    constexpr int cap = 100000;
    cd m = msc(z);
    bool done = false;
    int it = 0;
    for (; it < cap; ++it) {
        cd next = 0.5 * m + 0.5 * F(m, nullptr);
        double step = std::abs(next - m);
        m = next;
        if (step < tol) {
            done = true;
            break;
        }
    }
    if (!done || !(m.imag() > 0.0 || z.imag() == 0.0)) {
        out.newton = true;
        m = msc(z);
        for (int k = 0; k < 200; ++k) {
            cd dF;
            cd g = F(m, &dF) - m;
            cd step = g / (dF - 1.0);
            m -= step;
            if (std::abs(step) < tol) {
                done = true;
                break;
            }
        }
    }
    out.m = m;
    out.iterations = it;
    out.residual = std::abs(F(m, nullptr) - m);
    if (!done || !(out.residual <= 1e-10) || (z.imag() > 0.0 && !(m.imag() > 0.0)))
        throw solver_error("solve_m: fixed point did not converge", out.residual);
    return out;
}

namespace detail {

inline std::mutex& fftw_mutex() {
    static std::mutex mu;
    return mu;
}

}  // namespace detail

// out[r] = sum_k in[k] exp(sign * 2 pi i k.r / side) on [0, side)^d, row-major.
inline std::vector<cd> dft(const std::vector<cd>& in, int side, int d, int sign) {
    std::vector<cd> a = in, out(in.size());
    std::vector<int> dims(d, side);
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(detail::fftw_mutex());
        plan = fftw_plan_dft(d, dims.data(), reinterpret_cast<fftw_complex*>(a.data()),
                             reinterpret_cast<fftw_complex*>(out.data()),
                             sign > 0 ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(detail::fftw_mutex());
        fftw_destroy_plan(plan);
    }
    return out;
}

// A[X][Y] = col[X - Y] for a block-translation-invariant matrix.
inline Mat block_circulant(const TorusLattice& lat, const std::vector<cd>& col) {
    const int nb = lat.num_blocks();
    Mat A(nb, nb);
    for (int X = 0; X < nb; ++X)
        for (int Y = 0; Y < nb; ++Y) A(X, Y) = col[lat.block_diff(X, Y)];
    return A;
}

inline Mat block_adjacency(const TorusLattice& lat) {
    Mat A = Mat::Zero(lat.num_blocks(), lat.num_blocks());
    for (int b = 0; b < lat.num_blocks(); ++b)
        for (int c : lat.block_neighbors(b)) A(b, c) = 1.0;
    return A;
}

// A^{L->n}_{[x][y]} = W^{-d} sum_{x in [x], y in [y]} A_xy.
inline Mat block_project(const TorusLattice& lat, const Mat& A) {
    const int nb = lat.num_blocks();
    Mat P = Mat::Zero(nb, nb);
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.N(); ++j) P(lat.block_index(i), lat.block_index(j)) += A(i, j);
    return P / static_cast<double>(lat.block_volume());
}

// Site-level matrix blk (x) E, i.e. W^{-d} blk([x],[y]).
inline Mat expand_blocks(const TorusLattice& lat, const Mat& blk) {
    Mat A(lat.N(), lat.N());
    const double w = 1.0 / lat.block_volume();
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.N(); ++j) A(i, j) = w * blk(lat.block_index(i), lat.block_index(j));
    return A;
}

inline Mat variance_matrix_blocks(const ModelSpec& spec) {
    const int nb = spec.lat.num_blocks();
    Mat S = Mat::Identity(nb, nb);
    if (spec.kind == ModelKind::WegnerOrbital) S += spec.lambda * spec.lambda * block_adjacency(spec.lat);
    return S;
}

inline Mat variance_matrix(const ModelSpec& spec) { return expand_blocks(spec.lat, variance_matrix_blocks(spec)); }

// M(x - y) for the block Anderson model, indexed by the site encoding of x - y.
inline std::vector<cd> ba_M_kernel(const ModelSpec& spec, cd z, cd m) {
    const auto& lat = spec.lat;
    const int L = lat.L();
    std::vector<cd> sym(lat.N());
    auto grid = fourier_grid(L, lat.d());
    for (int k = 0; k < lat.N(); ++k) {
        cd den = spec.lambda * adjacency_symbol(grid[k], L) - z - m;
        if (std::abs(den) == 0.0) throw solver_error("build_M: singular lambda*Psi - z - m", 0.0);
        sym[k] = 1.0 / den;
    }
    std::vector<cd> r = dft(sym, L, lat.d(), +1);
    for (auto& v : r) v /= static_cast<double>(lat.N());
    return r;
}

struct KernelSet {
    ModelSpec spec;
    cd z;
    cd m;
    std::vector<cd> M_site;  // BA only: M(x - y)
    Mat M_blk;               // AO: M^{L->n}; WO/GUE: m I_n
    Mat M0_blk, Mplus_blk, S_blk, Splus_blk, Sminus_blk, theta_blk, theta_ring_blk;
    bool has_theta = false;
    double t0 = 0.0;  // sum_y |M_xy|^2
    cd tplus;         // sum_y M_xy^2

    const TorusLattice& lat() const { return spec.lat; }

    cd M(int x, int y) const {
        const auto& L = spec.lat;
        if (spec.kind == ModelKind::BlockAnderson) return M_site[L.site_diff(x, y)];
        if (L.intra_offset(x) != L.intra_offset(y)) return 0.0;
        return M_blk(L.block_index(x), L.block_index(y));
    }
    Mat M_full() const {
        const int N = spec.lat.N();
        Mat A(N, N);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) A(i, j) = M(i, j);
        return A;
    }
    Mat site(const Mat& blk) const { return expand_blocks(spec.lat, blk); }
    // Row sum of M0_blk, equal to Im m / (Im m + eta).
    double m0_row_sum() const { return M0_blk.row(0).sum().real(); }
    double s_row_sum() const { return S_blk.row(0).sum().real(); }
    // Entry of theta - theta_ring at site level.
    double zero_mode_constant() const {
        double s = s_row_sum();
        return s / (spec.lat.N() * (1.0 - m0_row_sum() * s));
    }
};

inline Mat build_M(const ModelSpec& spec, cd z, cd m) {
    const auto& lat = spec.lat;
    if (spec.kind == ModelKind::WegnerOrbital || spec.kind == ModelKind::GUE)
        return m * Mat::Identity(lat.N(), lat.N());
    if (spec.kind == ModelKind::BlockAnderson) {
        auto k = ba_M_kernel(spec, z, m);
        Mat A(lat.N(), lat.N());
        for (int i = 0; i < lat.N(); ++i)
            for (int j = 0; j < lat.N(); ++j) A(i, j) = k[lat.site_diff(i, j)];
        return A;
    }
    const int nb = lat.num_blocks();
    Mat R = spec.lambda * block_adjacency(lat) - (z + m) * Mat::Identity(nb, nb);
    Eigen::PartialPivLU<Mat> lu(R);
    Mat Mb = lu.inverse();
    Mat A = Mat::Zero(lat.N(), lat.N());
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.N(); ++j)
            if (lat.intra_offset(i) == lat.intra_offset(j)) A(i, j) = Mb(lat.block_index(i), lat.block_index(j));
    return A;
}

inline Mat flat_projector(int nb) { return Mat::Constant(nb, nb, cd(1.0 / nb, 0.0)); }

namespace detail {

inline Mat checked_inverse(const Mat& A, const char* what) {
    Eigen::PartialPivLU<Mat> lu(A);
    double rc = lu.rcond();
    if (!(rc > 1e-14)) throw solver_error(std::string(what) + ": singular block matrix, rcond estimate", rc);
    return lu.inverse();
}

}  // namespace detail

inline KernelSet build_kernels(const ModelSpec& spec, cd z, cd m) {
    KernelSet ks;
    ks.spec = spec;
    ks.z = z;
    ks.m = m;
    const auto& lat = spec.lat;
    const int nb = lat.num_blocks();
    const double Wd = lat.block_volume();
    std::vector<cd> c0(nb, 0.0), cp(nb, 0.0);
    if (spec.kind == ModelKind::BlockAnderson) {
        ks.M_site = ba_M_kernel(spec, z, m);
        double t0 = 0.0;
        cd tp = 0.0;
        for (cd v : ks.M_site) {
            t0 += std::norm(v);
            tp += v * v;
        }
        ks.t0 = t0;
        ks.tplus = tp;
        const auto& home = lat.block_members(0);
        for (int i = 0; i < lat.N(); ++i) {
            int X = lat.block_index(i);
            for (int j : home) {
                cd v = ks.M_site[lat.site_diff(i, j)];
                c0[X] += std::norm(v) / Wd;
                cp[X] += v * v / Wd;
            }
        }
    } else {
        if (spec.kind == ModelKind::AndersonOrbital) {
            Mat R = spec.lambda * block_adjacency(lat) - (z + m) * Mat::Identity(nb, nb);
            ks.M_blk = detail::checked_inverse(R, "build_M");
        } else {
            ks.M_blk = m * Mat::Identity(nb, nb);
        }
        double t0 = 0.0;
        cd tp = 0.0;
        for (int X = 0; X < nb; ++X) {
            cd v = ks.M_blk(X, 0);
            c0[X] = std::norm(v);
            cp[X] = v * v;
            t0 += std::norm(v);
            tp += v * v;
        }
        ks.t0 = t0;
        ks.tplus = tp;
    }
    ks.M0_blk = block_circulant(lat, c0);
    ks.Mplus_blk = block_circulant(lat, cp);
    ks.S_blk = variance_matrix_blocks(spec);
    const Mat I = Mat::Identity(nb, nb);
    ks.Splus_blk = ks.S_blk * detail::checked_inverse(I - ks.Mplus_blk * ks.S_blk, "splus");
    ks.Sminus_blk = ks.Splus_blk.adjoint();
    const Mat K = I - ks.M0_blk * ks.S_blk;
    const Mat J = flat_projector(nb);
    const Mat P = I - J;
    if (z.imag() > 0.0) {
        ks.theta_blk = ks.S_blk * detail::checked_inverse(K, "theta");
        ks.has_theta = true;
    }
    // K and S commute with the flat projector; K + J equals K on its complement.
    ks.theta_ring_blk = P * ks.S_blk * detail::checked_inverse(K + J, "theta_ring") * P;
    return ks;
}

inline KernelSet build_kernels(const ModelSpec& spec, cd z) { return build_kernels(spec, z, solve_m(spec, z).m); }

// Returns (theta, theta_ring) at block level.
inline std::pair<Mat, Mat> diffusive_theta(const KernelSet& ks) {
    if (!ks.has_theta) throw zero_mode_error();
    return {ks.theta_blk, ks.theta_ring_blk};
}

// Wegner orbital diffusive symbol [1 - |m|^2 (1 + lambda^2 e(p))]^{-1}.
inline cd wo_symbol(const ModelSpec& spec, cd m, const std::vector<double>& p) {
    double s = 1.0 + spec.lambda * spec.lambda * adjacency_symbol(p, spec.lat.n());
    cd den = 1.0 - std::norm(m) * s;
    if (std::abs(den) == 0.0) throw std::domain_error("wo_symbol: vanishing symbol");
    return 1.0 / den;
}

// theta_ring at block level rebuilt from its Fourier symbol over p != 0.
inline Mat theta_fourier(const KernelSet& ks) {
    const auto& lat = ks.lat();
    const int nb = lat.num_blocks(), n = lat.n(), d = lat.d();
    auto grid = fourier_grid(n, d);
    std::vector<cd> g(nb, 0.0);
    if (ks.spec.kind == ModelKind::WegnerOrbital || ks.spec.kind == ModelKind::GUE) {
        for (int k = 1; k < nb; ++k) {
            double s = 1.0 + ks.spec.lambda * ks.spec.lambda * adjacency_symbol(grid[k], n);
            g[k] = s * wo_symbol(ks.spec, ks.m, grid[k]);
        }
    } else {
        std::vector<cd> row(nb);
        for (int X = 0; X < nb; ++X) row[X] = (X == 0 ? 1.0 : 0.0) - ks.M0_blk(X, 0);
        std::vector<cd> khat = dft(row, n, d, -1);
        for (int k = 1; k < nb; ++k) {
            if (std::abs(khat[k]) == 0.0) throw std::domain_error("theta_fourier: vanishing symbol");
            g[k] = 1.0 / khat[k];
        }
    }
    std::vector<cd> col = dft(g, n, d, +1);
    for (auto& v : col) v /= static_cast<double>(nb);
    return block_circulant(lat, col);
}

inline double spectral_radius(const Mat& A) {
    Eigen::ComplexEigenSolver<Mat> es(A, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

// (1 - theta_ring E)^{-1} theta_ring at block level.
inline Mat theta_renormalized(const Mat& theta_ring, const Mat& E) {
    Mat X = theta_ring * E;
    double rho = spectral_radius(X);
    if (!(rho < 1.0)) throw std::domain_error("theta_renormalized: spectral radius of theta_ring*E >= 1");
    Mat I = Mat::Identity(X.rows(), X.cols());
    return Eigen::PartialPivLU<Mat>(I - X).solve(theta_ring);
}

inline double b_kernel(double beta, int W, int d, double r) {
    if (d <= 2) throw use_exact_kernel();
    return beta / (static_cast<double>(W) * W * std::pow(r, d - 2));
}

struct DecayFit {
    double C = 0.0;      // |M| <= (C lambda)^r, or the C0 of the exponential bound
    double rate = 0.0;   // minus the least-squares slope of log max |K| per block step
};

// Smallest C with |M_xy| <= (C lambda)^{|x-y|} over x != y (BA: sites, AO: blocks).
inline DecayFit fit_M_decay(const KernelSet& ks) {
    DecayFit f;
    const auto& lat = ks.lat();
    const double lam = ks.spec.lambda;
    if (!(lam > 0.0)) throw coupling_zero();
    if (ks.spec.kind == ModelKind::BlockAnderson) {
        for (int i = 1; i < lat.N(); ++i) {
            int r = lat.dist_l1(i, 0);
            f.C = std::max(f.C, std::pow(std::abs(ks.M_site[i]), 1.0 / r) / lam);
        }
    } else {
        for (int X = 1; X < lat.num_blocks(); ++X) {
            int r = lat.block_dist(X, 0);
            f.C = std::max(f.C, std::pow(std::abs(ks.M_blk(X, 0)), 1.0 / r) / lam);
        }
    }
    return f;
}

// |S^+_xy| <= C0 W^{-d} exp(-|x-y| / (C0 W)): smallest C0, plus the per-block decay rate.
inline DecayFit fit_splus_decay(const KernelSet& ks) {
    const auto& lat = ks.lat();
    DecayFit f;
    int rmax = 0;
    for (int X = 0; X < lat.num_blocks(); ++X) rmax = std::max(rmax, lat.block_dist(X, 0));
    std::vector<double> peak(rmax + 1, 0.0);
    for (int X = 0; X < lat.num_blocks(); ++X)
        peak[lat.block_dist(X, 0)] = std::max(peak[lat.block_dist(X, 0)], std::abs(ks.Splus_blk(X, 0)));
    std::vector<double> xs, ys;
    for (int r = 0; r <= rmax; ++r)
        if (peak[r] > 0.0) {
            xs.push_back(r);
            ys.push_back(std::log(peak[r]));
        }
    f.rate = xs.size() >= 2 ? -least_squares(xs, ys).slope : std::numeric_limits<double>::infinity();
    auto ok = [&](double C0) {
        for (int i = 0; i < lat.N(); ++i) {
            double v = std::abs(ks.Splus_blk(lat.block_index(i), 0));
            double dist = 0.0;
            for (int j : lat.block_members(0)) dist = std::max(dist, 0.0 + lat.dist_l1(i, j));
            // the bound must hold for every y in the home block; the farthest is the binding one
            if (v > C0 * std::exp(-dist / (C0 * lat.W()))) return false;
        }
        return true;
    };
    double lo = 1e-6, hi = 1.0;
    while (!ok(hi)) hi *= 2.0;
    for (int it = 0; it < 100; ++it) {
        double mid = std::sqrt(lo * hi);
        (ok(mid) ? hi : lo) = mid;
    }
    f.C = hi;
    return f;
}

}  // namespace rbso
