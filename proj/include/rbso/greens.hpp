#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rbso/mfield.hpp"
#include "rbso/models.hpp"
#include "rbso/stats.hpp"

namespace rbso {

struct ResolventSample {
    Mat G;
    cd z;
    double residual = 0.0;  // max |(H - z) G - I| / max |G|
};

struct singular_resolvent : std::runtime_error {
    singular_resolvent() : std::runtime_error("resolvent: H - z numerically singular") {}
};

inline double max_abs(const Mat& A) { return A.size() ? A.cwiseAbs().maxCoeff() : 0.0; }

inline ResolventSample resolvent(const Mat& H, cd z) {
    const auto N = H.rows();
    Mat A = H - z * Mat::Identity(N, N);
    Eigen::PartialPivLU<Mat> lu(A);
    if (z.imag() == 0.0 && !(lu.rcond() > 1e-13)) throw singular_resolvent();
    ResolventSample r;
    r.z = z;
    r.G = lu.inverse();
    if (!r.G.allFinite()) throw singular_resolvent();
    r.residual = max_abs(A * r.G - Mat::Identity(N, N)) / std::max(max_abs(r.G), 1e-300);
    return r;
}

inline ResolventSample resolvent(const HamiltonianSample& h, cd z) { return resolvent(h.H, z); }

// G = U diag(1 / (lambda_k - z)) U^dagger.
inline ResolventSample resolvent_eigen(const Mat& H, cd z) {
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    if (es.info() != Eigen::Success) throw std::runtime_error("resolvent_eigen: diagonalization failed");
    Vec w(H.rows());
    for (Eigen::Index k = 0; k < H.rows(); ++k) w(k) = 1.0 / (es.eigenvalues()(k) - z);
    ResolventSample r;
    r.z = z;
    r.G = es.eigenvectors() * w.asDiagonal() * es.eigenvectors().adjoint();
    Mat A = H - z * Mat::Identity(H.rows(), H.rows());
    r.residual = max_abs(A * r.G - Mat::Identity(H.rows(), H.rows())) / std::max(max_abs(r.G), 1e-300);
    return r;
}

// T_{x, y1 y2} = sum_a S_xa G_{a y1} conj(G_{a y2}) for every x.
inline Vec t_profile(const Mat& G, const KernelSet& ks, int y1, int y2) {
    const auto& lat = ks.lat();
    Vec blk = Vec::Zero(lat.num_blocks());
    for (int a = 0; a < lat.N(); ++a) blk(lat.block_index(a)) += G(a, y1) * std::conj(G(a, y2));
    Vec tb = ks.S_blk * blk / static_cast<double>(lat.block_volume());
    Vec T(lat.N());
    for (int x = 0; x < lat.N(); ++x) T(x) = tb(lat.block_index(x));
    return T;
}

inline cd t_variable(const Mat& G, const KernelSet& ks, int x, int y1, int y2, bool ring = false) {
    Vec T = t_profile(G, ks, y1, y2);
    if (!ring) return T(x);
    return T(x) - T.mean();
}

// (T - T_ring) from the zero mode: c (G_{y2 y1} - conj G_{y1 y2}) / (2 i N eta), c the column sum of S.
inline cd t_zero_mode(const Mat& G, const KernelSet& ks, int y1, int y2) {
    const double eta = ks.z.imag();
    const double c = ks.s_row_sum();
    return c * (G(y2, y1) - std::conj(G(y1, y2))) / (cd(0.0, 2.0) * static_cast<double>(ks.lat().N()) * eta);
}

struct WardReport {
    double offdiag = 0.0;   // both forms of the two-index identity
    double diagonal = 0.0;  // sum_x |G_xy|^2 = Im G_yy / eta
    double max() const { return std::max(offdiag, diagonal); }
};

inline WardReport ward_check(const Mat& G, cd z) {
    const double eta = z.imag();
    if (!(eta > 0.0)) throw std::domain_error("ward_check: eta must be > 0");
    Mat rhs = (G - G.adjoint()) / cd(0.0, 2.0 * eta);
    double scale = std::max(max_abs(rhs), 1e-300);
    WardReport w;
    w.offdiag = std::max(max_abs(G.adjoint() * G - rhs), max_abs(G * G.adjoint() - rhs)) / scale;
    double dmax = 0.0;
    for (Eigen::Index y = 0; y < G.cols(); ++y) {
        double lhs = G.col(y).squaredNorm();
        dmax = std::max(dmax, std::abs(lhs - G(y, y).imag() / eta));
    }
    w.diagonal = dmax / scale;
    return w;
}

using Observable = std::function<std::vector<double>(const HamiltonianSample&, const ResolventSample&)>;

struct EnsembleRequest {
    ModelSpec spec;
    cd z;
    std::size_t n_samples = 0;
    int workers = 1;
    std::uint64_t first_index = 0;
};

inline EnsembleResult ensemble_run(const EnsembleRequest& req, const Observable& obs,
                                   const std::vector<std::string>& names) {
    return parallel_ensemble(
        req.n_samples, req.workers,
        [&](std::size_t i) {
            HamiltonianSample h = assemble(req.spec, req.first_index + i);
            ResolventSample g = resolvent(h, req.z);
            return obs(h, g);
        },
        names);
}

struct LocalLawStats {
    std::vector<double> max_dev;        // per sample max |G - M|
    std::vector<double> max_t_ratio;    // per sample max T_xy / (ref_xy + 1/(N eta))
    double dev_over_h = 0.0;            // mean max|G-M| / sqrt(h_lambda), NaN if lambda = 0
    double mean_max_dev = 0.0;
    double mean_max_t_ratio = 0.0;
    bool exact_kernel_reference = false;  // d <= 2: ref_xy is |theta_xy| instead of B_xy
    std::vector<double> hist_edges;
    std::vector<std::size_t> hist_counts;  // |G - M| entries on log10 bins
};

inline LocalLawStats local_law_stats(const ModelSpec& spec, const KernelSet& ks, std::size_t n_samples,
                                     int workers, std::uint64_t first_index = 0) {
    const auto& lat = spec.lat;
    const int N = lat.N();
    const double eta = ks.z.imag();
    Mat Mf = ks.M_full();
    LocalLawStats out;
    out.exact_kernel_reference = lat.d() <= 2 || !(spec.lambda > 0.0);
    std::vector<double> ref(N);
    for (int x = 0; x < N; ++x) {
        if (out.exact_kernel_reference) {
            Mat th = ks.has_theta ? ks.theta_blk : ks.theta_ring_blk;
            ref[x] = std::abs(th(lat.block_index(x), lat.block_index(0))) / lat.block_volume();
        } else {
            ref[x] = b_kernel(scale_params(spec).beta, lat.W(), lat.d(), lat.bracket(x, 0));
        }
    }
    const double floor_ = 1.0 / (N * eta);
    out.hist_edges = {-8, -6, -5, -4, -3, -2, -1, 0, 1};
    std::vector<std::vector<std::size_t>> hist(n_samples);
    auto res = parallel_ensemble(
        n_samples, workers,
        [&](std::size_t i) {
            HamiltonianSample h = assemble(spec, first_index + i);
            ResolventSample g = resolvent(h, ks.z);
            Mat D = g.G - Mf;
            std::vector<std::size_t> hc(out.hist_edges.size() - 1, 0);
            for (Eigen::Index k = 0; k < D.size(); ++k) {
                double v = std::log10(std::max(std::abs(D.data()[k]), 1e-300));
                for (std::size_t b = 0; b + 1 < out.hist_edges.size(); ++b)
                    if (v >= out.hist_edges[b] && v < out.hist_edges[b + 1]) ++hc[b];
            }
            hist[i] = std::move(hc);
            double tr = 0.0;
            for (int y = 0; y < N; ++y) {
                Vec T = t_profile(g.G, ks, y, y);
                for (int x = 0; x < N; ++x) {
                    int disp = lat.site_diff(x, y);
                    tr = std::max(tr, T(x).real() / (ref[disp] + floor_));
                }
            }
            return std::vector<double>{max_abs(D), tr};
        },
        {"max_dev", "max_t_ratio"});
    out.max_dev = res.samples[0];
    out.max_t_ratio = res.samples[1];
    out.mean_max_dev = res.stats[0].mean();
    out.mean_max_t_ratio = res.stats[1].mean();
    out.dev_over_h = spec.lambda > 0.0 && spec.kind != ModelKind::GUE
                         ? out.mean_max_dev / std::sqrt(scale_params(spec).h_lambda)
                         : std::numeric_limits<double>::quiet_NaN();
    out.hist_counts.assign(out.hist_edges.size() - 1, 0);
    for (const auto& hc : hist)
        for (std::size_t b = 0; b < hc.size(); ++b) out.hist_counts[b] += hc[b];
    return out;
}

}  // namespace rbso
