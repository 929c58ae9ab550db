#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rbso/greens.hpp"
#include "rbso/models.hpp"
#include "rbso/stats.hpp"

namespace rbso {

struct SpectrumSample {
    Eigen::VectorXd evals;  // ascending
    Mat evecs;              // orthonormal columns
    double residual = 0.0;  // max_k |H u_k - lambda_k u_k|
};

inline SpectrumSample eigh(const Mat& H) {
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigh: diagonalization failed");
    SpectrumSample s;
    s.evals = es.eigenvalues();
    s.evecs = es.eigenvectors();
    Mat R = H * s.evecs - s.evecs * s.evals.cast<cd>().asDiagonal();
    s.residual = R.colwise().norm().maxCoeff();
    return s;
}

struct empty_window : std::runtime_error {
    empty_window() : std::runtime_error("bulk window is empty") {}
};

inline std::vector<int> bulk_indices(const Eigen::VectorXd& evals, double kappa) {
    std::vector<int> idx;
    for (Eigen::Index k = 0; k < evals.size(); ++k)
        if (std::abs(evals(k)) <= 2.0 - kappa) idx.push_back(static_cast<int>(k));
    return idx;
}

inline double participation_ratio(const Vec& u) {
    double s4 = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) s4 += std::norm(u(i)) * std::norm(u(i));
    return 1.0 / s4;
}

struct SupNormStats {
    double max = 0.0;
    double mean = 0.0;
    std::vector<double> per_k;
    double eta_star = std::numeric_limits<double>::quiet_NaN();
};

inline SupNormStats sup_norm_stats(const SpectrumSample& sp, double kappa,
                                   const ModelSpec* spec = nullptr) {
    auto idx = bulk_indices(sp.evals, kappa);
    if (idx.empty()) throw empty_window();
    SupNormStats s;
    for (int k : idx) {
        double v = sp.evecs.col(k).cwiseAbs2().maxCoeff();
        s.per_k.push_back(v);
        s.max = std::max(s.max, v);
    }
    s.mean = pairwise_sum(s.per_k) / s.per_k.size();
    if (spec && spec->lambda > 0.0 && spec->kind != ModelKind::GUE) s.eta_star = scale_params(*spec).eta_star;
    return s;
}

// Tiling of the block torus by boxes of ell^d blocks; when ell does not divide n the last
// box along each axis is shorter. Returns the box id of each site.
inline std::vector<int> box_cover(const TorusLattice& lat, int ell, int* n_boxes = nullptr) {
    if (ell < 1 || ell > lat.n()) throw std::invalid_argument("box_cover: need 1 <= ell <= n");
    const int per = (lat.n() + ell - 1) / ell;
    std::vector<int> id(lat.N());
    for (int x = 0; x < lat.N(); ++x) {
        Coords b = lat.decode_block(lat.block_index(x));
        int k = 0;
        for (int c : b) k = k * per + mod_pos(c, lat.n()) / ell;
        id[x] = k;
    }
    if (n_boxes) *n_boxes = static_cast<int>(ipow(per, lat.d()));
    return id;
}

inline double que_score(const Vec& u, const std::vector<int>& box, int n_boxes) {
    const double N = static_cast<double>(u.size());
    std::vector<double> sum(n_boxes, 0.0);
    std::vector<int> cnt(n_boxes, 0);
    for (Eigen::Index x = 0; x < u.size(); ++x) {
        sum[box[x]] += N * std::norm(u(x)) - 1.0;
        ++cnt[box[x]];
    }
    double s = 0.0;
    for (int b = 0; b < n_boxes; ++b)
        if (cnt[b]) s = std::max(s, std::abs(sum[b] / cnt[b]));
    return s;
}

struct QueFlatness {
    std::vector<double> scores;  // per bulk eigenvector
    double max = 0.0;
    double mean = 0.0;
    double frac_above_eps = 0.0;
};

inline QueFlatness que_flatness(const SpectrumSample& sp, const TorusLattice& lat, int ell, double kappa,
                                double eps = 0.5) {
    int nbox = 0;
    auto box = box_cover(lat, ell, &nbox);
    auto idx = bulk_indices(sp.evals, kappa);
    if (idx.empty()) throw empty_window();
    QueFlatness q;
    std::size_t above = 0;
    for (int k : idx) {
        double v = que_score(sp.evecs.col(k), box, nbox);
        q.scores.push_back(v);
        q.max = std::max(q.max, v);
        if (v > eps) ++above;
    }
    q.mean = pairwise_sum(q.scores) / q.scores.size();
    q.frac_above_eps = static_cast<double>(above) / q.scores.size();
    return q;
}

// Diagonal of Pi: (N/|I|) 1(x in I) - 1 for the union I of the given blocks.
inline Eigen::VectorXd flatness_mask(const TorusLattice& lat, const std::vector<int>& blocks) {
    std::vector<char> in(lat.num_blocks(), 0);
    for (int b : blocks) in.at(b) = 1;
    int size = 0;
    for (int x = 0; x < lat.N(); ++x) size += in[lat.block_index(x)];
    if (size == 0) throw std::invalid_argument("flatness_mask: empty region");
    Eigen::VectorXd pi(lat.N());
    for (int x = 0; x < lat.N(); ++x)
        pi(x) = (in[lat.block_index(x)] ? static_cast<double>(lat.N()) / size : 0.0) - 1.0;
    return pi;
}

struct TraceBound {
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;  // lhs / rhs, 0 when both vanish
    bool pass = false;
};

inline TraceBound que_trace_bound_check(const Mat& G, cd z, const Eigen::VectorXd& pi, double l,
                                        const SpectrumSample& sp) {
    const double eta = z.imag();
    if (!(eta > 0.0) || l < eta) throw std::domain_error("que_trace_bound_check: need eta > 0 and l >= eta");
    std::vector<int> win;
    for (Eigen::Index k = 0; k < sp.evals.size(); ++k)
        if (std::abs(sp.evals(k) - z.real()) <= l) win.push_back(static_cast<int>(k));
    TraceBound t;
    if (!win.empty()) {
        Mat U(G.rows(), static_cast<Eigen::Index>(win.size()));
        for (std::size_t a = 0; a < win.size(); ++a) U.col(a) = sp.evecs.col(win[a]);
        Mat X = U.adjoint() * pi.cast<cd>().asDiagonal() * U;
        t.lhs = X.squaredNorm();
    }
    Mat A = (G - G.adjoint()) / cd(0.0, 2.0);
    double tr = 0.0;
    for (Eigen::Index x = 0; x < A.rows(); ++x)
        for (Eigen::Index y = 0; y < A.cols(); ++y) tr += std::norm(A(x, y)) * pi(x) * pi(y);
    t.rhs = 4.0 * std::pow(l, 4) / (eta * eta) * tr;
    const double tol = 1e-10 * std::max({t.lhs, std::abs(t.rhs), 1e-300});
    t.pass = t.lhs <= t.rhs + tol;
    t.slack = (t.lhs == 0.0 && t.rhs == 0.0) ? 0.0 : t.lhs / t.rhs;
    return t;
}

struct FracMoment {
    std::vector<double> mean;    // E |G_xy|^s averaged over pairs at block distance r
    std::vector<double> stderr_r;
    double slope = 0.0;          // per block step, fitted on r >= r_min
    double ci_lo = 0.0, ci_hi = 0.0;
    bool neg_inf = false;        // no mass beyond r_min: decoupled blocks
    bool low_confidence = false; // fewer than one decade of decay inside the fit range
    std::size_t n_used = 0, n_failed = 0;
};

inline FracMoment frac_moment_decay(const ModelSpec& spec, double E, double s, std::size_t n_samples,
                                    int workers, int r_min = 2, std::uint64_t first_index = 0) {
    const auto& lat = spec.lat;
    int rmax = 0;
    for (int b = 0; b < lat.num_blocks(); ++b) rmax = std::max(rmax, lat.block_dist(b, 0));
    std::vector<int> pairs(rmax + 1, 0);
    for (int x = 0; x < lat.N(); ++x)
        for (int y = 0; y < lat.N(); ++y) ++pairs[lat.block_dist(lat.block_index(x), lat.block_index(y))];
    std::vector<std::string> names;
    for (int r = 0; r <= rmax; ++r) names.push_back("r" + std::to_string(r));
    auto res = parallel_ensemble(
        n_samples, workers,
        [&](std::size_t i) {
            HamiltonianSample h = assemble(spec, first_index + i);
            ResolventSample g = resolvent(h, cd(E, 0.0));
            std::vector<double> acc(rmax + 1, 0.0);
            for (int x = 0; x < lat.N(); ++x)
                for (int y = 0; y < lat.N(); ++y)
                    acc[lat.block_dist(lat.block_index(x), lat.block_index(y))] +=
                        std::pow(std::abs(g.G(x, y)), s);
            for (int r = 0; r <= rmax; ++r) acc[r] /= pairs[r];
            return acc;
        },
        names);
    FracMoment f;
    f.n_used = res.n_requested - res.n_failed;
    f.n_failed = res.n_failed;
    for (const auto& a : res.stats) {
        f.mean.push_back(a.mean());
        f.stderr_r.push_back(a.std_error());
    }
    auto fit = [&](const std::vector<double>& mean) {
        std::vector<double> xs, ys;
        for (int r = r_min; r <= rmax; ++r) {
            if (!(mean[r] > 0.0)) return -std::numeric_limits<double>::infinity();
            xs.push_back(r);
            ys.push_back(std::log(mean[r]));
        }
        if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
        return least_squares(xs, ys).slope;
    };
    f.slope = fit(f.mean);
    if (std::isinf(f.slope)) {
        f.neg_inf = true;
        f.ci_lo = f.ci_hi = f.slope;
        return f;
    }
    // delete-a-group jackknife over contiguous index groups
    const std::size_t n = f.n_used;
    const std::size_t groups = std::min<std::size_t>(20, n);
    std::vector<double> loo;
    for (std::size_t g = 0; g < groups; ++g) {
        std::size_t lo = g * n / groups, hi = (g + 1) * n / groups;
        std::vector<double> mean(rmax + 1);
        for (int r = 0; r <= rmax; ++r) {
            const auto& v = res.samples[r];
            std::vector<double> keep;
            keep.reserve(n - (hi - lo));
            for (std::size_t i = 0; i < n; ++i)
                if (i < lo || i >= hi) keep.push_back(v[i]);
            mean[r] = pairwise_sum(keep) / keep.size();
        }
        loo.push_back(fit(mean));
    }
    double lm = pairwise_sum(loo) / loo.size();
    double var = 0.0;
    for (double v : loo) var += (v - lm) * (v - lm);
    double se = std::sqrt(var * (groups - 1.0) / groups);
    f.ci_lo = f.slope - 1.96 * se;
    f.ci_hi = f.slope + 1.96 * se;
    double top = f.mean[r_min], bottom = f.mean[rmax];
    f.low_confidence = !(top / bottom >= 10.0);
    return f;
}

struct TransitionRow {
    double lambda = 0.0;
    double kappa = 0.0;
    double mean_sup = 0.0, max_sup = 0.0;
    double mean_pr = 0.0, pr_stderr = 0.0;
    double frac_slope = 0.0, frac_ci_lo = 0.0, frac_ci_hi = 0.0;
    double que_mean = 0.0, que_stderr = 0.0, que_max = 0.0;
    std::size_t n_samples = 0, n_failed = 0;
};

struct ScanRequest {
    ModelSpec base;
    std::vector<double> lambdas;
    double E = 0.0;
    double kappa = 0.1;
    int ell = 1;
    double s = 0.5;
    std::size_t n_samples = 100;
    std::size_t frac_samples = 0;  // 0 skips the fractional-moment column
    int workers = 1;
};

inline std::vector<TransitionRow> transition_scan(const ScanRequest& req) {
    if (req.lambdas.empty()) throw std::invalid_argument("transition_scan: empty lambda grid");
    std::vector<TransitionRow> rows;
    for (double lam : req.lambdas) {
        ModelSpec spec = req.base;
        spec.lambda = lam;
        TransitionRow row;
        row.lambda = lam;
        row.kappa = req.kappa;
        int nbox = 0;
        auto box = box_cover(spec.lat, req.ell, &nbox);
        auto res = parallel_ensemble(
            req.n_samples, req.workers,
            [&](std::size_t i) {
                HamiltonianSample h = assemble(spec, i);
                SpectrumSample sp = eigh(h.H);
                auto idx = bulk_indices(sp.evals, req.kappa);
                if (idx.empty()) throw empty_window();
                double sup_sum = 0, sup_max = 0, pr = 0, q = 0, qmax = 0;
                for (int k : idx) {
                    Vec u = sp.evecs.col(k);
                    double v = u.cwiseAbs2().maxCoeff();
                    sup_sum += v;
                    sup_max = std::max(sup_max, v);
                    pr += participation_ratio(u);
                    double sc = que_score(u, box, nbox);
                    q += sc;
                    qmax = std::max(qmax, sc);
                }
                double c = static_cast<double>(idx.size());
                return std::vector<double>{sup_sum / c, sup_max, pr / c, q / c, qmax};
            },
            {"mean_sup", "max_sup", "mean_pr", "que_mean", "que_max"});
        row.n_samples = res.n_requested - res.n_failed;
        row.n_failed = res.n_failed;
        row.mean_sup = res.stats[0].mean();
        row.max_sup = res.stats[1].mean();
        row.mean_pr = res.stats[2].mean();
        row.pr_stderr = res.stats[2].std_error();
        row.que_mean = res.stats[3].mean();
        row.que_stderr = res.stats[3].std_error();
        row.que_max = res.stats[4].mean();
        if (req.frac_samples > 0) {
            FracMoment f = frac_moment_decay(spec, req.E, req.s, req.frac_samples, req.workers);
            row.frac_slope = f.slope;
            row.frac_ci_lo = f.ci_lo;
            row.frac_ci_hi = f.ci_hi;
        } else {
            row.frac_slope = row.frac_ci_lo = row.frac_ci_hi = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace rbso
