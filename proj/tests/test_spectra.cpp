#include <gtest/gtest.h>

#include <random>

#include "rbso/spectra.hpp"

using namespace rbso;

namespace {

Mat random_hermitian(int N, double var, std::mt19937_64& eng) {
    std::normal_distribution<double> g(0.0, std::sqrt(var / 2.0));
    Mat A(N, N);
    for (int i = 0; i < N; ++i) {
        A(i, i) = std::sqrt(2.0) * g(eng);
        for (int j = i + 1; j < N; ++j) {
            A(i, j) = cd(g(eng), g(eng));
            A(j, i) = std::conj(A(i, j));
        }
    }
    return A;
}

}  // namespace

TEST(Eigh, Diagonal) {
    Mat H = Mat::Zero(3, 3);
    H(0, 0) = 1;
    H(1, 1) = 2;
    H(2, 2) = 3;
    SpectrumSample s = eigh(H);
    EXPECT_NEAR(s.evals(0), 1.0, 1e-15);
    EXPECT_NEAR(s.evals(1), 2.0, 1e-15);
    EXPECT_NEAR(s.evals(2), 3.0, 1e-15);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(std::abs(s.evecs(k, k)), 1.0, 1e-15);
}

TEST(Eigh, ReconstructionTraceAndMass) {
    std::mt19937_64 eng(4);
    Mat H = random_hermitian(60, 1.0 / 60, eng);
    SpectrumSample s = eigh(H);
    EXPECT_LE(s.residual, 1e-10);
    Mat R = s.evecs * s.evals.cast<cd>().asDiagonal() * s.evecs.adjoint();
    EXPECT_LE((H - R).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(s.evals.sum(), H.trace().real(), 1e-10);
    for (int k = 0; k < 60; ++k) EXPECT_NEAR(s.evecs.col(k).squaredNorm(), 1.0, 1e-12);
    for (int x = 0; x < 60; ++x) EXPECT_NEAR(60 * s.evecs.row(x).squaredNorm(), 60.0, 1e-10);
    for (int k = 1; k < 60; ++k) EXPECT_LE(s.evals(k - 1), s.evals(k));
}

TEST(BulkIndices, Examples) {
    Eigen::VectorXd ev(3);
    ev << -3, 0, 3;
    EXPECT_EQ(bulk_indices(ev, 0.1), std::vector<int>{1});
    EXPECT_EQ(bulk_indices(ev, 1.9), std::vector<int>{1});
    Eigen::VectorXd out(2);
    out << -2.5, 2.5;
    EXPECT_TRUE(bulk_indices(out, 0.1).empty());
    SpectrumSample s{out, Mat::Identity(2, 2), 0.0};
    EXPECT_THROW(sup_norm_stats(s, 0.1), empty_window);
}

TEST(SupNorm, FlatAndBasis) {
    const int N = 8;
    Mat U = Mat::Identity(N, N);
    Eigen::VectorXd ev = Eigen::VectorXd::Zero(N);
    EXPECT_EQ(sup_norm_stats({ev, U, 0.0}, 0.1).max, 1.0);
    Mat F = Mat::Constant(N, 1, cd(1.0 / std::sqrt(N), 0.0));
    SupNormStats s = sup_norm_stats({Eigen::VectorXd::Zero(1), F, 0.0}, 0.1);
    EXPECT_NEAR(s.max, 1.0 / N, 1e-15);
    EXPECT_NEAR(participation_ratio(F.col(0)), N, 1e-12);
    EXPECT_NEAR(participation_ratio(U.col(3)), 1.0, 1e-15);
}

TEST(SupNorm, GueLogNOverN) {
    std::vector<double> c;
    for (int N : {64, 256}) {
        ModelSpec spec(ModelKind::GUE, TorusLattice(1, N, 1), 0.0, 2);
        double acc = 0.0;
        const int reps = 4;
        for (int r = 0; r < reps; ++r) {
            SupNormStats s = sup_norm_stats(eigh(assemble(spec, r).H), 0.1, &spec);
            EXPECT_GE(s.max, 1.0 / N);
            for (double v : s.per_k) EXPECT_GE(v, 1.0 / N);
            acc += s.max;
        }
        c.push_back(acc / reps * N / std::log(N));
    }
    EXPECT_GT(c[1] / c[0], 0.5);
    EXPECT_LT(c[1] / c[0], 2.0);
}

TEST(Que, FlatAndBasis) {
    TorusLattice lat(1, 1, 6);
    Mat F = Mat::Constant(6, 1, cd(1.0 / std::sqrt(6.0), 0.0));
    QueFlatness q = que_flatness({Eigen::VectorXd::Zero(1), F, 0.0}, lat, 1, 0.1);
    EXPECT_NEAR(q.max, 0.0, 1e-14);
    Mat U = Mat::Identity(6, 6);
    QueFlatness b = que_flatness({Eigen::VectorXd::Zero(6), U, 0.0}, lat, 1, 0.1);
    for (double v : b.scores) EXPECT_NEAR(v, 5.0, 1e-14);
    EXPECT_EQ(b.frac_above_eps, 1.0);
    // one box covering everything averages to zero
    QueFlatness all = que_flatness({Eigen::VectorXd::Zero(6), U, 0.0}, lat, 6, 0.1);
    EXPECT_NEAR(all.max, 0.0, 1e-14);
    EXPECT_THROW(box_cover(lat, 7), std::invalid_argument);
}

TEST(Que, RaggedCover) {
    TorusLattice lat(2, 2, 5);
    int nb = 0;
    auto box = box_cover(lat, 2, &nb);
    EXPECT_EQ(nb, 9);
    std::vector<int> cnt(nb, 0);
    for (int b : box) ++cnt[b];
    int full = 0;
    for (int c : cnt) full += (c == 16);
    EXPECT_EQ(full, 4);
}

TEST(FlatnessMask, TraceZeroAndBlockConstant) {
    TorusLattice lat(2, 3, 4);
    Eigen::VectorXd pi = flatness_mask(lat, {0, 5, 6});
    EXPECT_NEAR(pi.sum(), 0.0, 1e-12);
    for (int x = 0; x < lat.N(); ++x) EXPECT_EQ(pi(x), pi(lat.block_members(lat.block_index(x))[0]));
    EXPECT_THROW(flatness_mask(lat, {}), std::invalid_argument);
}

TEST(TraceBound, ZeroMask) {
    std::mt19937_64 eng(1);
    Mat H = random_hermitian(10, 0.1, eng);
    cd z(0.1, 0.2);
    TraceBound t = que_trace_bound_check(resolvent(H, z).G, z, Eigen::VectorXd::Zero(10), 0.5, eigh(H));
    EXPECT_EQ(t.lhs, 0.0);
    EXPECT_EQ(t.rhs, 0.0);
    EXPECT_EQ(t.slack, 0.0);
    EXPECT_TRUE(t.pass);
}

TEST(TraceBound, TwoByTwoHandCase) {
    // Im G = I at z = 0.5 + 0.5i, both eigenvalues inside the window:
    // lhs = 1 + 1, rhs = 4 l^4 / eta^2 * tr(Pi^2) = 2 at l = 0.5.
    Mat H = Mat::Zero(2, 2);
    H(1, 1) = 1.0;
    cd z(0.5, 0.5);
    Eigen::VectorXd pi(2);
    pi << 1, -1;
    TraceBound t = que_trace_bound_check(resolvent(H, z).G, z, pi, 0.5, eigh(H));
    EXPECT_NEAR(t.lhs, 2.0, 1e-14);
    EXPECT_NEAR(t.rhs, 2.0, 1e-14);
    EXPECT_TRUE(t.pass);
    EXPECT_THROW(que_trace_bound_check(resolvent(H, z).G, z, pi, 0.4, eigh(H)), std::domain_error);
}

TEST(TraceBound, RandomRealizations) {
    TorusLattice lat(1, 5, 10);
    Eigen::VectorXd pi = flatness_mask(lat, {0, 1, 2, 3, 4});
    std::mt19937_64 eng(77);
    int pass = 0;
    for (int r = 0; r < 100; ++r) {
        Mat H = random_hermitian(50, 1.0 / 50, eng);
        cd z(-0.3 + 0.006 * r, 0.05);
        pass += que_trace_bound_check(resolvent(H, z).G, z, pi, 0.2, eigh(H)).pass;
    }
    EXPECT_EQ(pass, 100);
}

TEST(FracMoment, DecoupledBlocks) {
    ModelSpec spec(ModelKind::WegnerOrbital, TorusLattice(1, 3, 6), 0.0, 1);
    FracMoment f = frac_moment_decay(spec, 0.2, 0.5, 5, 1);
    EXPECT_TRUE(f.neg_inf);
    EXPECT_TRUE(std::isinf(f.slope) && f.slope < 0);
    EXPECT_GT(f.mean[0], 0.0);
    EXPECT_EQ(f.mean[1], 0.0);
}

TEST(FracMoment, StrongLocalizationAndTrend) {
    // Lambda_Psi = 2 for WO d = 1, W = 4
    std::vector<double> slopes;
    for (double lam : {0.025, 0.2}) {
        ModelSpec spec(ModelKind::WegnerOrbital, TorusLattice(1, 4, 8), lam, 5);
        FracMoment f = frac_moment_decay(spec, 0.2, 0.5, 100, 2);
        EXPECT_EQ(f.n_failed, 0u);
        EXPECT_LE(f.ci_lo, f.slope);
        EXPECT_GE(f.ci_hi, f.slope);
        slopes.push_back(f.slope);
    }
    EXPECT_LE(slopes[0], -0.5);
    EXPECT_GT(slopes[1], slopes[0]);
}

TEST(Scan, SinglePointMatchesComponents) {
    ScanRequest req;
    req.base = ModelSpec(ModelKind::AndersonOrbital, TorusLattice(1, 4, 3), 0.0, 6);
    req.lambdas = {0.4};
    req.n_samples = 5;
    req.ell = 1;
    auto rows = transition_scan(req);
    ASSERT_EQ(rows.size(), 1u);
    ModelSpec spec = req.base;
    spec.lambda = 0.4;
    double pr = 0.0, sup = 0.0, q = 0.0;
    for (int i = 0; i < 5; ++i) {
        SpectrumSample sp = eigh(assemble(spec, i).H);
        auto idx = bulk_indices(sp.evals, req.kappa);
        double p = 0.0;
        for (int k : idx) p += participation_ratio(sp.evecs.col(k));
        pr += p / idx.size();
        sup += sup_norm_stats(sp, req.kappa).mean;
        q += que_flatness(sp, spec.lat, 1, req.kappa).mean;
    }
    EXPECT_NEAR(rows[0].mean_pr, pr / 5, 1e-10);
    EXPECT_NEAR(rows[0].mean_sup, sup / 5, 1e-12);
    EXPECT_NEAR(rows[0].que_mean, q / 5, 1e-10);
    EXPECT_GE(rows[0].mean_pr, 1.0);
    EXPECT_LE(rows[0].mean_pr, spec.lat.N());
    EXPECT_TRUE(std::isnan(rows[0].frac_slope));
    EXPECT_THROW(transition_scan(ScanRequest{}), std::invalid_argument);
}

TEST(Scan, DecoupledParticipationMatchesSmallGue) {
    const int W = 8;
    ScanRequest req;
    req.base = ModelSpec(ModelKind::WegnerOrbital, TorusLattice(1, W, 4), 0.0, 13);
    req.lambdas = {0.0};
    req.n_samples = 60;
    double pr_scan = transition_scan(req)[0].mean_pr;
    // direct W x W GUE with unit row variance
    std::mt19937_64 eng(99);
    double acc = 0.0;
    int cnt = 0;
    for (int r = 0; r < 400; ++r) {
        SpectrumSample sp = eigh(random_hermitian(W, 1.0 / W, eng));
        auto idx = bulk_indices(sp.evals, req.kappa);
        if (idx.empty()) continue;
        double p = 0.0;
        for (int k : idx) p += participation_ratio(sp.evecs.col(k));
        acc += p / idx.size();
        ++cnt;
    }
    double pr_gue = acc / cnt;
    EXPECT_NEAR(pr_scan / pr_gue, 1.0, 0.2);
}

TEST(Scan, QueAndPrTrendAcrossTransition) {
    ScanRequest req;
    req.base = ModelSpec(ModelKind::WegnerOrbital, TorusLattice(1, 4, 8), 0.0, 3);
    req.lambdas = {0.05, 1.0};
    req.n_samples = 30;
    auto rows = transition_scan(req);
    EXPECT_GT(rows[1].mean_pr - 3 * rows[1].pr_stderr, rows[0].mean_pr + 3 * rows[0].pr_stderr);
    EXPECT_LT(rows[1].que_mean + 3 * rows[1].que_stderr, rows[0].que_mean - 3 * rows[0].que_stderr);
}
