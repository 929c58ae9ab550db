#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "rbso/mfield.hpp"

using namespace rbso;

namespace {

Mat dense_psi(const ModelSpec& spec) { return Mat(interaction_sparse(spec)); }

// Site-level S from its definition, independent of the block code.
Mat dense_S(const ModelSpec& spec) {
    const auto& lat = spec.lat;
    const double Wd = lat.block_volume();
    Mat S = Mat::Zero(lat.N(), lat.N());
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.N(); ++j) {
            int r = lat.block_dist(lat.block_index(i), lat.block_index(j));
            if (r == 0) S(i, j) = 1.0 / Wd;
            if (r == 1 && spec.kind == ModelKind::WegnerOrbital) {
                // neighbouring blocks; for n = 2 both directions give the same block
                S(i, j) = spec.lambda * spec.lambda / Wd;
            }
        }
    return S;
}

double max_abs(const Mat& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }
double max_abs_diff(const Mat& a, const Mat& b) { return max_abs(a - b); }

}  // namespace

TEST(Msc, Examples) {
    EXPECT_NEAR(std::abs(msc(cd(0.0, 0.0)) - cd(0.0, 1.0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(msc(cd(0.0, 1.0)) - cd(0.0, (std::sqrt(5.0) - 1) / 2)), 0.0, 1e-15);
    EXPECT_THROW(msc_bulk(2.5), std::domain_error);
}

TEST(Msc, QuadraticResidualAndBranch) {
    for (double E = -3; E <= 3; E += 0.25)
        for (double eta : {1e-6, 1e-2, 0.5, 3.0}) {
            cd z(E, eta), m = msc(z);
            EXPECT_LT(std::abs(m * m + z * m + 1.0), 1e-14);
            EXPECT_GT(m.imag(), 0.0);
            EXPECT_LE(std::abs(m), 1.0 + 1e-12);
        }
}

TEST(SolveM, ZeroCouplingIsSemicircle) {
    cd z(0.4, 0.3);
    for (ModelKind k : {ModelKind::BlockAnderson, ModelKind::AndersonOrbital, ModelKind::WegnerOrbital}) {
        StieltjesM s = solve_m(ModelSpec(k, TorusLattice(1, 3, 5), 0.0), z);
        EXPECT_LT(std::abs(s.m - msc(z)), 1e-13) << to_string(k);
    }
}

TEST(SolveM, WegnerOrbitalClosedForm) {
    ModelSpec spec(ModelKind::WegnerOrbital, TorusLattice(1, 4, 5), 0.5);
    cd z(0.0, 1.0);
    cd want = msc(z / std::sqrt(1.5)) / std::sqrt(1.5);
    EXPECT_LT(std::abs(solve_m(spec, z).m - want), 1e-14);
}

TEST(SolveM, BlockAndersonAgainstDenseSpectrum) {
    ModelSpec spec(ModelKind::BlockAnderson, TorusLattice(1, 3, 3), 0.1);
    cd z(0.5, 0.1);
    StieltjesM s = solve_m(spec, z);
    // oracle: eigenvalues of lambda Psi by dense diagonalization, damped iteration
    Eigen::SelfAdjointEigenSolver<Mat> es(spec.lambda * dense_psi(spec));
    auto f = [&](cd m) {
        cd acc = 0.0;
        for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) acc += 1.0 / (es.eigenvalues()(k) - z - m);
        return acc / static_cast<double>(es.eigenvalues().size());
    };
    cd m = msc(z);
    for (int it = 0; it < 5000; ++it) m = 0.5 * m + 0.5 * f(m);
    EXPECT_LT(std::abs(f(s.m) - s.m), 1e-12);
    EXPECT_LT(std::abs(s.m - m), 1e-12);
    // frozen from an independent numpy run
    EXPECT_LT(std::abs(s.m - cd(-0.23252226797027872, 0.9116035679292759)), 1e-12);
    EXPECT_GT(s.m.imag(), 0.0);
    EXPECT_LE(s.residual, 1e-12);
}

TEST(SolveM, AndersonOrbitalFrozen) {
    ModelSpec spec(ModelKind::AndersonOrbital, TorusLattice(1, 2, 5), 0.2);
    EXPECT_LT(std::abs(solve_m(spec, cd(0.3, 0.2)).m - cd(-0.12476833470458479, 0.8635231596508629)), 1e-12);
}

TEST(BuildM, WegnerOrbitalIsScalar) {
    ModelSpec spec(ModelKind::WegnerOrbital, TorusLattice(1, 3, 3), 0.3);
    cd z(0.1, 0.2), m = solve_m(spec, z).m;
    EXPECT_EQ(max_abs_diff(build_M(spec, z, m), m * Mat::Identity(9, 9)), 0.0);
}

TEST(BuildM, MatchesDenseInverse) {
    for (ModelKind k : {ModelKind::BlockAnderson, ModelKind::AndersonOrbital})
        for (int d : {1, 2}) {
            ModelSpec spec(k, TorusLattice(d, 3, 3), 0.2);
            cd z(-0.4, 0.05), m = solve_m(spec, z).m;
            const int N = spec.lat.N();
            Mat ref = (spec.lambda * dense_psi(spec) - (z + m) * Mat::Identity(N, N)).inverse();
            Mat M = build_M(spec, z, m);
            EXPECT_LT(max_abs_diff(M, ref), 1e-12) << to_string(k) << " d=" << d;
            for (int x = 0; x < N; ++x) EXPECT_LT(std::abs(M(x, x) - m), 1e-11);
            KernelSet ks = build_kernels(spec, z, m);
            EXPECT_LT(max_abs_diff(ks.M_full(), ref), 1e-12);
        }
}

TEST(Variance, RowSumsAndIdempotence) {
    for (ModelKind k : {ModelKind::BlockAnderson, ModelKind::AndersonOrbital, ModelKind::WegnerOrbital}) {
        ModelSpec spec(k, TorusLattice(2, 2, 4), 0.3);
        Mat S = variance_matrix(spec);
        EXPECT_LT(max_abs_diff(S, dense_S(spec)), 1e-15);
        double want = k == ModelKind::WegnerOrbital ? 1 + 4 * 0.09 : 1.0;
        for (int x = 0; x < spec.lat.N(); ++x) EXPECT_NEAR(S.row(x).sum().real(), want, 1e-14);
    }
    ModelSpec s0(ModelKind::BlockAnderson, TorusLattice(1, 3, 3), 0.0);
    Mat S0 = variance_matrix(s0);
    EXPECT_LT(max_abs_diff(S0 * S0, S0), 1e-15);
}

TEST(Splus, WegnerOrbitalZeroCoupling) {
    ModelSpec spec(ModelKind::WegnerOrbital, TorusLattice(1, 3, 4), 0.0);
    cd z(0.2, 0.1);
    KernelSet ks = build_kernels(spec, z);
    cd m = msc(z);
    Mat want = variance_matrix(spec) / (1.0 - m * m);
    EXPECT_LT(max_abs_diff(ks.site(ks.Splus_blk), want), 1e-13);
    EXPECT_EQ(max_abs_diff(ks.Sminus_blk, ks.Splus_blk.adjoint()), 0.0);
}

TEST(Splus, DecayFit) {
    for (ModelKind k : {ModelKind::BlockAnderson, ModelKind::AndersonOrbital}) {
        KernelSet ks = build_kernels(ModelSpec(k, TorusLattice(1, 3, 9), 0.1), cd(0.3, 0.01));
        DecayFit f = fit_splus_decay(ks);
        EXPECT_GT(f.rate, 0.0);
        EXPECT_GT(f.C, 0.0);
        const auto& lat = ks.lat();
        for (int i = 0; i < lat.N(); ++i) {
            double v = std::abs(ks.Splus_blk(lat.block_index(i), 0)) / lat.block_volume();
            EXPECT_LE(v, f.C / lat.block_volume() * std::exp(-lat.dist_l1(i, 0) / (f.C * lat.W())) * (1 + 1e-12));
        }
    }
}

TEST(MDecay, FittedConstant) {
    for (double lam : {0.05, 0.1, 0.2})
        for (ModelKind k : {ModelKind::BlockAnderson, ModelKind::AndersonOrbital}) {
            KernelSet ks = build_kernels(ModelSpec(k, TorusLattice(1, 4, 6), lam), cd(0.5, 0.01));
            DecayFit f = fit_M_decay(ks);
            EXPECT_LE(f.C, 10.0);
            // BA decays in site distance, AO in block distance
            const auto& lat = ks.lat();
            for (int x = 1; x < lat.N(); ++x) {
                int r = k == ModelKind::BlockAnderson ? lat.dist_l1(x, 0) : lat.block_dist(lat.block_index(x), 0);
                if (r > 0) EXPECT_LE(std::abs(ks.M(x, 0)), std::pow(f.C * lam, r) * (1 + 1e-12));
            }
        }
}

TEST(Theta, DenseSiteOracle) {
    for (ModelKind k : {ModelKind::BlockAnderson, ModelKind::AndersonOrbital, ModelKind::WegnerOrbital})
        for (int d : {1, 2}) {
            ModelSpec spec(k, TorusLattice(d, 2, 3), 0.3);
            cd z(0.25, 0.15);
            KernelSet ks = build_kernels(spec, z);
            const int N = spec.lat.N();
            Mat M = build_M(spec, z, ks.m);
            Mat M0 = M.cwiseAbs2().cast<cd>();
            Mat S = dense_S(spec);
            Mat I = Mat::Identity(N, N);
            Mat th = S * (I - M0 * S).inverse();
            Mat P = I - Mat::Constant(N, N, cd(1.0 / N));
            EXPECT_LT(max_abs_diff(ks.site(ks.theta_blk), th), 1e-11) << to_string(k) << " d=" << d;
            EXPECT_LT(max_abs_diff(ks.site(ks.theta_ring_blk), P * th * P), 1e-11) << to_string(k) << " d=" << d;
            Mat Mp = M.cwiseProduct(M);
            EXPECT_LT(max_abs_diff(ks.site(ks.Splus_blk), S * (I - Mp * S).inverse()), 1e-11);
        }
}

TEST(Theta, ZeroModeWegnerOrbital) {
    ModelSpec spec(ModelKind::WegnerOrbital, TorusLattice(1, 3, 5), 0.4);
    cd z(0.3, 0.2);
    KernelSet ks = build_kernels(spec, z);
    const double s = 1 + 2 * 0.16, am2 = std::norm(ks.m);
    const double want = s / (1 - s * am2) / spec.lat.N();
    Mat diff = (ks.theta_blk - ks.theta_ring_blk) / spec.lat.block_volume();
    EXPECT_LT((diff.array() - cd(want)).abs().maxCoeff(), 1e-13);
    EXPECT_NEAR(ks.zero_mode_constant(), want, 1e-13);
}

TEST(Theta, GueIsFlat) {
    ModelSpec spec(ModelKind::GUE, TorusLattice(1, 10, 1), 0.0);
    cd z(0.1, 0.3);
    KernelSet ks = build_kernels(spec, z);
    const double want = 1.0 / (10 * (1 - std::norm(msc(z))));
    EXPECT_NEAR(std::abs(ks.theta_blk(0, 0) / 10.0 - want), 0.0, 1e-14);
    EXPECT_EQ(ks.theta_ring_blk(0, 0), cd(0.0));
}

TEST(Theta, M0RowSum) {
    for (ModelKind k : {ModelKind::BlockAnderson, ModelKind::AndersonOrbital}) {
        ModelSpec spec(k, TorusLattice(1, 3, 5), 0.2);
        for (cd z : {cd(0.0, 0.1), cd(-1.0, 0.01), cd(1.5, 0.001)}) {
            KernelSet ks = build_kernels(spec, z);
            double im = ks.m.imag();
            EXPECT_NEAR(ks.m0_row_sum(), im / (im + z.imag()), 1e-10);
        }
    }
}

TEST(Theta, FourierMatchesDirect) {
    for (ModelKind k : {ModelKind::BlockAnderson, ModelKind::AndersonOrbital, ModelKind::WegnerOrbital})
        for (int d : {1, 2})
            for (int n : {2, 3, 4, 5}) {
                KernelSet ks = build_kernels(ModelSpec(k, TorusLattice(d, 3, n), 0.25), cd(-0.6, 0.07));
                EXPECT_LT(max_abs(theta_fourier(ks) - ks.theta_ring_blk), 1e-9) << to_string(k) << d << n;
            }
}

TEST(Theta, SingleBlockProjectsToZero) {
    KernelSet ks = build_kernels(ModelSpec(ModelKind::WegnerOrbital, TorusLattice(2, 3, 1), 0.2), cd(0.0, 0.5));
    EXPECT_EQ(max_abs(ks.theta_ring_blk), 0.0);
    EXPECT_EQ(max_abs(theta_fourier(ks)), 0.0);
}

TEST(Theta, LaplacianSymbol) {
    // 2d - e(p) at p = pi in d = 1
    EXPECT_NEAR(2.0 - adjacency_symbol({M_PI}, 7), 4.0, 1e-15);
}

TEST(Theta, RealAxisHasNoTheta) {
    KernelSet ks = build_kernels(ModelSpec(ModelKind::WegnerOrbital, TorusLattice(1, 3, 5), 0.2), cd(0.3, 0.0));
    EXPECT_FALSE(ks.has_theta);
    EXPECT_THROW(diffusive_theta(ks), zero_mode_error);
}

TEST(ThetaRenormalized, Series) {
    KernelSet ks = build_kernels(ModelSpec(ModelKind::WegnerOrbital, TorusLattice(1, 3, 6), 0.3), cd(0.2, 0.3));
    const Mat& tr = ks.theta_ring_blk;
    const int nb = static_cast<int>(tr.rows());
    EXPECT_LT(max_abs(theta_renormalized(tr, Mat::Zero(nb, nb)) - tr), 1e-15);
    Mat E = Mat::Zero(nb, nb);
    for (int i = 0; i < nb; ++i) E(i, (i + 1) % nb) = E((i + 1) % nb, i) = 0.05;
    Mat X = tr * E;
    double rho = spectral_radius(X);
    ASSERT_LT(rho, 1.0);
    Mat sum = tr, term = tr;
    const int K = 40;
    for (int k = 1; k <= K; ++k) {
        term = X * term;
        sum += term;
    }
    double tail = max_abs(tr) * std::pow(rho, K + 1) / (1 - rho) * nb;
    EXPECT_LT(max_abs(theta_renormalized(tr, E) - sum), tail + 1e-12);
    // commuting case: E = c P_perp
    const double c = 0.1;
    Mat Pp = Mat::Identity(nb, nb) - flat_projector(nb);
    Mat want = (Mat::Identity(nb, nb) - c * tr).inverse() * tr;
    EXPECT_LT(max_abs(theta_renormalized(tr, c * Pp) - want), 1e-12);
}

TEST(BKernel, Examples) {
    EXPECT_NEAR(b_kernel(4.0, 2, 3, 10.0), 0.1, 1e-15);
    EXPECT_NEAR(b_kernel(4.0, 2, 3, 2.0), 4.0 / 8.0, 1e-15);
    EXPECT_THROW(b_kernel(1.0, 2, 2, 3.0), use_exact_kernel);
}

TEST(BKernel, ThetaRingBound) {
    // |theta_ring_xy| <= C B_xy log L with a moderate constant
    ModelSpec spec(ModelKind::WegnerOrbital, TorusLattice(3, 2, 5), 0.5);
    KernelSet ks = build_kernels(spec, cd(0.1, 0.02));
    const auto& lat = spec.lat;
    const double beta = scale_params(spec).beta;
    double C = 0.0;
    for (int x = 0; x < lat.N(); ++x) {
        double th = std::abs(ks.theta_ring_blk(lat.block_index(x), lat.block_index(0))) / lat.block_volume();
        C = std::max(C, th / (b_kernel(beta, lat.W(), lat.d(), lat.bracket(x, 0)) * std::log(lat.L())));
    }
    EXPECT_LE(C, 10.0);
}

TEST(Dft, RoundTrip) {
    std::vector<cd> v = {1.0, cd(0, 2), -3.0, 0.5, cd(1, 1), 2.0};
    auto f = dft(dft(v, 6, 1, -1), 6, 1, +1);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LT(std::abs(f[i] / 6.0 - v[i]), 1e-14);
}
