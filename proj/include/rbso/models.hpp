#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include "rbso/lattice.hpp"
#include "rbso/stats.hpp"

namespace rbso {

using cd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

enum class ModelKind : std::uint8_t { BlockAnderson = 0, AndersonOrbital = 1, WegnerOrbital = 2, GUE = 3 };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::BlockAnderson: return "BA";
        case ModelKind::AndersonOrbital: return "AO";
        case ModelKind::WegnerOrbital: return "WO";
        case ModelKind::GUE: return "GUE";
    }
    return "?";
}

inline ModelKind parse_kind(const std::string& s) {
    if (s == "BA" || s == "block_anderson") return ModelKind::BlockAnderson;
    if (s == "AO" || s == "anderson_orbital") return ModelKind::AndersonOrbital;
    if (s == "WO" || s == "wegner_orbital") return ModelKind::WegnerOrbital;
    if (s == "GUE" || s == "gue") return ModelKind::GUE;
    throw std::invalid_argument("unknown model kind: " + s);
}

struct ModelSpec {
    ModelKind kind = ModelKind::WegnerOrbital;
    TorusLattice lat{1, 1, 1};
    double lambda = 0.0;
    std::optional<double> xi;
    std::uint64_t seed = 0;

    ModelSpec() = default;
    ModelSpec(ModelKind k, TorusLattice l, double lam, std::uint64_t s = 0)
        : kind(k), lat(std::move(l)), lambda(lam), seed(s) {
        if (kind == ModelKind::GUE) lat = TorusLattice(lat.d(), lat.L(), 1);
        if (!(lambda >= 0.0)) throw std::invalid_argument("ModelSpec: lambda must be >= 0");
    }
    static ModelSpec from_xi(ModelKind k, TorusLattice l, double xi_, std::uint64_t s = 0) {
        ModelSpec m(k, l, std::pow(static_cast<double>(l.W()), -xi_), s);
        m.xi = xi_;
        return m;
    }

    // Total row sum of the variance profile of lambda*Psi + V.
    double variance_row_sum() const {
        if (kind == ModelKind::WegnerOrbital) return 1.0 + lat.block_degree() * lambda * lambda;
        return 1.0;
    }
};

struct HamiltonianSample {
    Mat H;
    ModelSpec spec;
    std::uint64_t sample_index = 0;
    std::uint64_t realized_seed = 0;
};

namespace detail {

// Writes a GUE block with E|v|^2 = var on the sites `idx`.
inline void fill_gue_block(Mat& V, const std::vector<int>& idx, double var, Engine& eng) {
    std::normal_distribution<double> diag(0.0, std::sqrt(var));
    std::normal_distribution<double> off(0.0, std::sqrt(var / 2.0));
    const int k = static_cast<int>(idx.size());
    for (int a = 0; a < k; ++a) {
        V(idx[a], idx[a]) = cd(diag(eng), 0.0);
        for (int b = a + 1; b < k; ++b) {
            double re = off(eng);
            double im = off(eng);
            V(idx[a], idx[b]) = cd(re, im);
            V(idx[b], idx[a]) = cd(re, -im);
        }
    }
}

}  // namespace detail

inline Mat sample_potential(const ModelSpec& spec, std::uint64_t sample_index) {
    const auto& lat = spec.lat;
    Mat V = Mat::Zero(lat.N(), lat.N());
    Engine eng(stream_seed(spec.seed, sample_index, Stream::V));
    double var = 1.0 / lat.block_volume();
    for (int b = 0; b < lat.num_blocks(); ++b) detail::fill_gue_block(V, lat.block_members(b), var, eng);
    return V;
}

// Deterministic part of Psi (BA, AO) as a sparse matrix.
inline Eigen::SparseMatrix<cd> interaction_sparse(const ModelSpec& spec) {
    const auto& lat = spec.lat;
    std::vector<Eigen::Triplet<cd>> trip;
    if (spec.kind == ModelKind::BlockAnderson) {
        for (int i = 0; i < lat.N(); ++i)
            for (int j : lat.site_neighbors(i)) trip.emplace_back(i, j, cd(1.0, 0.0));
    } else if (spec.kind == ModelKind::AndersonOrbital) {
        for (int b = 0; b < lat.num_blocks(); ++b)
            for (int c : lat.block_neighbors(b)) {
                const auto& rb = lat.block_members(b);
                const auto& rc = lat.block_members(c);
                for (int i : rb)
                    for (int j : rc)
                        if (lat.intra_offset(i) == lat.intra_offset(j)) trip.emplace_back(i, j, cd(1.0, 0.0));
            }
    } else {
        throw std::invalid_argument("interaction_sparse: only BA and AO have a deterministic Psi");
    }
    Eigen::SparseMatrix<cd> P(lat.N(), lat.N());
    P.setFromTriplets(trip.begin(), trip.end());
    return P;
}

inline Mat build_interaction(const ModelSpec& spec, std::uint64_t sample_index) {
    const auto& lat = spec.lat;
    switch (spec.kind) {
        case ModelKind::BlockAnderson:
        case ModelKind::AndersonOrbital:
            return Mat(interaction_sparse(spec));
        case ModelKind::GUE:
            return Mat::Zero(lat.N(), lat.N());
        case ModelKind::WegnerOrbital: break;
    }
    Mat P = Mat::Zero(lat.N(), lat.N());
    Engine eng(stream_seed(spec.seed, sample_index, Stream::Psi));
    std::normal_distribution<double> g(0.0, std::sqrt(0.5 / lat.block_volume()));
    for (int b = 0; b < lat.num_blocks(); ++b) {
        for (int c : lat.block_neighbors(b)) {
            if (c <= b) continue;
            const auto& rb = lat.block_members(b);
            const auto& rc = lat.block_members(c);
            for (int i : rb)
                for (int j : rc) {
                    double re = g(eng);
                    double im = g(eng);
                    P(i, j) = cd(re, im);
                    P(j, i) = cd(re, -im);
                }
        }
    }
    return P;
}

inline HamiltonianSample assemble(const ModelSpec& spec, std::uint64_t sample_index) {
    HamiltonianSample s;
    s.spec = spec;
    s.sample_index = sample_index;
    s.realized_seed = stream_seed(spec.seed, sample_index, Stream::V);
    s.H = sample_potential(spec, sample_index);
    if (spec.lambda != 0.0 && spec.kind != ModelKind::GUE) s.H += spec.lambda * build_interaction(spec, sample_index);
    return s;
}

struct ScaleParams {
    double Lambda_Psi = 0;
    double beta = 0;
    double h_lambda = 0;
    double eta_star = 0;
    double t_Th = 0;
    bool deloc_condition = false;
};

inline double interaction_strength(const ModelSpec& spec) {
    double W = spec.lat.W(), d = spec.lat.d();
    switch (spec.kind) {
        case ModelKind::BlockAnderson: return std::pow(W, (d - 1.0) / 2.0);
        case ModelKind::AndersonOrbital:
        case ModelKind::WegnerOrbital: return std::pow(W, d / 2.0);
        case ModelKind::GUE: break;
    }
    throw std::invalid_argument("interaction_strength: GUE has no interaction");
}

struct coupling_zero : std::domain_error {
    coupling_zero() : std::domain_error("coupling-zero: beta, eta_*, t_Th need lambda > 0") {}
};

inline ScaleParams scale_params(const ModelSpec& spec) {
    if (!(spec.lambda > 0.0)) throw coupling_zero();
    ScaleParams p;
    double W = spec.lat.W(), L = spec.lat.L(), d = spec.lat.d();
    double Wd = std::pow(W, d);
    p.Lambda_Psi = interaction_strength(spec);
    p.beta = Wd / (spec.lambda * spec.lambda * p.Lambda_Psi * p.Lambda_Psi);
    p.h_lambda = p.beta / Wd;
    p.eta_star = std::pow(W / L, d - 5.0) / p.beta;
    p.t_Th = p.beta * L * L / (W * W);
    p.deloc_condition = spec.lambda * p.Lambda_Psi >= std::pow(W, d / 4.0);
    return p;
}

// Binary dump: 32-byte header then N*N complex128 little-endian, row-major.
// Header: "RBSO" | u8 version | u8 kind | u8 d | u8 bytes-per-scalar | u32 W | u32 n | u64 seed | u64 index
struct DumpHeader {
    std::array<char, 4> magic{'R', 'B', 'S', 'O'};
    std::uint8_t version = 1;
    std::uint8_t kind = 0;
    std::uint8_t d = 1;
    std::uint8_t scalar_bytes = 16;
    std::uint32_t W = 1;
    std::uint32_t n = 1;
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
};
static_assert(sizeof(DumpHeader) == 32);

inline void dump_matrix(const std::string& path, const HamiltonianSample& s) {
    static_assert(std::endian::native == std::endian::little, "dump format assumes little-endian host");
    DumpHeader h;
    h.kind = static_cast<std::uint8_t>(s.spec.kind);
    h.d = static_cast<std::uint8_t>(s.spec.lat.d());
    h.W = static_cast<std::uint32_t>(s.spec.lat.W());
    h.n = static_cast<std::uint32_t>(s.spec.lat.n());
    h.seed = s.spec.seed;
    h.index = s.sample_index;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f.write(reinterpret_cast<const char*>(&h), sizeof h);
    const int N = static_cast<int>(s.H.rows());
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
            double v[2] = {s.H(i, j).real(), s.H(i, j).imag()};
            f.write(reinterpret_cast<const char*>(v), sizeof v);
        }
}

inline std::pair<DumpHeader, Mat> read_dump(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    DumpHeader h;
    f.read(reinterpret_cast<char*>(&h), sizeof h);
    if (std::memcmp(h.magic.data(), "RBSO", 4) != 0 || h.scalar_bytes != 16)
        throw std::runtime_error("bad dump header in " + path);
    std::int64_t N = ipow(static_cast<std::int64_t>(h.W) * h.n, h.d);
    Mat H(N, N);
    for (std::int64_t i = 0; i < N; ++i)
        for (std::int64_t j = 0; j < N; ++j) {
            double v[2];
            f.read(reinterpret_cast<char*>(v), sizeof v);
            H(i, j) = cd(v[0], v[1]);
        }
    if (!f) throw std::runtime_error("truncated dump " + path);
    return {h, H};
}

}  // namespace rbso
