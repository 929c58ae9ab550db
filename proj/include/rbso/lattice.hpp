#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace rbso {

using Coords = std::vector<int>;

inline int floor_div(int a, int b) {
    int q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline int mod_pos(int a, int L) {
    int r = a % L;
    return r < 0 ? r + L : r;
}

// Canonical window: [-(L-1)/2, (L-1)/2] for odd L, [-L/2, L/2-1] for even L.
inline int periodic_rep(int v, int L) {
    if (L < 1) throw std::invalid_argument("periodic_rep: L must be >= 1");
    int lo = -(L / 2);
    return lo + mod_pos(v - lo, L);
}

inline Coords periodic_rep(const Coords& v, int L) {
    Coords r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[i] = periodic_rep(v[i], L);
    return r;
}

inline std::int64_t ipow(std::int64_t b, int e) {
    std::int64_t r = 1;
    while (e-- > 0) r *= b;
    return r;
}

// Neighbors on Z_k are set-based: for k == 2 the two directions coincide,
// for k == 1 there are none.
inline int cycle_degree(int k) { return k >= 3 ? 2 : (k == 2 ? 1 : 0); }

class TorusLattice {
public:
    TorusLattice() = default;
    TorusLattice(int d, int W, int n) : d_(d), W_(W), n_(n) {
        if (d < 1 || W < 1 || n < 1)
            throw std::invalid_argument("TorusLattice: d, W, n must be positive");
        L_ = n * W;
        N_ = static_cast<int>(ipow(L_, d));
        nb_ = static_cast<int>(ipow(n, d));
        Wd_ = static_cast<int>(ipow(W, d));
        block_.resize(N_);
        offset_.resize(N_);
        members_.assign(nb_, {});
        for (int i = 0; i < N_; ++i) {
            Coords x = decode(i);
            Coords b(d_), o(d_);
            for (int k = 0; k < d_; ++k) {
                int u = x[k] + W_ / 2;
                int q = floor_div(u, W_);
                b[k] = q;
                o[k] = u - q * W_;
            }
            block_[i] = encode_block(b);
            int oi = 0;
            for (int k = 0; k < d_; ++k) oi = oi * W_ + o[k];
            offset_[i] = oi;
            members_[block_[i]].push_back(i);
        }
    }

    int d() const { return d_; }
    int W() const { return W_; }
    int n() const { return n_; }
    int L() const { return L_; }
    int N() const { return N_; }
    int num_blocks() const { return nb_; }
    int block_volume() const { return Wd_; }

    // Row-major over coordinates shifted to [0, L-1]; first coordinate is most significant.
    int encode(const Coords& x) const { return encode_on(x, L_); }
    Coords decode(int idx) const { return decode_on(idx, L_); }
    int encode_block(const Coords& b) const { return encode_on(b, n_); }
    Coords decode_block(int idx) const { return decode_on(idx, n_); }

    int dist_l1(const Coords& x, const Coords& y) const {
        int s = 0;
        for (int k = 0; k < d_; ++k) s += std::abs(periodic_rep(x[k] - y[k], L_));
        return s;
    }
    int dist_l1(int i, int j) const { return dist_l1(decode(i), decode(j)); }
    int bracket(const Coords& x, const Coords& y) const { return dist_l1(x, y) + W_; }
    int bracket(int i, int j) const { return dist_l1(i, j) + W_; }

    Coords block_of(const Coords& x) const {
        Coords b(d_);
        for (int k = 0; k < d_; ++k) b[k] = periodic_rep(floor_div(x[k] + W_ / 2, W_), n_);
        return b;
    }
    int block_index(int site) const { return block_[site]; }
    // Position inside the W-cube, encoded row-major on [0, W)^d.
    int intra_offset(int site) const { return offset_[site]; }
    const std::vector<int>& block_members(int b) const { return members_[b]; }

    int block_dist(int b1, int b2) const {
        Coords u = decode_block(b1), v = decode_block(b2);
        int s = 0;
        for (int k = 0; k < d_; ++k) s += std::abs(periodic_rep(u[k] - v[k], n_));
        return s;
    }
    // Block index of [b1] - [b2] on the block torus.
    int block_diff(int b1, int b2) const {
        Coords u = decode_block(b1), v = decode_block(b2);
        for (int k = 0; k < d_; ++k) u[k] -= v[k];
        return encode_block(u);
    }
    int site_diff(int i, int j) const {
        Coords u = decode(i), v = decode(j);
        for (int k = 0; k < d_; ++k) u[k] -= v[k];
        return encode(u);
    }

    std::vector<int> site_neighbors(int i) const { return neighbors_on(decode(i), L_); }
    std::vector<int> block_neighbors(int b) const { return neighbors_on(decode_block(b), n_); }
    int site_degree() const { return d_ * cycle_degree(L_); }
    int block_degree() const { return d_ * cycle_degree(n_); }

private:
    int encode_on(const Coords& x, int side) const {
        int idx = 0;
        for (int k = 0; k < d_; ++k) idx = idx * side + mod_pos(x[k], side);
        return idx;
    }
    Coords decode_on(int idx, int side) const {
        Coords x(d_);
        for (int k = d_ - 1; k >= 0; --k) {
            x[k] = periodic_rep(idx % side, side);
            idx /= side;
        }
        return x;
    }
    std::vector<int> neighbors_on(const Coords& x, int side) const {
        std::vector<int> out;
        int self = encode_on(x, side);
        for (int k = 0; k < d_; ++k) {
            for (int s : {1, -1}) {
                Coords y = x;
                y[k] += s;
                int j = encode_on(y, side);
                if (j == self) continue;
                bool seen = false;
                for (int v : out) seen = seen || v == j;
                if (!seen) out.push_back(j);
            }
        }
        return out;
    }

    int d_ = 1, W_ = 1, n_ = 1, L_ = 1, N_ = 1, nb_ = 1, Wd_ = 1;
    std::vector<int> block_;
    std::vector<int> offset_;
    std::vector<std::vector<int>> members_;
};

// Momenta (2pi/n) k with k canonical, ordered like decode_on(., n).
inline std::vector<std::vector<double>> fourier_grid(int n, int d) {
    if (n < 1 || d < 1) throw std::invalid_argument("fourier_grid: n, d must be positive");
    std::int64_t count = ipow(n, d);
    std::vector<std::vector<double>> out;
    out.reserve(count);
    for (std::int64_t idx = 0; idx < count; ++idx) {
        std::vector<double> p(d);
        std::int64_t r = idx;
        for (int k = d - 1; k >= 0; --k) {
            p[k] = 2.0 * std::numbers::pi * periodic_rep(static_cast<int>(r % n), n) / n;
            r /= n;
        }
        out.push_back(std::move(p));
    }
    return out;
}

// Eigenvalue of the (set-based) adjacency of Z_side^d at momentum p.
inline double adjacency_symbol(const std::vector<double>& p, int side) {
    double w = cycle_degree(side);
    double s = 0.0;
    for (double pk : p) s += w * std::cos(pk);
    return w == 0.0 ? 0.0 : s;
}

}  // namespace rbso
