#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace rbso {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { V = 0x56, Psi = 0x50 };

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, Stream tag) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ index);
    return splitmix64(h ^ static_cast<std::uint64_t>(tag));
}

using Engine = std::mt19937_64;

inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    std::size_t h = v.size() / 2;
    return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

class EnsembleAccumulator {
public:
    EnsembleAccumulator() = default;
    explicit EnsembleAccumulator(std::string name) : name_(std::move(name)) {}

    // Deterministic path: full sample in index order, pairwise reductions.
    static EnsembleAccumulator from_samples(std::string name, std::span<const double> v) {
        EnsembleAccumulator a(std::move(name));
        a.count_ = v.size();
        if (v.empty()) return a;
        a.mean_ = pairwise_sum(v) / static_cast<double>(v.size());
        std::vector<double> dev(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) dev[i] = (v[i] - a.mean_) * (v[i] - a.mean_);
        a.m2_ = pairwise_sum(dev);
        return a;
    }

    void add(double x) {
        ++count_;
        double delta = x - mean_;
        mean_ += delta / static_cast<double>(count_);
        m2_ += delta * (x - mean_);
    }

    void merge(const EnsembleAccumulator& o) {
        if (o.count_ == 0) return;
        if (count_ == 0) {
            count_ = o.count_;
            mean_ = o.mean_;
            m2_ = o.m2_;
            return;
        }
        double n1 = static_cast<double>(count_), n2 = static_cast<double>(o.count_);
        double delta = o.mean_ - mean_;
        mean_ += delta * n2 / (n1 + n2);
        m2_ += o.m2_ + delta * delta * n1 * n2 / (n1 + n2);
        count_ += o.count_;
    }

    const std::string& name() const { return name_; }
    std::size_t count() const { return count_; }
    double mean() const { return mean_; }
    double variance() const { return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0; }
    double std_error() const {
        return count_ > 0 ? std::sqrt(variance() / static_cast<double>(count_)) : 0.0;
    }

private:
    std::string name_;
    std::size_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct EnsembleResult {
    std::vector<EnsembleAccumulator> stats;
    std::vector<std::vector<double>> samples;  // [component][sample], failed samples dropped
    std::size_t n_requested = 0;
    std::size_t n_failed = 0;
    std::vector<std::size_t> failed_indices;
};

// Runs f(index) for index in [0, n) on `workers` threads. Each call returns a fixed-length
// vector of components. Results are stored per index and reduced in index order, so the
// outcome does not depend on the worker count.
inline EnsembleResult parallel_ensemble(std::size_t n, int workers,
                                        const std::function<std::vector<double>(std::size_t)>& f,
                                        const std::vector<std::string>& names) {
    std::vector<std::vector<double>> per(n);
    std::vector<char> ok(n, 0);
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                per[i] = f(i);
                ok[i] = per[i].size() == names.size() ? 1 : 0;
            } catch (const std::exception&) {
                ok[i] = 0;
            }
        }
    };
    workers = std::max(1, workers);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    EnsembleResult r;
    r.n_requested = n;
    r.samples.assign(names.size(), {});
    for (std::size_t i = 0; i < n; ++i) {
        if (!ok[i]) {
            ++r.n_failed;
            r.failed_indices.push_back(i);
            continue;
        }
        for (std::size_t c = 0; c < names.size(); ++c) r.samples[c].push_back(per[i][c]);
    }
    for (std::size_t c = 0; c < names.size(); ++c)
        r.stats.push_back(EnsembleAccumulator::from_samples(names[c], r.samples[c]));
    return r;
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
};

inline LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
    std::size_t n = x.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    LinearFit f;
    f.slope = sxx > 0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
    f.intercept = my - f.slope * mx;
    return f;
}

}  // namespace rbso
