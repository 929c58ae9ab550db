#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rbso/config.hpp"
#include "rbso/greens.hpp"
#include "rbso/mfield.hpp"
#include "rbso/renorm.hpp"
#include "rbso/spectra.hpp"

namespace rbso {

using json = nlohmann::json;

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline int exit_code(Verdict v) {
    switch (v) {
        case Verdict::Pass: return 0;
        case Verdict::Fail: return 2;
        case Verdict::Inconclusive: return 3;
    }
    return 1;
}

inline std::string csv_num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return detail::fmt(v);
}

// Collects one command's artifacts and writes them under the output directory:
// <cmd>.jsonl (records), <cmd>_<table>.csv, <cmd>_verdict.json.
class Sink {
public:
    Sink(const RunConfig& c, std::string cmd) : cfg_(c), cmd_(std::move(cmd)), hash_(config_hash(c)) {}

    json base_params() const {
        return {{"kind", cfg_.kind}, {"d", cfg_.d},     {"W", cfg_.W},    {"n", cfg_.n},
                {"lambda", cfg_.model().lambda},        {"E", cfg_.E},    {"eta", cfg_.eta}};
    }

    void record(const std::string& observable, json params, double mean, double se, std::size_t n) {
        records_.push_back({{"observable", observable},
                            {"params", std::move(params)},
                            {"mean", mean},
                            {"stderr", se},
                            {"n", n},
                            {"seed", cfg_.seed},
                            {"config_hash", hash_},
                            {"version", version()}});
    }

    void table(const std::string& name, std::vector<std::string> header, std::vector<std::vector<std::string>> rows) {
        tables_.push_back({name, std::move(header), std::move(rows)});
    }

    json verdict_json(const std::string& check, json params, double value, double budget, Verdict v) const {
        return {{"check", check},   {"params", std::move(params)}, {"value", value},        {"budget", budget},
                {"verdict", to_string(v)}, {"config_hash", hash_},  {"version", version()}, {"seed", cfg_.seed}};
    }

    // Writes everything and returns the exit code for v.
    int finish(const std::string& check, json params, double value, double budget, Verdict v) {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(cfg_.dir, ec);
        if (ec) throw io_error("cannot create output dir " + cfg_.dir + ": " + ec.message());
        auto open = [&](const std::string& file) {
            std::ofstream f(fs::path(cfg_.dir) / file, std::ios::binary);
            if (!f) throw io_error("cannot write " + (fs::path(cfg_.dir) / file).string());
            return f;
        };
        if (cfg_.want_jsonl()) {
            auto f = open(cmd_ + ".jsonl");
            for (const auto& r : records_) f << r.dump() << "\n";
        }
        if (cfg_.want_csv()) {
            for (const auto& t : tables_) {
                auto f = open(cmd_ + "_" + t.name + ".csv");
                for (std::size_t i = 0; i < t.header.size(); ++i) f << (i ? "," : "") << t.header[i];
                f << "\n";
                for (const auto& row : t.rows) {
                    for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
                    f << "\n";
                }
            }
        }
        auto f = open(cmd_ + "_verdict.json");
        f << verdict_json(check, std::move(params), value, budget, v).dump(2) << "\n";
        std::cout << cmd_ << ": " << check << " value=" << csv_num(value) << " budget=" << csv_num(budget) << " -> "
                  << to_string(v) << "\n";
        return exit_code(v);
    }

    const std::vector<json>& records() const { return records_; }

private:
    struct Table {
        std::string name;
        std::vector<std::string> header;
        std::vector<std::vector<std::string>> rows;
    };
    RunConfig cfg_;
    std::string cmd_;
    std::string hash_;
    std::vector<json> records_;
    std::vector<Table> tables_;
};

inline void require_eta(const RunConfig& c) {
    if (!(c.eta > 0.0)) throw config_error("spectral.eta must be > 0 for this command");
}

inline int cmd_params(const RunConfig& c) {
    ModelSpec spec = c.model();
    ScaleParams p = scale_params(spec);
    Sink out(c, "params");
    const std::vector<std::pair<std::string, double>> rows = {
        {"Lambda_Psi", p.Lambda_Psi}, {"beta", p.beta},   {"h_lambda", p.h_lambda},
        {"eta_star", p.eta_star},     {"t_Th", p.t_Th},   {"deloc_condition", p.deloc_condition ? 1.0 : 0.0}};
    std::vector<std::vector<std::string>> csv;
    for (const auto& [k, v] : rows) {
        std::printf("%-16s %.12g\n", k.c_str(), v);
        out.record(k, out.base_params(), v, 0.0, 1);
        csv.push_back({k, csv_num(v)});
    }
    out.table("table", {"name", "value"}, csv);
    return out.finish("scale_params", out.base_params(), p.beta, 0.0, Verdict::Pass);
}

inline int cmd_ward(const RunConfig& c) {
    require_eta(c);
    ModelSpec spec = c.model();
    EnsembleRequest req{spec, c.z(), c.samples, c.workers, 0};
    auto res = ensemble_run(
        req, [&](const HamiltonianSample&, const ResolventSample& g) {
            return std::vector<double>{ward_check(g.G, g.z).max(), g.residual};
        },
        {"ward_residual", "solve_residual"});
    Sink out(c, "ward");
    out.record("ward_residual", out.base_params(), res.stats[0].mean(), res.stats[0].std_error(), res.stats[0].count());
    out.record("solve_residual", out.base_params(), res.stats[1].mean(), res.stats[1].std_error(), res.stats[1].count());
    std::vector<std::vector<std::string>> rows;
    double worst = 0.0;
    for (std::size_t i = 0; i < res.samples[0].size(); ++i) {
        worst = std::max(worst, res.samples[0][i]);
        rows.push_back({std::to_string(i), csv_num(res.samples[0][i]), csv_num(res.samples[1][i])});
    }
    out.table("residuals", {"sample", "ward_residual", "solve_residual"}, rows);
    const double budget = c.gate.value_or(1e-10);
    Verdict v = res.n_failed == 0 && worst <= budget ? Verdict::Pass : Verdict::Fail;
    return out.finish("ward_identity", out.base_params(), worst, budget, v);
}

inline int cmd_locallaw(const RunConfig& c) {
    require_eta(c);
    ModelSpec spec = c.model();
    KernelSet ks = build_kernels(spec, c.z());
    LocalLawStats st = local_law_stats(spec, ks, c.samples, c.workers);
    Sink out(c, "locallaw");
    auto a0 = EnsembleAccumulator::from_samples("max_dev", st.max_dev);
    auto a1 = EnsembleAccumulator::from_samples("max_t_ratio", st.max_t_ratio);
    out.record("max_abs_G_minus_M", out.base_params(), a0.mean(), a0.std_error(), a0.count());
    out.record("max_T_over_reference", out.base_params(), a1.mean(), a1.std_error(), a1.count());
    out.record("dev_over_sqrt_h", out.base_params(), st.dev_over_h, 0.0, a0.count());
    std::vector<std::vector<std::string>> rows;
    for (std::size_t b = 0; b < st.hist_counts.size(); ++b)
        rows.push_back({csv_num(st.hist_edges[b]), csv_num(st.hist_edges[b + 1]), std::to_string(st.hist_counts[b])});
    out.table("histogram", {"log10_lo", "log10_hi", "count"}, rows);
    const double budget = c.gate.value_or(10.0);
    Verdict v = st.mean_max_t_ratio <= budget ? Verdict::Pass : Verdict::Fail;
    json p = out.base_params();
    p["exact_kernel_reference"] = st.exact_kernel_reference;
    return out.finish("t_profile_bound", p, st.mean_max_t_ratio, budget, v);
}

inline int cmd_diffusion(const RunConfig& c) {
    ModelSpec spec = c.model();
    KernelSet ks = build_kernels(spec, c.z());
    const auto& lat = spec.lat;
    Mat tf = theta_fourier(ks);
    double dev = max_abs(tf - ks.theta_ring_blk);
    Sink out(c, "diffusion");
    out.record("fourier_vs_direct", out.base_params(), dev, 0.0, 1);
    out.record("m_re", out.base_params(), ks.m.real(), 0.0, 1);
    out.record("m_im", out.base_params(), ks.m.imag(), 0.0, 1);
    out.record("M0_row_sum", out.base_params(), ks.m0_row_sum(), 0.0, 1);
    if (ks.has_theta) out.record("zero_mode_constant", out.base_params(), ks.zero_mode_constant(), 0.0, 1);
    if (spec.lambda > 0.0 && spec.kind != ModelKind::WegnerOrbital && spec.kind != ModelKind::GUE) {
        DecayFit fm = fit_M_decay(ks), fs = fit_splus_decay(ks);
        out.record("M_decay_C", out.base_params(), fm.C, 0.0, 1);
        out.record("Splus_decay_C0", out.base_params(), fs.C, 0.0, 1);
        out.record("Splus_decay_rate", out.base_params(), fs.rate, 0.0, 1);
    }
    std::vector<std::vector<std::string>> rows;
    for (int X = 0; X < lat.num_blocks(); ++X) {
        double th = ks.has_theta ? std::abs(ks.theta_blk(X, 0)) / lat.block_volume()
                                 : std::numeric_limits<double>::quiet_NaN();
        rows.push_back({std::to_string(X), std::to_string(lat.block_dist(X, 0)),
                        csv_num(std::abs(ks.theta_ring_blk(X, 0)) / lat.block_volume()), csv_num(th),
                        csv_num(std::abs(ks.Splus_blk(X, 0)) / lat.block_volume()),
                        csv_num(std::abs(ks.M_blk.size() ? ks.M_blk(X, 0) : ks.M(lat.block_members(X)[0], 0)))});
    }
    out.table("profile", {"block", "block_dist", "abs_theta_ring", "abs_theta", "abs_splus", "abs_M"}, rows);
    const double budget = c.gate.value_or(1e-9);
    return out.finish("fourier_vs_direct", out.base_params(), dev, budget, dev <= budget ? Verdict::Pass : Verdict::Fail);
}

inline int cmd_spectrum(const RunConfig& c) {
    ModelSpec spec = c.model();
    auto res = parallel_ensemble(
        c.samples, c.workers,
        [&](std::size_t i) {
            SpectrumSample sp = eigh(assemble(spec, i).H);
            SupNormStats sn = sup_norm_stats(sp, c.kappa, &spec);
            double pr = 0.0;
            auto idx = bulk_indices(sp.evals, c.kappa);
            for (int k : idx) pr += participation_ratio(sp.evecs.col(k));
            return std::vector<double>{sn.mean, sn.max, pr / idx.size(), sp.residual, static_cast<double>(idx.size())};
        },
        {"mean_sup", "max_sup", "mean_pr", "eig_residual", "bulk_count"});
    Sink out(c, "spectrum");
    json p = out.base_params();
    p["kappa"] = c.kappa;
    for (std::size_t k = 0; k < res.stats.size(); ++k)
        out.record(res.stats[k].name(), p, res.stats[k].mean(), res.stats[k].std_error(), res.stats[k].count());
    std::vector<std::vector<std::string>> rows;
    double worst = 0.0;
    for (std::size_t i = 0; i < res.samples[0].size(); ++i) {
        worst = std::max(worst, res.samples[3][i]);
        rows.push_back({std::to_string(i), csv_num(res.samples[0][i]), csv_num(res.samples[1][i]),
                        csv_num(res.samples[2][i]), csv_num(res.samples[4][i])});
    }
    out.table("samples", {"sample", "mean_sup", "max_sup", "mean_pr", "bulk_count"}, rows);
    const double budget = c.gate.value_or(1e-10);
    Verdict v = res.n_failed == 0 && worst <= budget ? Verdict::Pass : Verdict::Fail;
    if (res.n_failed == c.samples) v = Verdict::Inconclusive;
    return out.finish("eigen_residual", p, worst, budget, v);
}

inline int cmd_que(const RunConfig& c) {
    require_eta(c);
    ModelSpec spec = c.model();
    const auto& lat = spec.lat;
    std::vector<int> half;
    for (int b = 0; b < std::max(1, lat.num_blocks() / 2); ++b) half.push_back(b);
    const Eigen::VectorXd pi = flatness_mask(lat, half);
    const std::vector<double> ls = c.l_grid.empty() ? std::vector<double>{c.eta} : c.l_grid;
    for (double l : ls)
        if (l < c.eta) throw config_error("experiment.l_grid entries must be >= eta");
    std::vector<std::string> names = {"que_mean", "que_max", "frac_above_eps"};
    for (std::size_t j = 0; j < ls.size(); ++j) {
        names.push_back("trace_pass_" + std::to_string(j));
        names.push_back("trace_slack_" + std::to_string(j));
    }
    auto res = parallel_ensemble(
        c.samples, c.workers,
        [&](std::size_t i) {
            HamiltonianSample h = assemble(spec, i);
            SpectrumSample sp = eigh(h.H);
            QueFlatness q = que_flatness(sp, lat, c.ell, c.kappa);
            Mat G = resolvent(h, c.z()).G;
            std::vector<double> v = {q.mean, q.max, q.frac_above_eps};
            for (double l : ls) {
                TraceBound t = que_trace_bound_check(G, c.z(), pi, l, sp);
                v.push_back(t.pass ? 1.0 : 0.0);
                v.push_back(t.slack);
            }
            return v;
        },
        names);
    Sink out(c, "que");
    json p = out.base_params();
    p["ell"] = c.ell;
    p["kappa"] = c.kappa;
    std::size_t passed = 0, checks = 0;
    for (std::size_t k = 0; k < res.stats.size(); ++k) {
        json pk = p;
        if (k >= 3) pk["l"] = ls[(k - 3) / 2];
        out.record(res.stats[k].name(), pk, res.stats[k].mean(), res.stats[k].std_error(), res.stats[k].count());
        if (k >= 3 && (k - 3) % 2 == 0)
            for (double x : res.samples[k]) {
                ++checks;
                passed += x == 1.0;
            }
    }
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < res.samples[0].size(); ++i) {
        std::vector<std::string> row = {std::to_string(i)};
        for (std::size_t k = 0; k < res.samples.size(); ++k) row.push_back(csv_num(res.samples[k][i]));
        rows.push_back(row);
    }
    std::vector<std::string> header = {"sample"};
    header.insert(header.end(), names.begin(), names.end());
    out.table("samples", header, rows);
    double frac = checks ? static_cast<double>(passed) / checks : 0.0;
    Verdict v = res.n_failed == 0 && passed == checks ? Verdict::Pass : Verdict::Fail;
    return out.finish("trace_inequality_pass_fraction", p, frac, 1.0, v);
}

struct TrendVerdict {
    double pr_ratio = 0.0, que_ratio = 0.0;
    bool pr_separated = false;
    Verdict verdict = Verdict::Fail;
};

// Endpoint comparison of a scan: PR must grow by >= pr_factor with 95% intervals separated
// by that factor, QUE score must drop by >= que_factor.
inline TrendVerdict scan_trend(const std::vector<TransitionRow>& rows, double pr_factor = 3.0, double que_factor = 2.0) {
    TrendVerdict t;
    const auto& lo = rows.front();
    const auto& hi = rows.back();
    t.pr_ratio = hi.mean_pr / lo.mean_pr;
    t.que_ratio = lo.que_mean / hi.que_mean;
    double lo_up = lo.mean_pr + 1.96 * lo.pr_stderr;
    double hi_dn = hi.mean_pr - 1.96 * hi.pr_stderr;
    t.pr_separated = hi_dn >= pr_factor * lo_up;
    t.verdict = t.pr_separated && t.pr_ratio >= pr_factor && t.que_ratio >= que_factor ? Verdict::Pass : Verdict::Fail;
    return t;
}

inline std::vector<std::string> scan_row_csv(const TransitionRow& r) {
    return {csv_num(r.lambda),     csv_num(r.kappa),      csv_num(r.mean_sup),   csv_num(r.max_sup),
            csv_num(r.mean_pr),    csv_num(r.pr_stderr),  csv_num(r.frac_slope), csv_num(r.frac_ci_lo),
            csv_num(r.frac_ci_hi), csv_num(r.que_mean),   csv_num(r.que_stderr), csv_num(r.que_max),
            std::to_string(r.n_samples), std::to_string(r.n_failed)};
}

inline const std::vector<std::string>& scan_csv_header() {
    static const std::vector<std::string> h = {"lambda",     "kappa",      "mean_sup", "max_sup",    "mean_pr",
                                               "pr_stderr",  "frac_slope", "frac_ci_lo", "frac_ci_hi", "que_mean",
                                               "que_stderr", "que_max",    "n_samples", "n_failed"};
    return h;
}

inline int cmd_scan(const RunConfig& c) {
    if (c.lambda_grid.size() < 2) throw config_error("experiment.lambda_grid needs at least two points");
    ScanRequest req;
    req.base = c.model();
    req.lambdas = c.lambda_grid;
    req.E = c.E;
    req.kappa = c.kappa;
    req.ell = c.ell;
    req.s = c.s;
    req.n_samples = c.samples;
    req.frac_samples = c.samples;
    req.workers = c.workers;
    auto rows = transition_scan(req);
    Sink out(c, "scan");
    std::vector<std::vector<std::string>> csv;
    for (const auto& r : rows) {
        json p = out.base_params();
        p["lambda"] = r.lambda;
        p["kappa"] = r.kappa;
        out.record("mean_pr", p, r.mean_pr, r.pr_stderr, r.n_samples - r.n_failed);
        out.record("que_mean", p, r.que_mean, r.que_stderr, r.n_samples - r.n_failed);
        out.record("mean_sup", p, r.mean_sup, 0.0, r.n_samples - r.n_failed);
        out.record("frac_slope", p, r.frac_slope, (r.frac_ci_hi - r.frac_ci_lo) / (2 * 1.96), r.n_samples);
        csv.push_back(scan_row_csv(r));
    }
    out.table("rows", scan_csv_header(), csv);
    TrendVerdict t = scan_trend(rows);
    json p = out.base_params();
    p["lambda_grid"] = c.lambda_grid;
    p["que_ratio"] = t.que_ratio;
    p["pr_ci_separated"] = t.pr_separated;
    return out.finish("participation_ratio_trend", p, t.pr_ratio, 3.0, t.verdict);
}

inline LoopStructure parse_structure(const std::string& s) {
    if (s == "Pi0") return Pi0();
    if (s == "Pi1") return Pi1();
    if (s == "Pi2") return Pi2();
    throw config_error("unknown loop structure " + s);
}

inline int cmd_renorm(const RunConfig& c) {
    require_eta(c);
    Sink out(c, "renorm");
    const cd m = msc(c.z());
    const LoopStructure st = parse_structure(c.structure);
    DeltaCoeff dc = delta_coeff(st, m);
    json p = out.base_params();
    p["structure"] = c.structure;
    p["p"] = dc.p;
    out.record("delta_re", p, dc.value.real(), 0.0, 1);
    out.record("delta_im", p, dc.value.imag(), 0.0, 1);
    if (dc.factored) out.record("delta_factored_minus_expanded", p, std::abs(*dc.factored - dc.value), 0.0, 1);
    std::cout << "Delta(" << c.structure << ") = " << csv_num(dc.value.real()) << " + " << csv_num(dc.value.imag())
              << "i\n";
    if (!c.E_grid.empty() && !c.eta_grid.empty()) {
        std::vector<std::vector<std::string>> rows;
        for (double E : c.E_grid)
            for (double eta : c.eta_grid) {
                cd mm = msc(cd(E, eta));
                cd io = iota(mm);
                cd d0 = delta_coeff(Pi0(), mm).value, d1 = delta_coeff(Pi1(), mm).value;
                rows.push_back({csv_num(E), csv_num(eta), csv_num(std::abs(io + std::conj(io) + 1.0)),
                                csv_num(std::abs(io + std::conj(io) + 1.0) / eta), csv_num(std::abs(d0)),
                                csv_num(std::abs(d1))});
            }
        out.table("sum_zero", {"E", "eta", "abs_iota_sum", "abs_iota_sum_over_eta", "abs_delta0", "abs_delta1"}, rows);
    }
    const ModelSpec spec = c.model();
    if (c.kappa4 != 0.0 && spec.kind != ModelKind::GUE) {
        FourthCumulant fc = fourth_cumulant_sum(build_kernels(spec, c.z()), c.kappa4);
        json q = p;
        q["kappa4"] = c.kappa4;
        out.record("fourth_cumulant_sum_abs", q, std::abs(fc.value), 0.0, 1);
        out.record("fourth_cumulant_ratio", q, fc.ratio, 0.0, 1);
    }
    if (spec.kind == ModelKind::GUE) {
        LoopCompare lc = loop_mc_compare(spec.lat.N(), c.E, c.eps0, c.samples, c.workers, c.gate.value_or(5.0), c.seed);
        json q = p;
        q["N"] = lc.N;
        q["eta"] = lc.eta;
        q["eps0"] = c.eps0;
        q["delta0"] = lc.delta0;
        out.record("normalized_distinct_loop_sum", q, lc.normalized, lc.stderr_, lc.n);
        return out.finish("gue_loop_renormalization", q, lc.normalized, lc.budget, lc.verdict);
    }
    const double budget = st == Pi2() ? 0.0 : c.gate.value_or(10.0) * c.eta;
    Verdict v = std::abs(dc.value) <= budget ? Verdict::Pass : Verdict::Fail;
    return out.finish("delta_coefficient", p, std::abs(dc.value), budget, v);
}

inline int cmd_texp(const RunConfig& c) {
    require_eta(c);
    ModelSpec spec = c.model();
    const int N = spec.lat.N();
    const int bdef = std::min(spec.lat.W(), N - 1);
    const int b1 = c.b1.value_or(bdef), b2 = c.b2.value_or(bdef);
    TexpCheck t = texp_second_order_check(spec, c.z(), c.a, b1, b2, c.samples, c.workers);
    Sink out(c, "texp");
    json p = out.base_params();
    p["a"] = c.a;
    p["b1"] = b1;
    p["b2"] = b2;
    out.record("residual_re", p, t.residual.real(), t.se_re, t.n);
    out.record("residual_im", p, t.residual.imag(), t.se_im, t.n);
    out.record("lhs_re", p, t.lhs.real(), 0.0, t.n);
    out.record("lhs_im", p, t.lhs.imag(), 0.0, t.n);
    out.record("rhs_re", p, t.rhs.real(), 0.0, t.n);
    out.record("rhs_im", p, t.rhs.imag(), 0.0, t.n);
    return out.finish("second_order_t_expansion", p, std::abs(t.residual), 3.0 * t.se_abs(), t.verdict);
}

// Exact-identity suite on small fixed inputs. Returns 0 iff every check passes; the first
// failure is reported as module/op.
inline int cmd_selftest(const std::string& inject_fault = "", std::ostream& os = std::cout) {
    struct Check {
        std::string name;
        double value, budget;
    };
    std::vector<Check> checks;
    auto add = [&](std::string name, double value, double budget) { checks.push_back({std::move(name), value, budget}); };

    const cd z(0.3, 0.5);
    const std::vector<ModelKind> kinds = {ModelKind::BlockAnderson, ModelKind::AndersonOrbital, ModelKind::WegnerOrbital,
                                          ModelKind::GUE};
    for (ModelKind k : kinds) {
        const std::string tag = to_string(k);
        for (int d : {1, 2}) {
            ModelSpec spec(k, TorusLattice(d, 3, 3), 0.3, 7);
            HamiltonianSample h = assemble(spec, 0);
            ResolventSample g = resolvent(h, z);
            add("greens/ward[" + tag + ",d=" + std::to_string(d) + "]", ward_check(g.G, z).max(), 1e-10);
            add("greens/resolvent_paths[" + tag + "]", max_abs(g.G - resolvent_eigen(h.H, z).G), 1e-9);
            KernelSet ks = build_kernels(spec, z);
            Mat ring = ks.theta_ring_blk;
            if (inject_fault == "theta" && ring.rows() > 1) ring(0, 0) += 1e-3;
            add("mfield/theta_ring_fourier[" + tag + ",d=" + std::to_string(d) + "]", max_abs(theta_fourier(ks) - ring),
                1e-9);
            const double Wd = spec.lat.block_volume();
            Mat zm = (ks.theta_blk - ring) / Wd;
            add("mfield/zero_mode[" + tag + "]",
                (zm.array() - cd(ks.zero_mode_constant(), 0.0)).abs().maxCoeff() / std::abs(ks.zero_mode_constant()),
                1e-10);
            // Im m = t0 (eta + s Im m) with s the row sum of S
            const double im = ks.m.imag();
            add("mfield/M0_row_sum[" + tag + "]", std::abs(ks.m0_row_sum() - im / (z.imag() + ks.s_row_sum() * im)),
                1e-10);
            // T - T_ring is the flat part of T, i.e. its mean over x
            Vec T = t_profile(g.G, ks, 1, 2);
            cd want = t_zero_mode(g.G, ks, 1, 2);
            add("greens/t_zero_mode[" + tag + "]", std::abs(T.mean() - want) / std::abs(want), 1e-10);
        }
    }
    for (cd m : {cd(0.0, 1.0), cd(0.3, 0.8), cd(-0.7, 0.2)}) {
        DeltaCoeff d1 = delta_coeff(Pi1(), m);
        add("renorm/delta_pi1_factored", std::abs(*d1.factored - d1.value) / std::max(1.0, std::abs(d1.value)), 1e-12);
        add("renorm/delta_pi2", std::abs(delta_coeff(Pi2(), m).value), 0.0);
    }
    add("renorm/delta_pi0_at_i", std::abs(delta_coeff(Pi0(), cd(0, 1)).value), 1e-15);
    add("renorm/delta_pi1_at_i", std::abs(delta_coeff(Pi1(), cd(0, 1)).value), 1e-15);
    {
        ModelSpec spec(ModelKind::GUE, TorusLattice(1, 12, 1), 0.0, 3);
        HamiltonianSample h = assemble(spec, 0);
        Mat G = resolvent(h, z).G;
        SpectrumSample sp = eigh(h.H);
        for (int p : {1, 2}) {
            double a = loop_sum_full(G, p).real(), b = loop_sum_spectral(sp.evals, z, p);
            add("renorm/loop_trace_vs_spectral[p=" + std::to_string(p) + "]", std::abs(a - b) / b, 1e-10);
        }
        add("renorm/loop_distinct", std::abs(loop_sum_distinct(G) - loop_sum_distinct_brute(G)), 1e-10);
        add("spectra/evd_trace", std::abs(sp.evals.sum() - h.H.trace().real()), 1e-10);
        Eigen::VectorXd pi = Eigen::VectorXd::Zero(12);
        pi.head(6).setConstant(1.0);
        pi.tail(6).setConstant(-1.0);
        TraceBound tb = que_trace_bound_check(G, z, pi, 0.6, sp);
        add("spectra/que_trace_bound", tb.pass ? 0.0 : 1.0, 0.0);
    }
    for (const auto& ch : checks) {
        bool ok = ch.value <= ch.budget;
        if (!ok) {
            os << "FAIL " << ch.name << " value=" << csv_num(ch.value) << " budget=" << csv_num(ch.budget) << "\n";
            return 2;
        }
    }
    os << "selftest: " << checks.size() << " exact checks passed\n";
    return 0;
}

using Command = std::function<int(const RunConfig&)>;

inline const std::map<std::string, Command>& commands() {
    static const std::map<std::string, Command> m = {
        {"params", cmd_params},     {"ward", cmd_ward},   {"locallaw", cmd_locallaw}, {"diffusion", cmd_diffusion},
        {"spectrum", cmd_spectrum}, {"que", cmd_que},     {"scan", cmd_scan},         {"renorm", cmd_renorm},
        {"texp", cmd_texp},
    };
    return m;
}

}  // namespace rbso
