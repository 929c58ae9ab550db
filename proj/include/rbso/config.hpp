#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rbso/lattice.hpp"
#include "rbso/models.hpp"

#ifndef RBSO_VERSION
#define RBSO_VERSION "0.1.0-unknown"
#endif

namespace rbso {

inline const char* version() { return RBSO_VERSION; }

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // [model]
    std::string kind = "WO";
    int d = 1, W = 4, n = 4;
    double lambda = 0.3;
    std::optional<double> xi;
    std::uint64_t seed = 0;
    // [spectral]
    double E = 0.2, eta = 0.5, kappa = 0.5;
    std::vector<double> E_grid, eta_grid;
    // [experiment]
    std::size_t samples = 100;
    int workers = 1;
    std::optional<double> gate;
    int ell = 1;
    double s = 0.5;
    std::vector<double> lambda_grid;
    std::vector<double> l_grid;
    int a = 0;
    std::optional<int> b1, b2;
    double kappa4 = 0.0;
    std::string structure = "Pi0";
    double eps0 = 0.3;
    // [output]
    std::string dir = "out";
    std::string format = "both";

    bool operator==(const RunConfig&) const = default;

    ModelSpec model() const {
        TorusLattice lat(d, W, n);
        if (xi) return ModelSpec::from_xi(parse_kind(kind), lat, *xi, seed);
        return ModelSpec(parse_kind(kind), lat, lambda, seed);
    }
    cd z() const { return {E, eta}; }
    bool want_csv() const { return format != "jsonl"; }
    bool want_jsonl() const { return format != "csv"; }
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double to_double(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || errno == ERANGE) throw config_error(key + ": not a number: '" + v + "'");
    return x;
}

inline long long to_int(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || errno == ERANGE) throw config_error(key + ": not an integer: '" + v + "'");
    return x;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    if (!v.empty() && v[0] == '-') throw config_error(key + ": must be non-negative");
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || errno == ERANGE) throw config_error(key + ": not an unsigned integer: '" + v + "'");
    return x;
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
    return out;
}

inline std::string list_str(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
    return s;
}

struct Field {
    std::string section, key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::optional<std::string>(const RunConfig&)> get;  // nullopt: omitted
};

inline const std::vector<Field>& fields() {
    using O = std::optional<std::string>;
    static const std::vector<Field> f = {
        {"model", "kind", [](RunConfig& c, const std::string& v) { c.kind = v; }, [](const RunConfig& c) { return O(c.kind); }},
        {"model", "d", [](RunConfig& c, const std::string& v) { c.d = static_cast<int>(to_int("d", v)); },
         [](const RunConfig& c) { return O(std::to_string(c.d)); }},
        {"model", "W", [](RunConfig& c, const std::string& v) { c.W = static_cast<int>(to_int("W", v)); },
         [](const RunConfig& c) { return O(std::to_string(c.W)); }},
        {"model", "n", [](RunConfig& c, const std::string& v) { c.n = static_cast<int>(to_int("n", v)); },
         [](const RunConfig& c) { return O(std::to_string(c.n)); }},
        {"model", "lambda", [](RunConfig& c, const std::string& v) { c.lambda = to_double("lambda", v); },
         [](const RunConfig& c) { return c.xi ? O() : O(fmt(c.lambda)); }},
        {"model", "xi", [](RunConfig& c, const std::string& v) { c.xi = to_double("xi", v); },
         [](const RunConfig& c) { return c.xi ? O(fmt(*c.xi)) : O(); }},
        {"model", "seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
         [](const RunConfig& c) { return O(std::to_string(c.seed)); }},
        {"spectral", "E", [](RunConfig& c, const std::string& v) { c.E = to_double("E", v); },
         [](const RunConfig& c) { return O(fmt(c.E)); }},
        {"spectral", "eta", [](RunConfig& c, const std::string& v) { c.eta = to_double("eta", v); },
         [](const RunConfig& c) { return O(fmt(c.eta)); }},
        {"spectral", "kappa", [](RunConfig& c, const std::string& v) { c.kappa = to_double("kappa", v); },
         [](const RunConfig& c) { return O(fmt(c.kappa)); }},
        {"spectral", "E_grid", [](RunConfig& c, const std::string& v) { c.E_grid = to_list("E_grid", v); },
         [](const RunConfig& c) { return c.E_grid.empty() ? O() : O(list_str(c.E_grid)); }},
        {"spectral", "eta_grid", [](RunConfig& c, const std::string& v) { c.eta_grid = to_list("eta_grid", v); },
         [](const RunConfig& c) { return c.eta_grid.empty() ? O() : O(list_str(c.eta_grid)); }},
        {"experiment", "samples",
         [](RunConfig& c, const std::string& v) { c.samples = static_cast<std::size_t>(to_u64("samples", v)); },
         [](const RunConfig& c) { return O(std::to_string(c.samples)); }},
        {"experiment", "workers", [](RunConfig& c, const std::string& v) { c.workers = static_cast<int>(to_int("workers", v)); },
         [](const RunConfig& c) { return O(std::to_string(c.workers)); }},
        {"experiment", "gate", [](RunConfig& c, const std::string& v) { c.gate = to_double("gate", v); },
         [](const RunConfig& c) { return c.gate ? O(fmt(*c.gate)) : O(); }},
        {"experiment", "ell", [](RunConfig& c, const std::string& v) { c.ell = static_cast<int>(to_int("ell", v)); },
         [](const RunConfig& c) { return O(std::to_string(c.ell)); }},
        {"experiment", "s", [](RunConfig& c, const std::string& v) { c.s = to_double("s", v); },
         [](const RunConfig& c) { return O(fmt(c.s)); }},
        {"experiment", "lambda_grid", [](RunConfig& c, const std::string& v) { c.lambda_grid = to_list("lambda_grid", v); },
         [](const RunConfig& c) { return c.lambda_grid.empty() ? O() : O(list_str(c.lambda_grid)); }},
        {"experiment", "l_grid", [](RunConfig& c, const std::string& v) { c.l_grid = to_list("l_grid", v); },
         [](const RunConfig& c) { return c.l_grid.empty() ? O() : O(list_str(c.l_grid)); }},
        {"experiment", "a", [](RunConfig& c, const std::string& v) { c.a = static_cast<int>(to_int("a", v)); },
         [](const RunConfig& c) { return O(std::to_string(c.a)); }},
        {"experiment", "b1", [](RunConfig& c, const std::string& v) { c.b1 = static_cast<int>(to_int("b1", v)); },
         [](const RunConfig& c) { return c.b1 ? O(std::to_string(*c.b1)) : O(); }},
        {"experiment", "b2", [](RunConfig& c, const std::string& v) { c.b2 = static_cast<int>(to_int("b2", v)); },
         [](const RunConfig& c) { return c.b2 ? O(std::to_string(*c.b2)) : O(); }},
        {"experiment", "kappa4", [](RunConfig& c, const std::string& v) { c.kappa4 = to_double("kappa4", v); },
         [](const RunConfig& c) { return O(fmt(c.kappa4)); }},
        {"experiment", "structure", [](RunConfig& c, const std::string& v) { c.structure = v; },
         [](const RunConfig& c) { return O(c.structure); }},
        {"experiment", "eps0", [](RunConfig& c, const std::string& v) { c.eps0 = to_double("eps0", v); },
         [](const RunConfig& c) { return O(fmt(c.eps0)); }},
        {"output", "dir", [](RunConfig& c, const std::string& v) { c.dir = v; }, [](const RunConfig& c) { return O(c.dir); }},
        {"output", "format", [](RunConfig& c, const std::string& v) { c.format = v; },
         [](const RunConfig& c) { return O(c.format); }},
    };
    return f;
}

}  // namespace detail

// Throws config_error naming the first offending field.
inline void validate(const RunConfig& c) {
    try {
        parse_kind(c.kind);
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("model.kind: ") + e.what());
    }
    if (c.d < 1 || c.W < 1 || c.n < 1) throw config_error("model: d, W, n must be >= 1");
    if (ipow(static_cast<std::int64_t>(c.W) * c.n, c.d) > 8192) throw config_error("model: N = (nW)^d too large for dense storage");
    if (!(c.lambda >= 0.0)) throw config_error("model.lambda must be >= 0");
    if (c.xi && !(*c.xi >= 0.0)) throw config_error("model.xi must be >= 0");
    if (!(c.eta >= 0.0)) throw config_error("spectral.eta must be >= 0");
    if (!(c.kappa > 0.0 && c.kappa < 2.0)) throw config_error("spectral.kappa must lie in (0, 2)");
    for (double e : c.eta_grid)
        if (!(e > 0.0)) throw config_error("spectral.eta_grid entries must be > 0");
    if (c.samples < 1) throw config_error("experiment.samples must be >= 1");
    if (c.workers < 1) throw config_error("experiment.workers must be >= 1");
    if (c.gate && !(*c.gate > 0.0)) throw config_error("experiment.gate must be > 0");
    if (c.ell < 1) throw config_error("experiment.ell must be >= 1");
    if (!(c.s > 0.0 && c.s < 1.0)) throw config_error("experiment.s must lie in (0, 1)");
    for (double l : c.lambda_grid)
        if (!(l >= 0.0)) throw config_error("experiment.lambda_grid entries must be >= 0");
    if (!(c.eps0 > 0.0 && c.eps0 < 0.5)) throw config_error("experiment.eps0 must lie in (0, 1/2)");
    if (c.structure != "Pi0" && c.structure != "Pi1" && c.structure != "Pi2")
        throw config_error("experiment.structure must be Pi0, Pi1 or Pi2");
    if (c.format != "csv" && c.format != "jsonl" && c.format != "both")
        throw config_error("output.format must be csv, jsonl or both");
    const std::int64_t N = ipow(static_cast<std::int64_t>(c.W) * c.n, c.d);
    for (auto idx : {std::optional<int>(c.a), c.b1, c.b2})
        if (idx && (*idx < 0 || *idx >= N)) throw config_error("experiment: site index outside [0, N)");
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::map<std::string, const detail::Field*> index;
    for (const auto& f : detail::fields()) index[f.section + "." + f.key] = &f;
    std::map<std::string, int> seen;
    std::stringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw config_error(where + "malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "spectral" && section != "experiment" && section != "output")
                throw config_error(where + "unknown section [" + section + "]");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw config_error(where + "expected key = value");
        if (section.empty()) throw config_error(where + "key outside a section");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        std::string full = section + "." + key;
        auto it = index.find(full);
        if (it == index.end()) throw config_error(where + "unknown key " + full);
        if (seen[full]++) throw config_error(where + "duplicate key " + full);
        try {
            it->second->set(c, val);
        } catch (const config_error& e) {
            throw config_error(where + section + "." + e.what());
        }
    }
    if (seen.count("model.lambda") && seen.count("model.xi")) throw config_error("model: give lambda or xi, not both");
    return c;
}

inline std::string serialize(const RunConfig& c) {
    std::string out, section;
    for (const auto& f : detail::fields()) {
        auto v = f.get(c);
        if (!v) continue;
        if (f.section != section) {
            out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + *v + "\n";
    }
    return out;
}

// FNV-1a over the serialized config without the fields that must not change results
// (worker count and output location).
inline std::string config_hash(const RunConfig& c) {
    RunConfig k = c;
    k.workers = 1;
    k.dir = "";
    k.format = "both";
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : serialize(k)) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// RBSO_SEED, RBSO_WORKERS, RBSO_OUT, RBSO_FORMAT; applied after the file, before flags.
inline void apply_env(RunConfig& c, const std::function<const char*(const char*)>& getenv_ = ::getenv) {
    if (const char* v = getenv_("RBSO_SEED")) c.seed = detail::to_u64("RBSO_SEED", v);
    if (const char* v = getenv_("RBSO_WORKERS")) c.workers = static_cast<int>(detail::to_int("RBSO_WORKERS", v));
    if (const char* v = getenv_("RBSO_OUT")) c.dir = v;
    if (const char* v = getenv_("RBSO_FORMAT")) c.format = v;
}

}  // namespace rbso
