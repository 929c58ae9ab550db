#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "rbso/commands.hpp"

namespace {

rbso::RunConfig load(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream f(path);
    if (!f) throw rbso::io_error("cannot read config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return rbso::parse_config(ss.str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Random block Schrodinger operator laboratory"};
    app.set_version_flag("--version", std::string(rbso::version()));
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir, format;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    app.add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "base seed (overrides config and RBSO_SEED)");
    app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--format", format, "csv, jsonl or both")->check(CLI::IsMember({"csv", "jsonl", "both"}));

    for (const auto& [name, fn] : rbso::commands()) app.add_subcommand(name, "run the " + name + " suite");
    auto* dump = app.add_subcommand("dump-config", "print the effective config");
    auto* self = app.add_subcommand("selftest", "exact-identity suite (ignores config)");
    std::string fault;
    self->add_option("--inject-fault", fault, "corrupt a kernel to exercise failure reporting")
        ->check(CLI::IsMember({"theta"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (self->parsed()) return rbso::cmd_selftest(fault);
        rbso::RunConfig cfg = load(config_path);
        rbso::apply_env(cfg);
        if (seed) cfg.seed = *seed;
        if (workers) cfg.workers = *workers;
        if (!out_dir.empty()) cfg.dir = out_dir;
        if (!format.empty()) cfg.format = format;
        rbso::validate(cfg);
        if (dump->parsed()) {
            std::cout << rbso::serialize(cfg);
            return 0;
        }
        for (const auto* sub : app.get_subcommands()) return rbso::commands().at(sub->get_name())(cfg);
    } catch (const rbso::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const rbso::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
