#include "rombayes/rombayes.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace rombayes;

struct Options {
    std::string config;
    std::string output;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

PipelineConfig load(const Options& o)
{
    PipelineConfig c = load_config(o.config);
    if (!o.output.empty()) c.output_dir = o.output;
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    c.validate();
    return c;
}

std::filesystem::path prepare(const PipelineConfig& c)
{
    std::filesystem::path dir = c.output_dir;
    std::filesystem::create_directories(dir);
    return dir;
}

void print_summary(const RunReport& rep)
{
    auto line = [](const char* name, const std::optional<Vector>& v) {
        if (!v) return;
        std::printf("  %-16s mean %.4e  max %.4e\n", name, Pipeline::finite_mean(*v), Pipeline::finite_max(*v));
    };
    std::printf("validation on [%g, %g], %ld points\n", rep.times[0], rep.times[rep.times.size() - 1],
                static_cast<long>(rep.times.size()));
    line("eps_uncorrected", rep.eps_uncorrected);
    line("eps_projection", rep.eps_projection);
    line("eps_enkf", rep.eps_enkf);
    line("eps_pce", rep.eps_pce);
    std::printf("active parameters %ld of %ld\n", static_cast<long>(rep.active_count), static_cast<long>(rep.parameter_count));
    for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int run_stage(const std::string& stage, const Options& o)
{
    const PipelineConfig c = load(o);
    Pipeline p(c, &std::cerr);
    const std::filesystem::path dir = prepare(c);
    auto write = [&](const std::string& name, auto&& writer) {
        io::write_file((dir / name).string(), writer);
        std::printf("wrote %s\n", (dir / name).string().c_str());
    };

    if (stage == "simulate") {
        const SnapshotMatrix& s = p.simulation();
        write("snapshots.txt", [&](std::ostream& os) { io::write_snapshots(os, s); });
    } else if (stage == "pod") {
        const PodBasis& b = p.basis();
        write("basis.txt", [&](std::ostream& os) { io::write_basis(os, b); });
        std::printf("energy fraction %.6f with %ld modes\n", p.model().energy_fraction, static_cast<long>(b.n_modes()));
    } else if (stage == "rom") {
        const ModelSetup& m = p.model();
        write("rom.txt", [&](std::ostream& os) { io::write_rom(os, m.system); });
    } else if (stage == "sensitivity") {
        const SensitivityReport& s = p.sensitivity();
        write("sensitivity.csv", [&](std::ostream& os) {
            os << "index,ratio,active\n";
            std::vector<bool> act(static_cast<std::size_t>(s.ratio.size()), false);
            for (Index k : s.active_set) act[static_cast<std::size_t>(k)] = true;
            for (Index k = 0; k < s.ratio.size(); ++k)
                os << k << ',' << io::format_double(s.ratio[k]) << ',' << (act[static_cast<std::size_t>(k)] ? 1 : 0) << '\n';
        });
        std::printf("retained %zu of %ld parameters\n", s.active_set.size(), static_cast<long>(s.ratio.size()));
    } else if (stage == "identify") {
        const IdentifyResult& id = p.identification();
        if (id.enkf_posterior)
            write("enkf_posterior.txt",
                  [&](std::ostream& os) { io::write_ensemble(os, id.enkf_posterior->members, id.enkf_posterior->seed); });
        if (id.pce_posterior) write("pce_posterior.txt", [&](std::ostream& os) { io::write_pce(os, *id.pce_posterior); });
        for (const auto& w : id.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    } else if (stage == "validate") {
        RunReport rep = p.validation();
        Pipeline::emit_report(rep, dir, false);
        print_summary(rep);
    } else {
        RunReport rep = p.run();
        print_summary(rep);
        std::printf("report written to %s\n", (dir / "report.json").string().c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Bayesian identification of reduced-order model corrections"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    std::size_t threads = 0;

    const std::vector<std::pair<std::string, std::string>> stages = {
        {"simulate", "run the full-order model and write snapshots"},
        {"pod", "compute the POD basis"},
        {"rom", "assemble the Galerkin reduced model"},
        {"sensitivity", "pilot ensemble and variance-ratio screening"},
        {"identify", "EnKF and/or PCE smoother for the correction terms"},
        {"validate", "error series and quantile bands on the validation window"},
        {"report", "write all outputs and report.json"},
        {"run", "all stages"},
    };
    for (const auto& [name, help] : stages) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", o.config, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("-o,--output", o.output, "output directory (overrides output_dir)");
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--threads", threads, "worker threads (0 = hardware concurrency)");
    }
    CLI11_PARSE(app, argc, argv);

    for (const CLI::App* sub : app.get_subcommands()) {
        if (sub->count("--seed")) o.seed = seed;
        if (sub->count("--threads")) o.threads = threads;
        try {
            return run_stage(sub->get_name(), o);
        } catch (const ConfigError& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return 2;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 1;
        }
    }
    return 0;
}
