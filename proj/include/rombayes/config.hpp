#ifndef ROMBAYES_CONFIG_HPP
#define ROMBAYES_CONFIG_HPP

#include "rombayes/common.hpp"

#include <json.hpp>

#include <array>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace rombayes {

struct BurgersConfig {
    Index cells = 128;
    double length = 1.0;
    double nu = 0.01;
    std::string boundary = "dirichlet";  // dirichlet (homogeneous) | periodic
    std::string initial_shape = "sine";  // sine | gaussian
    double amplitude = 1.0;
    int wavenumber = 1;
    double center = 0.5;
    double width = 0.1;
    double t_end = 1.0;
    double dt = 1e-3;
    Index save_every = 1;
};

struct CorrectionEntry {
    std::vector<Index> entry;  // (i, j) in A~ or (i, j, k) in C~
    double prior_std = 0.0;    // value in units of the prior standard deviation
};

/// Oscillator-pair truth: modes (2p, 2p+1) rotate with frequencies[p], all
/// modes are damped, and energy-conserving triads couple neighbouring pairs.
struct QuadraticTruthConfig {
    std::vector<double> frequencies{1.0, 1.7, 2.6};
    double damping = 0.02;
    double coupling = 0.02;
    std::vector<double> initial{1.0, 0.0, 0.8, 0.0, 0.6, 0.0};
    double t_end = 20.0;
    double dt = 0.01;
    std::vector<CorrectionEntry> true_correction;
};

struct SmootherConfig {
    std::string kind = "enkf";  // enkf | pce | both
    Index ensemble_size = 1000;
    int pce_degree = 2;
    Index pce_samples = 1000;
    Index max_pce_vars = 93;
    double pinv_cutoff = 1e-10;
    double max_diverged_fraction = 0.1;

    bool run_enkf() const { return kind == "enkf" || kind == "both"; }
    bool run_pce() const { return kind == "pce" || kind == "both"; }
};

struct RvmSettings {
    std::string method = "sequential";
    int max_iter = 500;
    double prune_threshold = 1e12;
    double tol = 1e-6;
    std::optional<double> noise_variance;
    std::optional<double> add_ratio;
};

struct SensitivityConfig {
    bool enabled = false;
    Index pilot_size = 200;
    double threshold = 0.95;
    std::string method = "improved";  // improved | enkf
};

struct QuantileConfig {
    bool enabled = true;
    std::vector<double> levels{0.005, 0.995};
    Index samples = 10000;
    Index every = 10;
};

struct PipelineConfig {
    std::string fom_kind = "burgers";
    BurgersConfig burgers;
    QuadraticTruthConfig quadratic_truth;
    Index n_modes = 6;
    bool mean_center = false;
    double newton_tolerance = 1e-12;
    int max_newton_iterations = 25;
    Index substeps = 1;
    std::string convection = "central";  // central | upwind
    double prior_relative_scale = 0.01;
    double prior_floor = 1e-6;
    bool prior_scale_is_variance = false;
    double noise_relative_scale = 0.001;
    double noise_floor = 1e-9;
    double noise_min_std = 0.0;  // absolute lower bound on every mode
    double discard_before = 0.0;
    std::array<double, 2> train_window{0.0, 0.2};
    std::array<double, 2> validate_window{0.2, 1.0};
    Index observe_every = 1;
    SmootherConfig smoother;
    RvmSettings rvm;
    SensitivityConfig sensitivity;
    QuantileConfig quantiles;
    std::uint64_t seed = 1;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::string output_dir = "rombayes-out";

    bool is_burgers() const { return fom_kind == "burgers"; }

    /// Length of the simulated horizon after discard_before.
    double horizon() const
    {
        return is_burgers() ? burgers.t_end - discard_before : quadratic_truth.t_end - discard_before;
    }

    void validate() const;
};

namespace detail {

using json = nlohmann::json;

/// Reads keys from one JSON object and rejects anything left unread.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + " has the wrong type");
        }
    }

    void get_optional(const char* key, std::optional<double>& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return;
        if (!it->is_number()) throw ConfigError(where(key) + " must be a number or null");
        out = it->get<double>();
    }

    const json* child(const char* key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() || it->is_null() ? nullptr : &*it;
    }

    std::string where(const std::string& key = {}) const
    {
        std::string p = path_.empty() ? "config" : "config." + path_;
        return key.empty() ? p : p + "." + key;
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key '" + where(it.key()) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

} // namespace detail

inline PipelineConfig parse_config(const nlohmann::json& root)
{
    using detail::ObjectReader;
    PipelineConfig c;
    ObjectReader top(root, "");

    if (const auto* fom = top.child("fom")) {
        ObjectReader r(*fom, "fom");
        r.get("kind", c.fom_kind);
        if (const auto* b = r.child("burgers")) {
            ObjectReader br(*b, "fom.burgers");
            br.get("cells", c.burgers.cells);
            br.get("length", c.burgers.length);
            br.get("nu", c.burgers.nu);
            br.get("boundary", c.burgers.boundary);
            if (const auto* init = br.child("initial")) {
                ObjectReader ir(*init, "fom.burgers.initial");
                ir.get("shape", c.burgers.initial_shape);
                ir.get("amplitude", c.burgers.amplitude);
                ir.get("wavenumber", c.burgers.wavenumber);
                ir.get("center", c.burgers.center);
                ir.get("width", c.burgers.width);
                ir.finish();
            }
            br.get("t_end", c.burgers.t_end);
            br.get("dt", c.burgers.dt);
            br.get("save_every", c.burgers.save_every);
            br.finish();
        }
        if (const auto* q = r.child("quadratic_truth")) {
            ObjectReader qr(*q, "fom.quadratic_truth");
            qr.get("frequencies", c.quadratic_truth.frequencies);
            qr.get("damping", c.quadratic_truth.damping);
            qr.get("coupling", c.quadratic_truth.coupling);
            qr.get("initial", c.quadratic_truth.initial);
            qr.get("t_end", c.quadratic_truth.t_end);
            qr.get("dt", c.quadratic_truth.dt);
            if (const auto* list = qr.child("true_correction")) {
                if (!list->is_array()) throw ConfigError("config.fom.quadratic_truth.true_correction must be an array");
                for (std::size_t i = 0; i < list->size(); ++i) {
                    ObjectReader er((*list)[i], "fom.quadratic_truth.true_correction[" + std::to_string(i) + "]");
                    CorrectionEntry e;
                    er.get("entry", e.entry);
                    er.get("prior_std", e.prior_std);
                    er.finish();
                    c.quadratic_truth.true_correction.push_back(e);
                }
            }
            qr.finish();
        }
        r.finish();
    }
    if (const auto* pod = top.child("pod")) {
        ObjectReader r(*pod, "pod");
        r.get("n_modes", c.n_modes);
        r.get("mean_center", c.mean_center);
        r.finish();
    }
    if (const auto* rom = top.child("rom")) {
        ObjectReader r(*rom, "rom");
        r.get("newton_tolerance", c.newton_tolerance);
        r.get("max_newton_iterations", c.max_newton_iterations);
        r.get("substeps", c.substeps);
        r.get("convection", c.convection);
        r.finish();
    }
    if (const auto* prior = top.child("prior")) {
        ObjectReader r(*prior, "prior");
        r.get("relative_scale", c.prior_relative_scale);
        r.get("floor", c.prior_floor);
        r.get("scale_is_variance", c.prior_scale_is_variance);
        r.finish();
    }
    if (const auto* noise = top.child("noise")) {
        ObjectReader r(*noise, "noise");
        r.get("relative_scale", c.noise_relative_scale);
        r.get("floor", c.noise_floor);
        r.get("min_std", c.noise_min_std);
        r.finish();
    }
    top.get("discard_before", c.discard_before);
    top.get("train_window", c.train_window);
    top.get("validate_window", c.validate_window);
    top.get("observe_every", c.observe_every);
    if (const auto* sm = top.child("smoother")) {
        ObjectReader r(*sm, "smoother");
        r.get("kind", c.smoother.kind);
        r.get("ensemble_size", c.smoother.ensemble_size);
        r.get("pce_degree", c.smoother.pce_degree);
        r.get("pce_samples", c.smoother.pce_samples);
        r.get("max_pce_vars", c.smoother.max_pce_vars);
        r.get("pinv_cutoff", c.smoother.pinv_cutoff);
        r.get("max_diverged_fraction", c.smoother.max_diverged_fraction);
        r.finish();
    }
    if (const auto* rvm = top.child("rvm")) {
        ObjectReader r(*rvm, "rvm");
        r.get("method", c.rvm.method);
        r.get("max_iter", c.rvm.max_iter);
        r.get("prune_threshold", c.rvm.prune_threshold);
        r.get("tol", c.rvm.tol);
        r.get_optional("noise_variance", c.rvm.noise_variance);
        r.get_optional("add_ratio", c.rvm.add_ratio);
        r.finish();
    }
    if (const auto* sens = top.child("sensitivity")) {
        ObjectReader r(*sens, "sensitivity");
        r.get("enabled", c.sensitivity.enabled);
        r.get("pilot_size", c.sensitivity.pilot_size);
        r.get("threshold", c.sensitivity.threshold);
        r.get("method", c.sensitivity.method);
        r.finish();
    }
    if (const auto* q = top.child("quantiles")) {
        ObjectReader r(*q, "quantiles");
        r.get("enabled", c.quantiles.enabled);
        r.get("levels", c.quantiles.levels);
        r.get("samples", c.quantiles.samples);
        r.get("every", c.quantiles.every);
        r.finish();
    }
    top.get("seed", c.seed);
    top.get("threads", c.threads);
    top.get("output_dir", c.output_dir);
    top.finish();
    c.validate();
    return c;
}

inline PipelineConfig parse_config_text(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

inline PipelineConfig load_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline void PipelineConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (fom_kind != "burgers" && fom_kind != "quadratic_truth")
        fail("config.fom.kind must be 'burgers' or 'quadratic_truth'");
    if (is_burgers()) {
        const auto& b = burgers;
        if (b.cells < 3) fail("config.fom.burgers.cells must be at least 3");
        if (!(b.length > 0.0) || !(b.nu >= 0.0)) fail("config.fom.burgers: length must be positive and nu non-negative");
        if (b.boundary != "dirichlet" && b.boundary != "periodic")
            fail("config.fom.burgers.boundary must be 'dirichlet' or 'periodic'");
        if (b.initial_shape != "sine" && b.initial_shape != "gaussian")
            fail("config.fom.burgers.initial.shape must be 'sine' or 'gaussian'");
        if (!(b.dt > 0.0) || !(b.t_end > 0.0) || b.save_every < 1)
            fail("config.fom.burgers: dt, t_end and save_every must be positive");
        if (n_modes < 1) fail("config.pod.n_modes must be positive");
        if (mean_center)
            fail("config.pod.mean_center = true is not supported: the reduced model has no mean-flow terms");
    } else {
        const auto& q = quadratic_truth;
        if (q.frequencies.empty()) fail("config.fom.quadratic_truth.frequencies must not be empty");
        if (q.initial.size() != 2 * q.frequencies.size())
            fail("config.fom.quadratic_truth.initial must have two entries per frequency");
        if (!(q.dt > 0.0) || !(q.t_end > 0.0)) fail("config.fom.quadratic_truth: dt and t_end must be positive");
        const auto n = static_cast<Index>(2 * q.frequencies.size());
        for (const auto& e : q.true_correction) {
            if (e.entry.size() != 2 && e.entry.size() != 3)
                fail("config.fom.quadratic_truth.true_correction entries need 2 (A) or 3 (C) indices");
            for (Index i : e.entry)
                if (i < 0 || i >= n) fail("config.fom.quadratic_truth.true_correction index out of range");
        }
    }
    if (substeps < 1) fail("config.rom.substeps must be at least 1");
    if (convection != "central" && convection != "upwind") fail("config.rom.convection must be 'central' or 'upwind'");
    if (!(newton_tolerance > 0.0) || max_newton_iterations < 1) fail("config.rom: Newton settings must be positive");
    if (!(prior_relative_scale > 0.0)) fail("config.prior.relative_scale must be positive");
    if (!(noise_relative_scale >= 0.0)) fail("config.noise.relative_scale must be non-negative");
    if (!(noise_min_std >= 0.0)) fail("config.noise.min_std must be non-negative");
    if (!(discard_before >= 0.0)) fail("config.discard_before must be non-negative");
    const double h = horizon();
    if (!(h > 0.0)) fail("config.discard_before leaves no simulated horizon");
    auto check_window = [&](const std::array<double, 2>& w, const char* name) {
        if (!(w[0] >= 0.0 && w[1] > w[0] && w[1] <= h * (1.0 + 1e-12)))
            fail(std::string("config.") + name + " must satisfy 0 <= start < end <= simulated horizon");
    };
    check_window(train_window, "train_window");
    check_window(validate_window, "validate_window");
    if (train_window[0] > validate_window[0]) fail("config.train_window must start no later than validate_window");
    if (observe_every < 1) fail("config.observe_every must be at least 1");
    if (smoother.kind != "enkf" && smoother.kind != "pce" && smoother.kind != "both")
        fail("config.smoother.kind must be 'enkf', 'pce' or 'both'");
    if (smoother.ensemble_size < 2) fail("config.smoother.ensemble_size must be at least 2");
    if (smoother.pce_degree < 1) fail("config.smoother.pce_degree must be at least 1");
    if (smoother.pce_samples < 2 || smoother.max_pce_vars < 1) fail("config.smoother: PCE sample and variable counts must be positive");
    if (!(smoother.max_diverged_fraction >= 0.0 && smoother.max_diverged_fraction < 1.0))
        fail("config.smoother.max_diverged_fraction must lie in [0, 1)");
    if (rvm.method != "sequential" && rvm.method != "classic") fail("config.rvm.method must be 'sequential' or 'classic'");
    if (rvm.max_iter < 1 || !(rvm.tol > 0.0) || !(rvm.prune_threshold > 0.0)) fail("config.rvm: invalid iteration settings");
    if (sensitivity.pilot_size < 2) fail("config.sensitivity.pilot_size must be at least 2");
    if (!(sensitivity.threshold > 0.0 && sensitivity.threshold < 1.0)) fail("config.sensitivity.threshold must lie in (0, 1)");
    if (sensitivity.method != "improved" && sensitivity.method != "enkf")
        fail("config.sensitivity.method must be 'improved' or 'enkf'");
    for (double l : quantiles.levels)
        if (!(l > 0.0 && l < 1.0)) fail("config.quantiles.levels must lie in (0, 1)");
    if (quantiles.samples < 2 || quantiles.every < 1) fail("config.quantiles: samples >= 2 and every >= 1 required");
    if (output_dir.empty()) fail("config.output_dir must not be empty");
}

/// Normalised config with every default filled in. Threads and output_dir are
/// left out because they do not change results.
inline nlohmann::json canonical_json(const PipelineConfig& c)
{
    using json = nlohmann::json;
    json j;
    json fom = {{"kind", c.fom_kind}};
    if (c.is_burgers()) {
        const auto& b = c.burgers;
        fom["burgers"] = {{"cells", b.cells},
                          {"length", b.length},
                          {"nu", b.nu},
                          {"boundary", b.boundary},
                          {"initial",
                           {{"shape", b.initial_shape},
                            {"amplitude", b.amplitude},
                            {"wavenumber", b.wavenumber},
                            {"center", b.center},
                            {"width", b.width}}},
                          {"t_end", b.t_end},
                          {"dt", b.dt},
                          {"save_every", b.save_every}};
    } else {
        const auto& q = c.quadratic_truth;
        json corr = json::array();
        for (const auto& e : q.true_correction) corr.push_back({{"entry", e.entry}, {"prior_std", e.prior_std}});
        fom["quadratic_truth"] = {{"frequencies", q.frequencies}, {"damping", q.damping}, {"coupling", q.coupling},
                                  {"initial", q.initial},         {"t_end", q.t_end},     {"dt", q.dt},
                                  {"true_correction", corr}};
    }
    j["fom"] = fom;
    j["pod"] = {{"n_modes", c.n_modes}, {"mean_center", c.mean_center}};
    j["rom"] = {{"newton_tolerance", c.newton_tolerance},
                {"max_newton_iterations", c.max_newton_iterations},
                {"substeps", c.substeps},
                {"convection", c.convection}};
    j["prior"] = {{"relative_scale", c.prior_relative_scale},
                  {"floor", c.prior_floor},
                  {"scale_is_variance", c.prior_scale_is_variance}};
    j["noise"] = {{"relative_scale", c.noise_relative_scale}, {"floor", c.noise_floor}, {"min_std", c.noise_min_std}};
    j["discard_before"] = c.discard_before;
    j["train_window"] = c.train_window;
    j["validate_window"] = c.validate_window;
    j["observe_every"] = c.observe_every;
    j["smoother"] = {{"kind", c.smoother.kind},
                     {"ensemble_size", c.smoother.ensemble_size},
                     {"pce_degree", c.smoother.pce_degree},
                     {"pce_samples", c.smoother.pce_samples},
                     {"max_pce_vars", c.smoother.max_pce_vars},
                     {"pinv_cutoff", c.smoother.pinv_cutoff},
                     {"max_diverged_fraction", c.smoother.max_diverged_fraction}};
    j["rvm"] = {{"method", c.rvm.method},
                {"max_iter", c.rvm.max_iter},
                {"prune_threshold", c.rvm.prune_threshold},
                {"tol", c.rvm.tol},
                {"noise_variance", c.rvm.noise_variance ? json(*c.rvm.noise_variance) : json(nullptr)},
                {"add_ratio", c.rvm.add_ratio ? json(*c.rvm.add_ratio) : json(nullptr)}};
    j["sensitivity"] = {{"enabled", c.sensitivity.enabled},
                        {"pilot_size", c.sensitivity.pilot_size},
                        {"threshold", c.sensitivity.threshold},
                        {"method", c.sensitivity.method}};
    j["quantiles"] = {{"enabled", c.quantiles.enabled},
                      {"levels", c.quantiles.levels},
                      {"samples", c.quantiles.samples},
                      {"every", c.quantiles.every}};
    j["seed"] = c.seed;
    return j;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    for (unsigned char ch : data) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace rombayes

#endif
