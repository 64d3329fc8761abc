#ifndef ROMBAYES_PIPELINE_HPP
#define ROMBAYES_PIPELINE_HPP

#include "rombayes/config.hpp"
#include "rombayes/fom.hpp"
#include "rombayes/sensitivity.hpp"
#include "rombayes/text_io.hpp"

#include <filesystem>
#include <iostream>
#include <limits>
#include <numeric>

namespace rombayes {

inline constexpr const char* report_schema = "rom-bayes/1";
inline constexpr const char* library_version = "0.1.0";

// ---------------------------------------------------------------------------
// Quantile bands
// ---------------------------------------------------------------------------

/// Nearest-rank empirical quantile of sorted values: the ceil(level * n)-th
/// smallest, so two samples give the min/max pair at 0.5% / 99.5%.
inline double nearest_rank(const std::vector<double>& sorted, double level)
{
    require(!sorted.empty(), "nearest_rank: no samples");
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::ptrdiff_t>(std::ceil(level * n)) - 1;
    rank = std::clamp<std::ptrdiff_t>(rank, 0, static_cast<std::ptrdiff_t>(sorted.size()) - 1);
    return sorted[static_cast<std::size_t>(rank)];
}

struct QuantileBands {
    Vector times;
    std::vector<double> levels;
    std::vector<Matrix> values;  // per level: n_times x n_modes
    Index members_used = 0;
    Index members_diverged = 0;
};

struct QuantileOptions {
    std::size_t threads = 1;
    IntegratorOptions integrator;
    double max_diverged_fraction = 0.1;
    /// Keep every k-th time of the integration grid.
    Index every = 1;
};

/// Integrates the corrected ROM for each parameter row and takes per-mode
/// empirical quantiles over the member trajectories.
inline QuantileBands compute_quantile_bands(const Matrix& parameters, const ReducedSystem& system, const Vector& a0,
                                           const Vector& times, const std::vector<double>& levels,
                                           const QuantileOptions& options = {})
{
    const Index n = system.n_modes();
    require_dims(parameters.cols() == correction_size(n), "compute_quantile_bands: parameter width must equal n^2 (1 + n)");
    require(parameters.rows() >= 1, "compute_quantile_bands: no samples");
    require(options.every >= 1, "compute_quantile_bands: every must be positive");
    for (double l : levels) require(l > 0.0 && l < 1.0, "compute_quantile_bands: levels must lie in (0, 1)");

    std::vector<Index> keep;
    for (Index i = 0; i < times.size(); i += options.every) keep.push_back(i);
    const auto nk = static_cast<Index>(keep.size());
    const Index z = parameters.rows();
    std::vector<Matrix> traj(static_cast<std::size_t>(z));
    std::vector<char> ok(static_cast<std::size_t>(z), 0);
    parallel_for(static_cast<std::size_t>(z), options.threads, [&](std::size_t i) {
        CorrectionVector q{n, parameters.row(static_cast<Index>(i)).transpose()};
        try {
            Matrix states = integrate_rom(system, q, a0, times, options.integrator).states;
            Matrix kept(nk, n);
            for (Index r = 0; r < nk; ++r) kept.row(r) = states.row(keep[static_cast<std::size_t>(r)]);
            traj[i] = std::move(kept);
            ok[i] = 1;
        } catch (const DivergenceError&) {
        } catch (const StepFailureError&) {
        }
    });

    QuantileBands bands;
    bands.levels = levels;
    bands.times.resize(nk);
    for (Index r = 0; r < nk; ++r) bands.times[r] = times[keep[static_cast<std::size_t>(r)]];
    std::vector<Index> good;
    for (Index i = 0; i < z; ++i)
        if (ok[static_cast<std::size_t>(i)]) good.push_back(i);
    bands.members_used = static_cast<Index>(good.size());
    bands.members_diverged = z - bands.members_used;
    if (good.empty() || static_cast<double>(bands.members_diverged) > options.max_diverged_fraction * static_cast<double>(z)) {
        std::ostringstream msg;
        msg << "compute_quantile_bands: " << bands.members_diverged << " of " << z << " trajectories diverged";
        throw DivergenceError(msg.str(), 0);
    }
    for (std::size_t l = 0; l < levels.size(); ++l) bands.values.emplace_back(nk, n);
    std::vector<double> column(good.size());
    for (Index r = 0; r < nk; ++r) {
        for (Index m = 0; m < n; ++m) {
            for (std::size_t g = 0; g < good.size(); ++g) column[g] = traj[static_cast<std::size_t>(good[g])](r, m);
            std::sort(column.begin(), column.end());
            for (std::size_t l = 0; l < levels.size(); ++l) bands.values[l](r, m) = nearest_rank(column, levels[l]);
        }
    }
    return bands;
}

/// Full correction vectors drawn from a PCE posterior over the variables in
/// `active`; the other entries stay at `base`.
inline Matrix pce_parameter_samples(const PceExpansion& posterior, const std::vector<Index>& active, const Vector& base,
                                    Index count, std::uint64_t seed)
{
    const auto m = static_cast<Index>(active.size());
    require_dims(posterior.outputs() == m && posterior.index_set->n_vars() == m,
                 "pce_parameter_samples: expansion does not match the active set");
    Matrix xi(count, m);
    for (Index i = 0; i < count; ++i) {
        auto engine = stream_engine(seed, streams::germ, static_cast<std::uint64_t>(i));
        for (Index k = 0; k < m; ++k) xi(i, k) = standard_normal(engine);
    }
    const Matrix values = posterior.evaluate(xi);  // m x count
    Matrix out = base.transpose().replicate(count, 1);
    for (Index k = 0; k < m; ++k) out.col(active[static_cast<std::size_t>(k)]) = values.row(k).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Stage results
// ---------------------------------------------------------------------------

/// Everything downstream of simulate / POD / assembly.
struct ModelSetup {
    ReducedSystem system;
    Vector times;                 // integration grid, starting at 0
    Index substeps = 1;           // integration grid points per data interval
    Vector data_times;            // data grid, starting at 0
    Matrix data;                  // reference coefficients on the data grid
    Vector a0;
    std::optional<PodBasis> basis;
    std::optional<SnapshotMatrix> reference;  // full-order snapshots on the data grid
    std::optional<CorrectionVector> true_correction;
    double energy_fraction = 1.0;

    /// Integration-grid row of data row i.
    Index fine(Index i) const { return i * substeps; }
};

struct SparsitySummary {
    std::vector<SparsityRow> entries;
    Index terms = 0;
};

struct IdentifyResult {
    GaussianPrior prior;          // with the screening mask applied
    NoiseModel noise;
    std::vector<Index> obs_rows;  // data-grid rows used as observations
    std::optional<SensitivityReport> sensitivity;
    std::optional<Ensemble> enkf_posterior;
    std::optional<Vector> enkf_mean;
    std::optional<PceExpansion> pce_posterior;
    std::vector<Index> pce_active;
    std::optional<Vector> pce_mean;
    std::optional<Vector> sobol_first;
    SparsitySummary sparsity;
    Warnings warnings;
};

struct ModeBands {
    Vector times;
    std::vector<std::pair<std::string, Matrix>> columns;  // name -> n_times x n_modes
};

struct RunReport {
    Vector times;  // validation grid
    Vector eps_uncorrected;
    Vector eps_projection;
    std::optional<Vector> eps_enkf;
    std::optional<Vector> eps_pce;
    std::optional<ModeBands> quantiles;
    std::optional<SensitivityReport> sensitivity;
    SparsitySummary sparsity;
    std::vector<Index> sobol_variables;  // parameter index of each germ variable
    Vector sobol_first;
    Index parameter_count = 0;
    Index active_count = 0;
    double energy_fraction = 1.0;
    std::string config_hash;
    nlohmann::json config;
    std::vector<std::string> skipped;
    Warnings warnings;
};

/// Error raised inside a stage, prefixed with the stage name.
class StageError : public Error {
public:
    StageError(const std::string& stage, const std::string& what) : Error("stage '" + stage + "': " + what), stage_(stage) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// ---------------------------------------------------------------------------
// Model construction helpers
// ---------------------------------------------------------------------------

/// Lightly damped oscillator pairs (a_2p, a_2p+1) at the given frequencies,
/// coupled by energy-conserving quadratic triads within each block of three
/// pairs.
inline ReducedSystem oscillator_system(const QuadraticTruthConfig& q)
{
    const auto pairs = static_cast<Index>(q.frequencies.size());
    const Index n = 2 * pairs;
    ReducedSystem sys = ReducedSystem::zeros(n, 1.0);
    for (Index p = 0; p < pairs; ++p) {
        const double w = q.frequencies[static_cast<std::size_t>(p)];
        sys.diffusion(2 * p, 2 * p) = -q.damping;
        sys.diffusion(2 * p + 1, 2 * p + 1) = -q.damping;
        sys.diffusion(2 * p, 2 * p + 1) = w;
        sys.diffusion(2 * p + 1, 2 * p) = -w;
    }
    // i gains c a_j a_k while j loses c a_i a_k, so a . (a^T C a) = 0.
    auto triad = [&](Index i, Index j, Index k, double c) {
        sys.convection(i, j, k) += c;
        sys.convection(j, i, k) -= c;
    };
    const double c = q.coupling;
    for (Index b = 0; b + 6 <= n; b += 6) {
        triad(b + 0, b + 2, b + 4, c);
        triad(b + 1, b + 3, b + 5, c);
        triad(b + 0, b + 3, b + 5, -c);
        triad(b + 2, b + 5, b + 1, c);
    }
    return sys;
}

inline CorrectionVector truth_correction(const QuadraticTruthConfig& q, const GaussianPrior& prior, Index n)
{
    CorrectionVector c = CorrectionVector::zeros(n);
    for (const auto& e : q.true_correction) {
        Index k = e.entry.size() == 2 ? e.entry[0] * n + e.entry[1]
                                      : n * n + (e.entry[0] * n + e.entry[1]) * n + e.entry[2];
        c.values[k] += e.prior_std * prior.std[k];
    }
    return c;
}

inline PriorOptions prior_options(const PipelineConfig& c)
{
    return {c.prior_relative_scale, c.prior_floor, c.prior_scale_is_variance};
}

inline IntegratorOptions integrator_options(const PipelineConfig& c)
{
    return {c.newton_tolerance, c.max_newton_iterations};
}

inline RvmConfig rvm_config(const PipelineConfig& c)
{
    RvmConfig r;
    r.method = c.rvm.method == "classic" ? RvmMethod::classic : RvmMethod::sequential;
    r.max_iter = c.rvm.max_iter;
    r.prune_threshold = c.rvm.prune_threshold;
    r.tol = c.rvm.tol;
    r.noise_variance = c.rvm.noise_variance;
    r.add_ratio = c.rvm.add_ratio;
    return r;
}

inline ConvectionScheme convection_scheme(const PipelineConfig& c)
{
    return c.convection == "upwind" ? ConvectionScheme::upwind : ConvectionScheme::central;
}

inline Vector burgers_initial(const BurgersConfig& b, const Grid1D& grid)
{
    const double pi = std::numbers::pi;
    Vector u(grid.n_cells());
    for (Index i = 0; i < grid.n_cells(); ++i) {
        const double x = grid.center(i);
        if (b.initial_shape == "sine") {
            const double k = b.boundary == "periodic" ? 2.0 * pi * b.wavenumber : pi * b.wavenumber;
            u[i] = b.amplitude * std::sin(k * x / b.length);
        } else {
            const double r = (x - b.center * b.length) / (b.width * b.length);
            u[i] = b.amplitude * std::exp(-r * r);
        }
    }
    return u;
}

inline Boundary burgers_boundary(const BurgersConfig& b)
{
    return b.boundary == "periodic" ? Boundary::periodic() : Boundary::dirichlet(0.0, 0.0);
}

/// Inserts substeps - 1 equally spaced points into every interval.
inline Vector refine_grid(const Vector& times, Index substeps)
{
    if (substeps == 1 || times.size() < 2) return times;
    Vector out((times.size() - 1) * substeps + 1);
    for (Index i = 0; i + 1 < times.size(); ++i)
        for (Index s = 0; s < substeps; ++s)
            out[i * substeps + s] = times[i] + (times[i + 1] - times[i]) * static_cast<double>(s) / static_cast<double>(substeps);
    out[out.size() - 1] = times[times.size() - 1];
    return out;
}

inline std::vector<Index> rows_in_window(const Vector& times, const std::array<double, 2>& window)
{
    const double slack = 1e-9 * (1.0 + std::abs(window[1]));
    std::vector<Index> rows;
    for (Index i = 0; i < times.size(); ++i)
        if (times[i] >= window[0] - slack && times[i] <= window[1] + slack) rows.push_back(i);
    return rows;
}

/// Time-major observation vector built from data rows.
inline Vector observation_vector(const Matrix& data, const std::vector<Index>& rows)
{
    return flatten_observations(data, rows);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

class Pipeline {
public:
    explicit Pipeline(PipelineConfig config, std::ostream* log = nullptr)
        : config_(std::move(config)), log_(log), threads_(config_.threads == 0 ? default_threads() : config_.threads)
    {
        config_.validate();
        const nlohmann::json canon = canonical_json(config_);
        auto h = [](const nlohmann::json& j, std::uint64_t seed) { return fnv1a(j.dump(), seed); };
        const nlohmann::json& fom = canon["fom"];
        hash_sim_ = h(fom, fnv1a("simulate"));
        if (!config_.is_burgers()) hash_sim_ = h(canon["prior"], hash_sim_);
        hash_pod_ = h({canon["pod"], canon["discard_before"]}, hash_sim_);
        hash_rom_ = h(canon["rom"], hash_pod_);
        hash_sens_ = h({canon["prior"], canon["noise"], canon["train_window"], canon["observe_every"], canon["rvm"],
                        canon["sensitivity"], canon["seed"]},
                       hash_rom_);
        hash_id_ = h({canon["smoother"], canon["rvm"]}, hash_sens_);
        hash_all_ = h(canon, 0xcbf29ce484222325ULL);
    }

    const PipelineConfig& config() const noexcept { return config_; }
    std::string config_hash() const { return hex64(hash_all_); }
    std::filesystem::path output_dir() const { return config_.output_dir; }
    std::filesystem::path cache_dir() const { return std::filesystem::path(config_.output_dir) / "cache"; }

    // --- simulate ------------------------------------------------------------

    /// Burgers: full-order snapshots from t = 0. Quadratic truth: the true
    /// coefficient trajectory wrapped as unit-weight snapshots.
    const SnapshotMatrix& simulation()
    {
        if (simulation_) return *simulation_;
        stage("simulate", [&] {
            const auto path = cache_path("simulate", hash_sim_, ".txt");
            if (std::filesystem::exists(path)) {
                note("simulate: cached " + path.string());
                simulation_ = io::read_file(path.string(), [](std::istream& is) { return io::read_snapshots(is); });
                return;
            }
            SnapshotMatrix snaps;
            if (config_.is_burgers()) {
                const auto& b = config_.burgers;
                Grid1D grid(b.cells, 0.0, b.length);
                BurgersSetup setup{grid, b.nu, burgers_initial(b, grid), burgers_boundary(b), b.t_end, b.dt, b.save_every};
                snaps = simulate_burgers(setup);
            } else {
                const auto& q = config_.quadratic_truth;
                QuadraticTruth truth{oscillator_system(q), {}};
                GaussianPrior prior = build_prior(truth.system, prior_options(config_));
                truth.true_correction = truth_correction(q, prior, truth.dim());
                Vector times = quadratic_grid();
                Vector a0 = Eigen::Map<const Vector>(q.initial.data(), static_cast<Index>(q.initial.size()));
                snaps = as_snapshots(simulate_quadratic_truth(truth, a0, times, integrator_options(config_)), times);
            }
            write_cache(path, [&](std::ostream& os) { io::write_snapshots(os, snaps); });
            simulation_ = std::move(snaps);
        });
        return *simulation_;
    }

    // --- POD -----------------------------------------------------------------

    /// Burgers only; snapshots from discard_before onwards.
    const PodBasis& basis()
    {
        if (basis_) return *basis_;
        require(config_.is_burgers(), "POD is only defined for the burgers model");
        const SnapshotMatrix& kept = retained_snapshots();
        stage("pod", [&] {
            const auto path = cache_path("basis", hash_pod_, ".txt");
            if (std::filesystem::exists(path)) {
                note("pod: cached " + path.string());
                basis_ = io::read_file(path.string(), [](std::istream& is) { return io::read_basis(is); });
                return;
            }
            PodBasis b = compute_pod(kept, config_.n_modes, PodOptions{config_.mean_center});
            write_cache(path, [&](std::ostream& os) { io::write_basis(os, b); });
            basis_ = std::move(b);
        });
        return *basis_;
    }

    // --- ROM assembly ----------------------------------------------------------

    const ModelSetup& model()
    {
        if (model_) return *model_;
        const SnapshotMatrix& sim = simulation();
        ModelSetup m;
        if (config_.is_burgers()) {
            const PodBasis& b = basis();
            stage("rom", [&] {
                const auto path = cache_path("rom", hash_rom_, ".txt");
                if (std::filesystem::exists(path)) {
                    note("rom: cached " + path.string());
                    m.system = io::read_file(path.string(), [](std::istream& is) { return io::read_rom(is); });
                } else {
                    const auto& bc = config_.burgers;
                    m.system = assemble_reduced_operators(b, Grid1D(bc.cells, 0.0, bc.length), bc.nu, burgers_boundary(bc),
                                                          convection_scheme(config_));
                    write_cache(path, [&](std::ostream& os) { io::write_rom(os, m.system); });
                }
            });
            SnapshotMatrix ref = retained_snapshots();
            const double t0 = ref.times[0];
            ref.times.array() -= t0;
            m.data = project_snapshots(ref, b).coefficients;
            m.data_times = ref.times;
            m.basis = b;
            m.energy_fraction = energy_fraction(b, ref, b.n_modes());
            m.reference = std::move(ref);
        } else {
            m.system = oscillator_system(config_.quadratic_truth);
            GaussianPrior prior = build_prior(m.system, prior_options(config_));
            m.true_correction = truth_correction(config_.quadratic_truth, prior, m.system.n_modes());
            SnapshotMatrix kept = retained(sim);
            const double t0 = kept.times[0];
            m.data_times = kept.times.array() - t0;
            m.data = kept.values.transpose();
        }
        m.a0 = m.data.row(0).transpose();
        m.substeps = config_.substeps;
        m.times = refine_grid(m.data_times, m.substeps);
        model_ = std::move(m);
        return *model_;
    }

    // --- sensitivity -------------------------------------------------------------

    /// Prior (unmasked), noise and observation rows.
    IdentifyResult observation_setup()
    {
        const ModelSetup& m = model();
        IdentifyResult r;
        r.prior = build_prior(m.system, prior_options(config_));
        r.warnings.insert(r.warnings.end(), r.prior.warnings.begin(), r.prior.warnings.end());
        const std::vector<Index> train = rows_in_window(m.data_times, config_.train_window);
        require(!train.empty(), "train_window contains no data times");
        MeasurementSet train_data;
        train_data.coefficients.resize(static_cast<Index>(train.size()), m.data.cols());
        for (std::size_t i = 0; i < train.size(); ++i) train_data.coefficients.row(static_cast<Index>(i)) = m.data.row(train[i]);
        r.noise = default_noise(train_data, NoiseOptions{config_.noise_relative_scale, config_.noise_floor});
        r.noise.std_per_mode = r.noise.std_per_mode.cwiseMax(config_.noise_min_std);
        r.warnings.insert(r.warnings.end(), r.noise.warnings.begin(), r.noise.warnings.end());
        for (Index row : train)
            if (row > 0 && row % config_.observe_every == 0) r.obs_rows.push_back(row);
        if (r.obs_rows.empty())
            throw ConfigError("no observation falls in train_window; lower observe_every or widen the window");
        return r;
    }

    const SensitivityReport& sensitivity()
    {
        if (sensitivity_) return *sensitivity_;
        require(config_.sensitivity.enabled, "sensitivity screening is disabled in the config");
        const ModelSetup& m = model();
        IdentifyResult setup = observation_setup();
        stage("sensitivity", [&] {
            const auto path = cache_path("sensitivity", hash_sens_, ".json");
            if (std::filesystem::exists(path)) {
                note("sensitivity: cached " + path.string());
                nlohmann::json j = read_json(path);
                SensitivityReport rep;
                rep.ratio = to_vector(j.at("ratio"));
                rep.active_set = j.at("active_set").get<std::vector<Index>>();
                rep.threshold = j.at("threshold").get<double>();
                rep.warnings = j.at("warnings").get<Warnings>();
                sensitivity_ = std::move(rep);
                return;
            }
            const auto& sc = config_.sensitivity;
            Ensemble pilot = sample_prior(setup.prior, sc.pilot_size, config_.seed + 1);
            ForecastSet fc = forecast(pilot, setup.obs_rows, setup.noise, config_.seed + 2);
            SensitivityReport rep;
            rep.threshold = sc.threshold;
            if (sc.method == "improved") {
                Matrix q = valid_rows(pilot.members, fc.valid);
                Matrix y = valid_rows(fc.noiseless, fc.valid);
                LinearMap map = estimate_linear_map(q, y, LinearMapOptions{rvm_config(config_), threads_});
                Vector c_eps = observation_variances(setup.noise, static_cast<Index>(setup.obs_rows.size()));
                KalmanGain k = improved_kalman_gain(map.h, setup.prior, c_eps.asDiagonal(), config_.smoother.pinv_cutoff);
                rep.ratio = variance_ratio(setup.prior, linear_posterior_variance(k.gain, map.h, setup.prior));
            } else {
                Vector y = observation_vector(m.data, setup.obs_rows);
                EnkfUpdate up = enkf_update(pilot, fc, y, EnkfOptions{config_.smoother.pinv_cutoff});
                Matrix post = up.posterior.members;
                Matrix centered = post.rowwise() - post.colwise().mean();
                Vector var = centered.colwise().squaredNorm().transpose() / static_cast<double>(post.rows() - 1);
                rep.ratio = variance_ratio(setup.prior, var);
            }
            ScreeningResult screen = screen_variables(rep.ratio, sc.threshold);
            rep.active_set = screen.active_set;
            rep.warnings = screen.warnings;
            nlohmann::json j = {{"ratio", to_json(rep.ratio)},
                                {"active_set", rep.active_set},
                                {"threshold", rep.threshold},
                                {"warnings", rep.warnings}};
            write_cache(path, [&](std::ostream& os) { os << j.dump(1) << '\n'; });
            sensitivity_ = std::move(rep);
        });
        return *sensitivity_;
    }

    // --- identification ----------------------------------------------------------

    const IdentifyResult& identification()
    {
        if (identify_) return *identify_;
        const ModelSetup& m = model();
        IdentifyResult r = observation_setup();
        if (config_.sensitivity.enabled) {
            const SensitivityReport& sens = sensitivity();
            r.sensitivity = sens;
            r.warnings.insert(r.warnings.end(), sens.warnings.begin(), sens.warnings.end());
            if (!sens.active_set.empty()) {
                std::fill(r.prior.active_mask.begin(), r.prior.active_mask.end(), false);
                for (Index k : sens.active_set) r.prior.active_mask[static_cast<std::size_t>(k)] = true;
            }
        }
        stage("identify", [&] {
            const auto path = cache_path("identify", hash_id_, ".json");
            const auto enkf_path = cache_path("identify", hash_id_, "-enkf.txt");
            const auto pce_path = cache_path("identify", hash_id_, "-pce.txt");
            if (std::filesystem::exists(path)) {
                note("identify: cached " + path.string());
                load_identify(r, path, enkf_path, pce_path);
                return;
            }
            const Vector y = observation_vector(m.data, r.obs_rows);
            const auto& sm = config_.smoother;
            if (sm.run_enkf()) {
                Ensemble ens = sample_prior(r.prior, sm.ensemble_size, config_.seed);
                ForecastSet fc = forecast(ens, r.obs_rows, r.noise, config_.seed + 2);
                EnkfUpdate up = enkf_update(ens, fc, y, EnkfOptions{sm.pinv_cutoff});
                r.enkf_mean = up.posterior.mean();
                r.enkf_posterior = std::move(up.posterior);
                if (fc.n_valid() < ens.size()) r.warnings.push_back(std::to_string(ens.size() - fc.n_valid()) + " EnKF members diverged and were dropped");
            }
            if (sm.run_pce()) identify_pce(r, y);
            write_identify(r, path, enkf_path, pce_path);
        });
        identify_ = std::move(r);
        return *identify_;
    }

    // --- validation ----------------------------------------------------------------

    RunReport validation()
    {
        const ModelSetup& m = model();
        const IdentifyResult& id = identification();
        RunReport rep;
        stage("validate", [&] {
            const std::vector<Index> rows = rows_in_window(m.data_times, config_.validate_window);
            require(!rows.empty(), "validate_window contains no data times");
            rep.times.resize(static_cast<Index>(rows.size()));
            for (std::size_t i = 0; i < rows.size(); ++i) rep.times[static_cast<Index>(i)] = m.data_times[rows[i]];
            const CorrectionVector zero = CorrectionVector::zeros(m.system.n_modes());
            rep.eps_uncorrected = error_series(trajectory(zero), rows);
            rep.eps_projection = projection_error(rows);
            if (id.enkf_mean) rep.eps_enkf = error_series(trajectory({m.system.n_modes(), *id.enkf_mean}), rows);
            else rep.skipped.push_back("eps_enkf");
            if (id.pce_mean) rep.eps_pce = error_series(trajectory({m.system.n_modes(), *id.pce_mean}), rows);
            else rep.skipped.push_back("eps_pce");
            if (config_.quantiles.enabled) rep.quantiles = quantile_bands(id, rep.warnings);
            else rep.skipped.push_back("quantiles");
        });
        rep.sensitivity = id.sensitivity;
        if (!id.sensitivity) rep.skipped.push_back("sensitivity");
        rep.sparsity = id.sparsity;
        if (id.sparsity.entries.empty()) rep.skipped.push_back("sparsity");
        if (id.sobol_first) {
            rep.sobol_variables = id.pce_active;
            rep.sobol_first = *id.sobol_first;
        }
        rep.parameter_count = id.prior.size();
        rep.active_count = id.prior.n_active();
        rep.energy_fraction = m.energy_fraction;
        rep.config_hash = config_hash();
        rep.config = canonical_json(config_);
        rep.warnings.insert(rep.warnings.begin(), id.warnings.begin(), id.warnings.end());
        return rep;
    }

    /// Corrected ROM on the data grid.
    Matrix trajectory(const CorrectionVector& q)
    {
        const ModelSetup& m = model();
        Matrix fine = integrate_rom(m.system, q, m.a0, m.times, integrator_options(config_)).states;
        if (m.substeps == 1) return fine;
        Matrix out(m.data_times.size(), fine.cols());
        for (Index i = 0; i < out.rows(); ++i) out.row(i) = fine.row(m.fine(i));
        return out;
    }

    /// eps(t) against the reference on the given data rows.
    Vector error_series(const Matrix& coeffs, const std::vector<Index>& rows)
    {
        const ModelSetup& m = model();
        const auto k = static_cast<Index>(rows.size());
        Matrix sub(k, coeffs.cols());
        Vector t(k);
        for (Index i = 0; i < k; ++i) {
            sub.row(i) = coeffs.row(rows[static_cast<std::size_t>(i)]);
            t[i] = m.data_times[rows[static_cast<std::size_t>(i)]];
        }
        if (m.basis) {
            SnapshotMatrix ref;
            ref.values.resize(m.reference->n_cells(), k);
            for (Index i = 0; i < k; ++i) ref.values.col(i) = m.reference->values.col(rows[static_cast<std::size_t>(i)]);
            ref.times = t;
            ref.weights = m.reference->weights;
            return relative_l2_error(ref, reconstruct(sub, *m.basis, t)).values;
        }
        Matrix truth(k, coeffs.cols());
        for (Index i = 0; i < k; ++i) truth.row(i) = m.data.row(rows[static_cast<std::size_t>(i)]);
        return relative_l2_error(as_snapshots(truth, t), as_snapshots(sub, t)).values;
    }

    RunReport run()
    {
        RunReport rep = validation();
        emit_report(rep, config_.output_dir);
        return rep;
    }

private:
    template <class F>
    void stage(const std::string& name, F&& body)
    {
        try {
            body();
        } catch (const StageError&) {
            throw;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
    }

    void note(const std::string& msg)
    {
        if (log_) *log_ << msg << '\n';
    }

    std::filesystem::path cache_path(const std::string& stage_name, std::uint64_t hash, const std::string& suffix) const
    {
        return cache_dir() / (stage_name + "-" + hex64(hash) + suffix);
    }

    template <class Writer>
    void write_cache(const std::filesystem::path& path, Writer&& w)
    {
        std::filesystem::create_directories(path.parent_path());
        // Write then rename so an interrupted run never leaves a partial artifact.
        const auto tmp = path.string() + ".partial";
        io::write_file(tmp, std::forward<Writer>(w));
        std::filesystem::rename(tmp, path);
    }

    static nlohmann::json read_json(const std::filesystem::path& path)
    {
        std::ifstream is(path);
        if (!is) throw Error("cannot open '" + path.string() + "'");
        try {
            return nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& e) {
            throw Error(path.string() + ": " + e.what());
        }
    }

    static nlohmann::json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

    static Vector to_vector(const nlohmann::json& j)
    {
        auto v = j.get<std::vector<double>>();
        return Eigen::Map<Vector>(v.data(), static_cast<Index>(v.size()));
    }

    static Matrix valid_rows(const Matrix& m, const std::vector<bool>& valid)
    {
        std::vector<Index> keep;
        for (Index i = 0; i < m.rows(); ++i)
            if (valid.empty() || valid[static_cast<std::size_t>(i)]) keep.push_back(i);
        Matrix out(static_cast<Index>(keep.size()), m.cols());
        for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Index>(i)) = m.row(keep[i]);
        return out;
    }

    Vector quadratic_grid() const
    {
        const auto& q = config_.quadratic_truth;
        const auto steps = static_cast<Index>(std::llround(q.t_end / q.dt));
        if (steps < 1 || std::abs(static_cast<double>(steps) * q.dt - q.t_end) > 1e-9 * q.t_end)
            throw ConfigError("config.fom.quadratic_truth.t_end must be an integer multiple of dt");
        Vector t(steps + 1);
        for (Index i = 0; i <= steps; ++i) t[i] = static_cast<double>(i) * q.dt;
        return t;
    }

    /// Columns with t >= discard_before.
    SnapshotMatrix retained(const SnapshotMatrix& s) const
    {
        const double slack = 1e-9 * (1.0 + std::abs(config_.discard_before));
        Index first = 0;
        while (first < s.n_times() && s.times[first] < config_.discard_before - slack) ++first;
        if (first >= s.n_times() - 1) throw ConfigError("config.discard_before leaves fewer than two snapshots");
        SnapshotMatrix out;
        out.values = s.values.rightCols(s.n_times() - first);
        out.times = s.times.tail(s.n_times() - first);
        out.weights = s.weights;
        return out;
    }

    const SnapshotMatrix& retained_snapshots()
    {
        if (!retained_) retained_ = retained(simulation());
        return *retained_;
    }

    ForecastSet forecast(const Ensemble& ens, const std::vector<Index>& obs_rows, const NoiseModel& noise, std::uint64_t seed)
    {
        const ModelSetup& m = model();
        std::vector<Index> fine_rows;
        for (Index r : obs_rows) fine_rows.push_back(m.fine(r));
        const Vector times = m.times.head(fine_rows.back() + 1);
        ForecastOptions fo{threads_, config_.smoother.max_diverged_fraction, integrator_options(config_)};
        return forecast_ensemble(ens, m.system, m.a0, times, fine_rows, noise, seed, fo);
    }

    void identify_pce(IdentifyResult& r, const Vector& y)
    {
        const ModelSetup& m = model();
        const auto& sm = config_.smoother;
        std::vector<Index> active;
        for (Index k = 0; k < r.prior.size(); ++k)
            if (r.prior.active_mask[static_cast<std::size_t>(k)] && r.prior.std[k] > 0.0) active.push_back(k);
        if (static_cast<Index>(active.size()) > sm.max_pce_vars) {
            if (!r.sensitivity)
                throw ConfigError("PCE over " + std::to_string(active.size()) + " variables exceeds smoother.max_pce_vars = " +
                                  std::to_string(sm.max_pce_vars) + "; enable sensitivity screening or raise the cap");
            const Vector& j = r.sensitivity->ratio;
            std::stable_sort(active.begin(), active.end(), [&](Index a, Index b) { return j[a] < j[b]; });
            active.resize(static_cast<std::size_t>(sm.max_pce_vars));
            std::sort(active.begin(), active.end());
            r.warnings.push_back("PCE restricted to the " + std::to_string(sm.max_pce_vars) + " most informed variables");
        }
        const auto nv = static_cast<Index>(active.size());
        // Germ samples are the standardised prior draws, so EnKF and PCE see the
        // same prior samples when both run.
        GaussianPrior sub = r.prior;
        std::fill(sub.active_mask.begin(), sub.active_mask.end(), false);
        for (Index k : active) sub.active_mask[static_cast<std::size_t>(k)] = true;
        Ensemble draws = sample_prior(sub, sm.pce_samples, config_.seed);
        Matrix xi(draws.size(), nv);
        for (Index k = 0; k < nv; ++k) {
            const Index g = active[static_cast<std::size_t>(k)];
            xi.col(k) = (draws.members.col(g).array() - sub.mean[g]) / sub.std[g];
        }
        NoiseModel silent{Vector::Zero(m.system.n_modes()), {}};
        ForecastSet fc = forecast(draws, r.obs_rows, silent, config_.seed + 3);
        Matrix xi_ok = valid_rows(xi, fc.valid);
        Matrix y_ok = valid_rows(fc.noiseless, fc.valid);
        if (fc.n_valid() < draws.size())
            r.warnings.push_back(std::to_string(draws.size() - fc.n_valid()) + " PCE training samples diverged and were dropped");

        auto set = std::make_shared<const MultiIndexSet>(build_multiindex(static_cast<int>(nv), sm.pce_degree));
        PceFit fit = fit_forecast_pce(xi_ok, y_ok, set, rvm_config(config_), threads_);
        r.sparsity.entries = fit.sparsity;
        r.sparsity.terms = set->size();
        Vector mean(nv), sd(nv);
        for (Index k = 0; k < nv; ++k) {
            mean[k] = sub.mean[active[static_cast<std::size_t>(k)]];
            sd[k] = sub.std[active[static_cast<std::size_t>(k)]];
        }
        PceExpansion prior_pce = linear_gaussian_pce(mean, sd, sm.pce_degree);
        const Vector norms = basis_norms(*set);
        GmkResult g = gmk_pce_update(prior_pce, fit.expansion, y,
                                     observation_variances(r.noise, static_cast<Index>(r.obs_rows.size())), norms,
                                     GmkOptions{sm.pinv_cutoff});
        Vector full = r.prior.mean;
        for (Index k = 0; k < nv; ++k) full[active[static_cast<std::size_t>(k)]] = g.posterior.coefficients(k, 0);
        r.pce_mean = full;
        r.pce_posterior = std::move(g.posterior);
        r.pce_active = active;
        SobolResult sob = sobol_first_order(fit.expansion, norms);
        r.sobol_first = sob.first_order;
        // Summarise fit warnings; one per output would flood the report.
        if (!fit.warnings.empty())
            r.warnings.push_back(std::to_string(fit.warnings.size()) + " RVM fit warnings, first: " + fit.warnings.front());
    }

    void write_identify(const IdentifyResult& r, const std::filesystem::path& path, const std::filesystem::path& enkf_path,
                        const std::filesystem::path& pce_path)
    {
        nlohmann::json j;
        j["warnings"] = r.warnings;
        if (r.enkf_posterior) {
            write_cache(enkf_path, [&](std::ostream& os) { io::write_ensemble(os, r.enkf_posterior->members, r.enkf_posterior->seed); });
            j["enkf_mean"] = to_json(*r.enkf_mean);
        }
        if (r.pce_posterior) {
            write_cache(pce_path, [&](std::ostream& os) { io::write_pce(os, *r.pce_posterior); });
            j["pce_mean"] = to_json(*r.pce_mean);
            j["pce_active"] = r.pce_active;
            j["sobol_first"] = to_json(*r.sobol_first);
            nlohmann::json sp = nlohmann::json::array();
            for (const auto& e : r.sparsity.entries) sp.push_back({e.output_index, e.n_active, e.n_terms, e.sigma2});
            j["sparsity"] = sp;
            j["sparsity_terms"] = r.sparsity.terms;
        }
        write_cache(path, [&](std::ostream& os) { os << j.dump(1) << '\n'; });
    }

    void load_identify(IdentifyResult& r, const std::filesystem::path& path, const std::filesystem::path& enkf_path,
                       const std::filesystem::path& pce_path)
    {
        nlohmann::json j = read_json(path);
        r.warnings = j.at("warnings").get<Warnings>();
        if (j.contains("enkf_mean")) {
            r.enkf_mean = to_vector(j["enkf_mean"]);
            Ensemble e = io::read_file(enkf_path.string(), [](std::istream& is) { return io::read_ensemble(is); });
            e.active_mask = r.prior.active_mask;
            r.enkf_posterior = std::move(e);
        }
        if (j.contains("pce_mean")) {
            r.pce_mean = to_vector(j["pce_mean"]);
            r.pce_active = j["pce_active"].get<std::vector<Index>>();
            r.sobol_first = to_vector(j["sobol_first"]);
            r.pce_posterior = io::read_file(pce_path.string(), [](std::istream& is) { return io::read_pce(is); });
            for (const auto& e : j["sparsity"])
                r.sparsity.entries.push_back({e[0].get<Index>(), e[1].get<Index>(), e[2].get<Index>(), e[3].get<double>()});
            r.sparsity.terms = j["sparsity_terms"].get<Index>();
        }
    }

    Vector projection_error(const std::vector<Index>& rows)
    {
        const ModelSetup& m = model();
        if (!m.basis) return Vector::Zero(static_cast<Index>(rows.size()));
        return error_series(m.data, rows);
    }

    std::optional<ModeBands> quantile_bands(const IdentifyResult& id, Warnings& warnings)
    {
        const ModelSetup& m = model();
        const auto& qc = config_.quantiles;
        QuantileOptions qo{threads_, integrator_options(config_), config_.smoother.max_diverged_fraction, qc.every * m.substeps};
        ModeBands out;
        auto add = [&](const std::string& name, const Matrix& params) {
            try {
                QuantileBands b = compute_quantile_bands(params, m.system, m.a0, m.times, qc.levels, qo);
                out.times = b.times;
                for (std::size_t l = 0; l < qc.levels.size(); ++l) {
                    char buf[32];
                    std::snprintf(buf, sizeof buf, "%s_q%g", name.c_str(), qc.levels[l]);
                    out.columns.emplace_back(buf, b.values[l]);
                }
            } catch (const DivergenceError& e) {
                warnings.push_back(name + " quantile bands skipped: " + e.what());
            }
        };
        // The prior band uses the unscreened prior, as before identification.
        GaussianPrior full = build_prior(m.system, prior_options(config_));
        add("prior", sample_prior(full, qc.samples, config_.seed + 4).members);
        if (id.enkf_posterior) add("enkf", id.enkf_posterior->members);
        if (id.pce_posterior) add("pce", pce_parameter_samples(*id.pce_posterior, id.pce_active, id.prior.mean, qc.samples, config_.seed + 5));
        if (out.columns.empty()) return std::nullopt;
        return out;
    }

public:
    // --- report --------------------------------------------------------------

    /// Writes errors.csv and quantiles_mode<k>.csv into dir; with full also
    /// sensitivity.csv, sparsity.csv, report.json and plot_results.py.
    static void emit_report(const RunReport& rep, const std::filesystem::path& dir, bool full = true)
    {
        std::filesystem::create_directories(dir);
        std::vector<std::string> files;
        auto out = [&](const std::string& name, auto&& writer) {
            io::write_file((dir / name).string(), writer);
            files.push_back(name);
        };
        const double nan = std::numeric_limits<double>::quiet_NaN();
        out("errors.csv", [&](std::ostream& os) {
            os << "t,eps_uncorrected,eps_projection,eps_enkf,eps_pce\n";
            for (Index i = 0; i < rep.times.size(); ++i) {
                os << io::format_double(rep.times[i]) << ',' << io::format_double(rep.eps_uncorrected[i]) << ','
                   << io::format_double(rep.eps_projection[i]) << ','
                   << io::format_double(rep.eps_enkf ? (*rep.eps_enkf)[i] : nan) << ','
                   << io::format_double(rep.eps_pce ? (*rep.eps_pce)[i] : nan) << '\n';
            }
        });
        if (rep.quantiles) {
            const ModeBands& q = *rep.quantiles;
            const Index modes = q.columns.front().second.cols();
            for (Index k = 0; k < modes; ++k) {
                out("quantiles_mode" + std::to_string(k + 1) + ".csv", [&](std::ostream& os) {
                    os << 't';
                    for (const auto& [name, _] : q.columns) os << ',' << name;
                    os << '\n';
                    for (Index r = 0; r < q.times.size(); ++r) {
                        os << io::format_double(q.times[r]);
                        for (const auto& [_, values] : q.columns) os << ',' << io::format_double(values(r, k));
                        os << '\n';
                    }
                });
            }
        }
        if (!full) return;
        if (rep.sensitivity) {
            out("sensitivity.csv", [&](std::ostream& os) {
                os << "index,ratio,active\n";
                const auto& s = *rep.sensitivity;
                std::vector<bool> act(static_cast<std::size_t>(s.ratio.size()), false);
                for (Index k : s.active_set) act[static_cast<std::size_t>(k)] = true;
                for (Index k = 0; k < s.ratio.size(); ++k)
                    os << k << ',' << io::format_double(s.ratio[k]) << ',' << (act[static_cast<std::size_t>(k)] ? 1 : 0) << '\n';
            });
        }
        if (!rep.sparsity.entries.empty()) {
            out("sparsity.csv", [&](std::ostream& os) {
                os << "output_index,n_active,P,sigma2\n";
                for (const auto& e : rep.sparsity.entries)
                    os << e.output_index << ',' << e.n_active << ',' << e.n_terms << ',' << io::format_double(e.sigma2) << '\n';
            });
        }
        if (!rep.sobol_variables.empty()) {
            out("sobol.csv", [&](std::ostream& os) {
                os << "index,first_order\n";
                for (std::size_t k = 0; k < rep.sobol_variables.size(); ++k)
                    os << rep.sobol_variables[k] << ',' << io::format_double(rep.sobol_first[static_cast<Index>(k)]) << '\n';
            });
        }
        out("plot_results.py", [&](std::ostream& os) { os << plot_script; });

        using json = nlohmann::json;
        auto summary = [&](const std::optional<Vector>& v) -> json {
            if (!v) return nullptr;
            return {{"mean", finite_mean(*v)}, {"max", finite_max(*v)}};
        };
        json j;
        j["schema"] = report_schema;
        j["version"] = library_version;
        j["config_hash"] = rep.config_hash;
        j["config"] = rep.config;
        j["seed"] = rep.config.at("seed");
        j["model"] = {{"kind", rep.config.at("fom").at("kind")},
                      {"energy_fraction", rep.energy_fraction},
                      {"parameters", rep.parameter_count},
                      {"active_parameters", rep.active_count}};
        j["validation"] = {{"t_start", rep.times.size() ? rep.times[0] : nan},
                           {"t_end", rep.times.size() ? rep.times[rep.times.size() - 1] : nan},
                           {"points", rep.times.size()},
                           {"eps_uncorrected", summary(rep.eps_uncorrected)},
                           {"eps_projection", summary(rep.eps_projection)},
                           {"eps_enkf", summary(rep.eps_enkf)},
                           {"eps_pce", summary(rep.eps_pce)}};
        if (rep.sensitivity) {
            j["sensitivity"] = {{"threshold", rep.sensitivity->threshold},
                                {"retained", rep.sensitivity->active_set.size()},
                                {"total", rep.sensitivity->ratio.size()}};
        }
        if (!rep.sparsity.entries.empty()) {
            Index max_active = 0;
            double sum = 0.0;
            for (const auto& e : rep.sparsity.entries) {
                max_active = std::max(max_active, e.n_active);
                sum += static_cast<double>(e.n_active);
            }
            j["sparsity"] = {{"outputs", rep.sparsity.entries.size()},
                             {"terms", rep.sparsity.terms},
                             {"mean_active", sum / static_cast<double>(rep.sparsity.entries.size())},
                             {"max_active", max_active}};
        }
        const bool burgers = rep.config.at("fom").at("kind") == "burgers";
        j["stages"] = {{"simulate", "completed"},
                       {"pod", burgers ? "completed" : "skipped"},
                       {"rom", "completed"},
                       {"sensitivity", rep.sensitivity ? "completed" : "skipped"},
                       {"identify", "completed"},
                       {"validate", "completed"},
                       {"report", "completed"}};
        j["skipped"] = rep.skipped;
        j["warnings"] = rep.warnings;
        files.push_back("report.json");
        j["files"] = files;
        io::write_file((dir / "report.json").string(), [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    }

    static double finite_mean(const Vector& v)
    {
        double s = 0.0;
        Index n = 0;
        for (Index i = 0; i < v.size(); ++i)
            if (std::isfinite(v[i])) {
                s += v[i];
                ++n;
            }
        return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    }

    static double finite_max(const Vector& v)
    {
        double m = -std::numeric_limits<double>::infinity();
        for (Index i = 0; i < v.size(); ++i)
            if (std::isfinite(v[i])) m = std::max(m, v[i]);
        return m;
    }

    static constexpr const char* plot_script = R"(# Plots the CSV outputs of a rombayes run. Requires pandas and matplotlib.
import glob
import os
import sys

import matplotlib.pyplot as plt
import pandas as pd

here = os.path.dirname(os.path.abspath(__file__)) if len(sys.argv) < 2 else sys.argv[1]

errors = pd.read_csv(os.path.join(here, "errors.csv"))
fig, ax = plt.subplots()
for col in errors.columns[1:]:
    if errors[col].notna().any():
        ax.semilogy(errors["t"], errors[col], label=col)
ax.set_xlabel("t")
ax.set_ylabel("relative L2 error")
ax.legend()
fig.savefig(os.path.join(here, "errors.png"), dpi=150)

for path in sorted(glob.glob(os.path.join(here, "quantiles_mode*.csv"))):
    q = pd.read_csv(path)
    fig, ax = plt.subplots()
    names = sorted({c.rsplit("_q", 1)[0] for c in q.columns[1:]})
    for name in names:
        cols = [c for c in q.columns if c.startswith(name + "_q")]
        ax.fill_between(q["t"], q[cols[0]], q[cols[-1]], alpha=0.3, label=name)
    ax.set_xlabel("t")
    ax.set_title(os.path.basename(path))
    ax.legend()
    fig.savefig(path.replace(".csv", ".png"), dpi=150)
)";

private:
    PipelineConfig config_;
    std::ostream* log_;
    std::size_t threads_;
    std::uint64_t hash_sim_ = 0, hash_pod_ = 0, hash_rom_ = 0, hash_sens_ = 0, hash_id_ = 0, hash_all_ = 0;
    std::optional<SnapshotMatrix> simulation_;
    std::optional<SnapshotMatrix> retained_;
    std::optional<PodBasis> basis_;
    std::optional<ModelSetup> model_;
    std::optional<SensitivityReport> sensitivity_;
    std::optional<IdentifyResult> identify_;
};

inline RunReport run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr)
{
    Pipeline p(config, log);
    return p.run();
}

} // namespace rombayes

#endif
