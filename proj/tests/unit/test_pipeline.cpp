#include "rombayes/pipeline.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace rombayes;

namespace {

std::filesystem::path scratch(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("rombayes-test-" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

PipelineConfig small_truth(const std::string& extra = "")
{
    std::string text = R"({
        "fom": {"kind": "quadratic_truth", "quadratic_truth": {"t_end": 8.0, "dt": 0.02,
                 "true_correction": [{"entry": [0, 1], "prior_std": 2.0}]}},
        "noise": {"relative_scale": 3e-4},
        "train_window": [0.0, 2.0], "validate_window": [2.0, 8.0], "observe_every": 5,
        "smoother": {"kind": "enkf", "ensemble_size": 60},
        "quantiles": {"enabled": true, "samples": 40, "every": 10})" +
                       extra + "}";
    return parse_config_text(text);
}

/// a' = q a with q the single A~ entry (nu = 1, no other terms).
ReducedSystem scalar_growth()
{
    return ReducedSystem::zeros(1, 1.0);
}

std::vector<std::vector<double>> read_csv(const std::filesystem::path& p, std::string& header)
{
    std::ifstream is(p);
    std::getline(is, header);
    std::vector<std::vector<double>> rows;
    for (std::string line; std::getline(is, line);) {
        std::vector<double> row;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) row.push_back(std::strtod(cell.c_str(), nullptr));
        rows.push_back(row);
    }
    return rows;
}

} // namespace

TEST(Quantiles, NearestRank)
{
    std::vector<double> v{1, 2, 3, 4};
    EXPECT_EQ(nearest_rank(v, 0.005), 1);
    EXPECT_EQ(nearest_rank(v, 0.995), 4);
    EXPECT_EQ(nearest_rank(v, 0.5), 2);
    EXPECT_EQ(nearest_rank(v, 0.51), 3);
}

TEST(Quantiles, IdenticalMembersCollapseBands)
{
    ReducedSystem s = scalar_growth();
    Matrix params = Matrix::Constant(5, 2, 0.0);
    params.col(0).setConstant(-0.3);
    params.col(1).setZero();
    Vector times = Vector::LinSpaced(21, 0.0, 2.0);
    Vector a0 = Vector::Ones(1);
    QuantileBands b = compute_quantile_bands(params, s, a0, times, {0.005, 0.5, 0.995});
    Matrix ref = integrate_rom(s, {1, params.row(0).transpose()}, a0, times).states;
    for (const Matrix& v : b.values) EXPECT_TRUE(v.isApprox(ref, 0.0) || (v - ref).cwiseAbs().maxCoeff() == 0.0);
}

TEST(Quantiles, TwoMembersGiveEnvelope)
{
    ReducedSystem s = scalar_growth();
    Matrix params(2, 2);
    params << 0.2, 0.0, -0.4, 0.0;
    Vector times = Vector::LinSpaced(11, 0.0, 1.0);
    Vector a0 = Vector::Constant(1, 2.0);
    QuantileBands b = compute_quantile_bands(params, s, a0, times, {0.005, 0.995});
    Matrix lo = integrate_rom(s, {1, params.row(1).transpose()}, a0, times).states;
    Matrix hi = integrate_rom(s, {1, params.row(0).transpose()}, a0, times).states;
    EXPECT_EQ((b.values[0] - lo).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((b.values[1] - hi).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Quantiles, GaussianHalfWidth)
{
    // a(t) is monotone in q, so the 99.5% band at t is the solution with the
    // 99.5% sample quantile of q, which is close to 2.576 sigma.
    const double sigma = 0.05;
    GaussianPrior prior{Vector::Zero(2), Vector::Constant(2, sigma), {true, false}, {}};
    Ensemble e = sample_prior(prior, 10000, 11);
    ReducedSystem s = scalar_growth();
    Vector times = Vector::LinSpaced(11, 0.0, 1.0);
    Vector a0 = Vector::Ones(1);
    QuantileBands b = compute_quantile_bands(e.members, s, a0, times, {0.005, 0.995});

    std::vector<double> q(e.members.col(0).data(), e.members.col(0).data() + e.size());
    std::sort(q.begin(), q.end());
    const double q_hi = nearest_rank(q, 0.995);
    Matrix exact = integrate_rom(s, {1, Vector{{q_hi, 0.0}}}, a0, times).states;
    EXPECT_NEAR(b.values[1](10, 0), exact(10, 0), 1e-14);
    EXPECT_NEAR(q_hi / sigma, 2.5758, 0.08);
    const double half = 0.5 * std::log(b.values[1](10, 0) / b.values[0](10, 0));
    EXPECT_NEAR(half / sigma, 2.5758, 0.1);
}

TEST(Quantiles, ThreadIndependent)
{
    GaussianPrior prior{Vector::Zero(2), Vector::Constant(2, 0.1), {true, true}, {}};
    Ensemble e = sample_prior(prior, 300, 3);
    Vector times = Vector::LinSpaced(21, 0.0, 1.0);
    QuantileOptions one, many;
    many.threads = 4;
    QuantileBands a = compute_quantile_bands(e.members, scalar_growth(), Vector::Ones(1), times, {0.1, 0.9}, one);
    QuantileBands b = compute_quantile_bands(e.members, scalar_growth(), Vector::Ones(1), times, {0.1, 0.9}, many);
    for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ((a.values[l] - b.values[l]).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Quantiles, EveryThins)
{
    GaussianPrior prior{Vector::Zero(2), Vector::Constant(2, 0.1), {true, false}, {}};
    Ensemble e = sample_prior(prior, 10, 3);
    QuantileOptions o;
    o.every = 5;
    QuantileBands b = compute_quantile_bands(e.members, scalar_growth(), Vector::Ones(1), Vector::LinSpaced(21, 0.0, 1.0),
                                             {0.5}, o);
    ASSERT_EQ(b.times.size(), 5);
    EXPECT_DOUBLE_EQ(b.times[1], 0.25);
}

TEST(Quantiles, PceSamplesKeepInactiveEntries)
{
    Vector mean{{1.0, 2.0}}, sd{{0.1, 0.2}};
    PceExpansion post = linear_gaussian_pce(mean, sd, 1);
    Vector base = Vector::Constant(5, 7.0);
    Matrix s = pce_parameter_samples(post, {1, 3}, base, 2000, 5);
    EXPECT_TRUE((s.col(0).array() == 7.0).all());
    EXPECT_TRUE((s.col(2).array() == 7.0).all());
    EXPECT_NEAR(s.col(1).mean(), 1.0, 0.02);
    EXPECT_NEAR(s.col(3).mean(), 2.0, 0.04);
}

TEST(Oscillator, TriadsConserveEnergy)
{
    ReducedSystem s = oscillator_system(QuadraticTruthConfig{});
    ASSERT_EQ(s.n_modes(), 6);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Vector a = rombayes::testing::random_vector(6, rng);
        double e = 0.0;
        for (Index i = 0; i < 6; ++i)
            for (Index j = 0; j < 6; ++j)
                for (Index k = 0; k < 6; ++k) e += a[i] * s.convection(i, j, k) * a[j] * a[k];
        EXPECT_NEAR(e, 0.0, 1e-14);
    }
    EXPECT_GT(s.convection.flat().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Oscillator, TrueCorrectionInPriorUnits)
{
    QuadraticTruthConfig q;
    q.true_correction = {{{0, 1}, 2.0}, {{1, 2, 3}, -1.0}};
    ReducedSystem s = oscillator_system(q);
    GaussianPrior prior = build_prior(s);
    CorrectionVector c = truth_correction(q, prior, 6);
    EXPECT_DOUBLE_EQ(c.values[1], 2.0 * prior.std[1]);
    EXPECT_DOUBLE_EQ(c.values[36 + (1 * 6 + 2) * 6 + 3], -prior.std[36]);
    EXPECT_EQ((c.values.array() != 0.0).count(), 2);
}

TEST(Grid, RefineGrid)
{
    Vector t{{0.0, 1.0, 3.0}};
    Vector r = refine_grid(t, 2);
    ASSERT_EQ(r.size(), 5);
    EXPECT_DOUBLE_EQ(r[1], 0.5);
    EXPECT_DOUBLE_EQ(r[3], 2.0);
    EXPECT_TRUE(refine_grid(t, 1) == t);
}

TEST(Pipeline, ZeroCorrectionHasZeroUncorrectedError)
{
    PipelineConfig c = parse_config_text(R"({
        "fom": {"kind": "quadratic_truth", "quadratic_truth": {"t_end": 2.0, "dt": 0.02}},
        "train_window": [0.0, 0.5], "validate_window": [0.5, 2.0], "observe_every": 5,
        "smoother": {"ensemble_size": 20}, "quantiles": {"enabled": false}})");
    c.output_dir = scratch("zero").string();
    RunReport r = Pipeline(c).run();
    EXPECT_EQ(r.eps_uncorrected.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(r.eps_projection.cwiseAbs().maxCoeff(), 0.0);
    ASSERT_TRUE(r.eps_enkf);
    EXPECT_FALSE(r.eps_pce);
}

TEST(Pipeline, EnkfImprovesSyntheticTruth)
{
    PipelineConfig c = small_truth(R"(, "smoother": {"kind": "enkf", "ensemble_size": 300}, "quantiles": {"enabled": false})");
    c.output_dir = scratch("improve").string();
    RunReport r = Pipeline(c).run();
    EXPECT_LT(Pipeline::finite_mean(*r.eps_enkf), 0.5 * Pipeline::finite_mean(r.eps_uncorrected));
}

TEST(Pipeline, OutputsAndErrorsCsvRoundTrip)
{
    PipelineConfig c = small_truth();
    c.output_dir = scratch("csv").string();
    RunReport r = Pipeline(c).run();
    std::string header;
    auto rows = read_csv(std::filesystem::path(c.output_dir) / "errors.csv", header);
    EXPECT_EQ(header, "t,eps_uncorrected,eps_projection,eps_enkf,eps_pce");
    ASSERT_EQ(static_cast<Index>(rows.size()), r.times.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto k = static_cast<Index>(i);
        EXPECT_EQ(rows[i][0], r.times[k]);
        EXPECT_EQ(rows[i][1], r.eps_uncorrected[k]);
        EXPECT_EQ(rows[i][3], (*r.eps_enkf)[k]);
        EXPECT_TRUE(std::isnan(rows[i][4]));
    }
    for (const char* f : {"report.json", "plot_results.py", "quantiles_mode1.csv", "quantiles_mode6.csv"})
        EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(c.output_dir) / f)) << f;
    auto q = read_csv(std::filesystem::path(c.output_dir) / "quantiles_mode1.csv", header);
    EXPECT_EQ(header, "t,prior_q0.005,prior_q0.995,enkf_q0.005,enkf_q0.995");
    for (const auto& row : q) EXPECT_LE(row[1], row[2]);

    nlohmann::json j = nlohmann::json::parse(slurp(std::filesystem::path(c.output_dir) / "report.json"));
    EXPECT_EQ(j["schema"], "rom-bayes/1");
    EXPECT_EQ(j["config_hash"], r.config_hash);
    EXPECT_EQ(j["stages"]["pod"], "skipped");
    EXPECT_EQ(j["stages"]["identify"], "completed");
}

TEST(Pipeline, CacheReuseIsByteIdentical)
{
    PipelineConfig c = small_truth(R"(, "sensitivity": {"enabled": true, "pilot_size": 40})");
    c.output_dir = scratch("cache").string();
    Pipeline(c).run();
    const std::string first = slurp(std::filesystem::path(c.output_dir) / "errors.csv");
    const std::string report = slurp(std::filesystem::path(c.output_dir) / "report.json");
    std::ostringstream log;
    Pipeline(c, &log).run();
    EXPECT_NE(log.str().find("identify: cached"), std::string::npos);
    EXPECT_EQ(slurp(std::filesystem::path(c.output_dir) / "errors.csv"), first);
    EXPECT_EQ(slurp(std::filesystem::path(c.output_dir) / "report.json"), report);
}

TEST(Pipeline, ThreadCountDoesNotChangeOutputs)
{
    PipelineConfig a = small_truth(R"(, "smoother": {"kind": "both", "ensemble_size": 60, "pce_degree": 1, "pce_samples": 60},
                                      "sensitivity": {"enabled": true, "pilot_size": 40})");
    PipelineConfig b = a;
    a.threads = 1;
    b.threads = 3;
    a.output_dir = scratch("threads-a").string();
    b.output_dir = scratch("threads-b").string();
    Pipeline(a).run();
    Pipeline(b).run();
    for (const char* f : {"errors.csv", "report.json", "quantiles_mode2.csv", "sensitivity.csv", "sparsity.csv", "sobol.csv"})
        EXPECT_EQ(slurp(std::filesystem::path(a.output_dir) / f), slurp(std::filesystem::path(b.output_dir) / f)) << f;
}

TEST(Pipeline, PceCapWithoutScreeningIsConfigError)
{
    PipelineConfig c = small_truth(R"(, "smoother": {"kind": "pce", "max_pce_vars": 10})");
    c.output_dir = scratch("cap").string();
    EXPECT_THROW(Pipeline(c).run(), ConfigError);
}

TEST(Pipeline, NoObservationInWindowIsConfigError)
{
    PipelineConfig c = small_truth(R"(, "observe_every": 1000)");
    c.output_dir = scratch("noobs").string();
    EXPECT_THROW(Pipeline(c).run(), ConfigError);
}

TEST(Pipeline, BurgersProjectionIsOptimal)
{
    PipelineConfig c = parse_config_text(R"({
        "fom": {"kind": "burgers", "burgers": {"cells": 64, "nu": 0.02, "t_end": 0.4, "dt": 2e-3, "save_every": 5,
                "initial": {"shape": "gaussian", "center": 0.3, "width": 0.1}}},
        "pod": {"n_modes": 4}, "rom": {"convection": "upwind"},
        "train_window": [0.0, 0.1], "validate_window": [0.1, 0.4], "observe_every": 2,
        "smoother": {"ensemble_size": 40}, "quantiles": {"enabled": false}})");
    c.output_dir = scratch("burgers").string();
    RunReport r = Pipeline(c).run();
    for (Index i = 0; i < r.times.size(); ++i) {
        EXPECT_LE(r.eps_projection[i], r.eps_uncorrected[i]);
        EXPECT_LE(r.eps_projection[i], (*r.eps_enkf)[i]);
    }
    EXPECT_GT(r.energy_fraction, 0.99);
}

TEST(Pipeline, DiscardBeforeShiftsWindows)
{
    PipelineConfig c = parse_config_text(R"({
        "fom": {"kind": "quadratic_truth", "quadratic_truth": {"t_end": 3.0, "dt": 0.02}},
        "discard_before": 1.0,
        "train_window": [0.0, 0.5], "validate_window": [0.5, 2.0], "observe_every": 5,
        "smoother": {"ensemble_size": 20}, "quantiles": {"enabled": false}})");
    c.output_dir = scratch("discard").string();
    Pipeline p(c);
    const ModelSetup& m = p.model();
    EXPECT_DOUBLE_EQ(m.data_times[0], 0.0);
    EXPECT_NEAR(m.data_times[m.data_times.size() - 1], 2.0, 1e-12);
    // Initial state is the truth at t = 1.
    EXPECT_TRUE(m.a0 == p.simulation().values.col(50));
    PipelineConfig bad = c;
    bad.validate_window = {0.5, 2.5};
    EXPECT_THROW(bad.validate(), ConfigError);
}
