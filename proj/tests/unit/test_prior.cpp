#include "rombayes/prior.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

using namespace rombayes;

namespace {

ReducedSystem system_with(double diffusion_mean_abs, double convection_mean_abs, Index n)
{
    ReducedSystem s = ReducedSystem::zeros(n, 0.1);
    s.diffusion.setConstant(diffusion_mean_abs);
    s.diffusion(0, 0) = -diffusion_mean_abs;  // mean |.| unchanged
    s.convection.flat().setConstant(convection_mean_abs);
    return s;
}

} // namespace

TEST(Prior, BlockScales)
{
    GaussianPrior p = build_prior(system_with(2.0, 0.5, 2));
    ASSERT_EQ(p.size(), 12);
    for (Index k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(p.std[k], 0.02);
    for (Index k = 4; k < 12; ++k) EXPECT_DOUBLE_EQ(p.std[k], 0.005);
    EXPECT_EQ(p.mean.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(p.n_active(), 12);
    EXPECT_TRUE(p.warnings.empty());

    PriorOptions as_var;
    as_var.scale_is_variance = true;
    GaussianPrior v = build_prior(system_with(2.0, 0.5, 2), as_var);
    EXPECT_DOUBLE_EQ(v.std[0], std::sqrt(0.02));
}

TEST(Prior, DegenerateBlockUsesFloor)
{
    GaussianPrior p = build_prior(system_with(0.0, 0.5, 3));
    EXPECT_EQ(p.size(), correction_size(3));
    EXPECT_DOUBLE_EQ(p.std[0], 1e-6);
    EXPECT_EQ(p.warnings.size(), 1u);
    EXPECT_THROW(build_prior(system_with(1.0, 1.0, 2), {0.0, 1e-6, false}), Error);
}

TEST(Prior, SizeFormula)
{
    for (Index n = 1; n <= 12; ++n) EXPECT_EQ(build_prior(system_with(1.0, 1.0, n)).size(), n * n * (1 + n));
}

TEST(Noise, DefaultScale)
{
    MeasurementSet m;
    m.coefficients = Matrix::Zero(4, 3);
    m.coefficients(2, 0) = -3.0;
    m.coefficients(1, 1) = 0.5;
    m.times = Vector::LinSpaced(4, 0.0, 1.0);
    NoiseModel n = default_noise(m);
    EXPECT_DOUBLE_EQ(n.std_per_mode[0], 0.003);
    EXPECT_DOUBLE_EQ(n.std_per_mode[1], 0.0005);
    EXPECT_DOUBLE_EQ(n.std_per_mode[2], 1e-9);
    EXPECT_EQ(n.warnings.size(), 1u);

    NoiseModel z = default_noise(m, {0.0, 1e-9});
    EXPECT_EQ(z.std_per_mode.cwiseAbs().maxCoeff(), 0.0);
    ASSERT_EQ(z.warnings.size(), 1u);
    EXPECT_NE(z.warnings[0].find("conditioned"), std::string::npos);
}

TEST(Sampling, ZeroStdGivesMean)
{
    GaussianPrior p{Vector::LinSpaced(5, -1.0, 1.0), Vector::Zero(5), std::vector<bool>(5, true), {}};
    Ensemble e = sample_prior(p, 10, 1);
    for (Index i = 0; i < 10; ++i) EXPECT_TRUE(e.members.row(i) == p.mean.transpose());
    EXPECT_THROW(sample_prior(p, 1, 1), Error);
}

TEST(Sampling, Reproducible)
{
    GaussianPrior p{Vector::Zero(6), Vector::Ones(6), std::vector<bool>(6, true), {}};
    EXPECT_TRUE(sample_prior(p, 20, 42).members == sample_prior(p, 20, 42).members);
    EXPECT_FALSE(sample_prior(p, 20, 42).members == sample_prior(p, 20, 43).members);
    // Member i depends only on (seed, i).
    EXPECT_TRUE(sample_prior(p, 5, 42).members == sample_prior(p, 20, 42).members.topRows(5));
}

TEST(Sampling, MomentsAndMask)
{
    const Index z = 10000;
    GaussianPrior p{Vector::LinSpaced(4, 0.0, 3.0), Vector::LinSpaced(4, 0.5, 2.0), {true, true, false, true}, {}};
    Ensemble e = sample_prior(p, z, 7);
    Vector mean = e.mean();
    for (Index k = 0; k < 4; ++k) {
        if (!p.active_mask[static_cast<std::size_t>(k)]) {
            EXPECT_EQ((e.members.col(k).array() - p.mean[k]).abs().maxCoeff(), 0.0);
            continue;
        }
        EXPECT_LE(std::abs(mean[k] - p.mean[k]), 4.0 * p.std[k] / std::sqrt(double(z)));
        double sd = std::sqrt((e.members.col(k).array() - mean[k]).square().sum() / double(z - 1));
        EXPECT_NEAR(sd, p.std[k], 5.0 * p.std[k] / std::sqrt(2.0 * z));
    }
    EXPECT_EQ(p.variance()[2], 0.0);
}
