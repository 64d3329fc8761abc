#include "rombayes/pod.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace rombayes;
using rombayes::testing::random_matrix;
using rombayes::testing::random_vector;

namespace {

SnapshotMatrix make_snapshots(const Matrix& values, const Vector& weights)
{
    return {values, Vector::LinSpaced(values.cols(), 0.0, 1.0), weights};
}

double weighted_frob(const Matrix& m, const Vector& w)
{
    return std::sqrt((m.array().square().colwise() * w.array()).sum());
}

Vector nonuniform_weights(Index n, std::mt19937_64& rng)
{
    return random_vector(n, rng).array().abs() + 0.1;
}

} // namespace

TEST(Pod, RankOneSnapshots)
{
    std::mt19937_64 rng(1);
    const Index nc = 40, nt = 12;
    Vector v = random_vector(nc, rng);
    Vector f = random_vector(nt, rng);
    Vector w = nonuniform_weights(nc, rng);
    SnapshotMatrix s = make_snapshots(v * f.transpose(), w);
    PodBasis b = compute_pod(s, 1);
    // Parallel to v.
    Vector unit = v / std::sqrt((v.array().square() * w.array()).sum());
    double cosine = (unit.array() * w.array() * b.modes.col(0).array()).sum();
    EXPECT_NEAR(std::abs(cosine), 1.0, 1e-12);
    MeasurementSet m = project_snapshots(s, b);
    SnapshotMatrix r = reconstruct(m.coefficients, b, s.times);
    EXPECT_LE(weighted_frob(r.values - s.values, w) / weighted_frob(s.values, w), 1e-10);
    EXPECT_THROW(compute_pod(s, 2), RankDeficiencyError);
    try {
        compute_pod(s, 2);
    } catch (const RankDeficiencyError& e) {
        EXPECT_EQ(e.numerical_rank(), 1);
    }
}

TEST(Pod, ModesAreWeightedOrthonormal)
{
    std::mt19937_64 rng(2);
    const Index nc = 50, nt = 20;
    Vector w = nonuniform_weights(nc, rng);
    SnapshotMatrix s = make_snapshots(random_matrix(nc, nt, rng), w);
    for (bool centre : {false, true}) {
        PodBasis b = compute_pod(s, 8, {centre, 1e-7});
        EXPECT_LE((b.gram() - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-10);
        for (Index i = 1; i < b.n_modes(); ++i) EXPECT_GE(b.singular_values[i - 1], b.singular_values[i]);
    }
}

TEST(Pod, KnownOrthogonalProfiles)
{
    const Index nc = 64, nt = 30;
    Grid1D g(nc, 0.0, 1.0);
    Vector x = g.centers();
    Vector w = g.weights();
    Matrix profiles(nc, 3);
    for (int k = 0; k < 3; ++k) profiles.col(k) = (std::numbers::pi * (k + 1) * x.array()).sin();
    detail::w_orthonormalize(profiles, w);
    Vector t = Vector::LinSpaced(nt, 0.0, 1.0);
    Matrix amp(nt, 3);
    amp.col(0) = 5.0 * (1.0 + t.array());
    amp.col(1) = 2.0 * (3.0 * t.array()).cos();
    amp.col(2) = 0.5 * (7.0 * t.array()).sin();
    SnapshotMatrix s{profiles * amp.transpose(), t, w};

    // Independent oracle: eigenvalues of U^T W U by a generic (non-symmetric) solver.
    Matrix gram = s.values.transpose() * w.asDiagonal() * s.values;
    Eigen::EigenSolver<Matrix> oracle(gram);
    std::vector<double> ev;
    for (Index i = 0; i < nt; ++i) ev.push_back(oracle.eigenvalues()[i].real());
    std::sort(ev.rbegin(), ev.rend());

    PodBasis b = compute_pod(s, 3);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(b.singular_values[k], std::sqrt(ev[static_cast<std::size_t>(k)]), 1e-8);
    // The leading singular values are close to the amplitude norms when those are nearly orthogonal.
    EXPECT_NEAR(b.singular_values[0], amp.col(0).norm(), 0.05 * amp.col(0).norm());
}

TEST(Pod, SignConventionAndDeterminism)
{
    std::mt19937_64 rng(3);
    SnapshotMatrix s = make_snapshots(random_matrix(30, 10, rng), Vector::Constant(30, 0.1));
    PodBasis a = compute_pod(s, 4);
    PodBasis b = compute_pod(s, 4);
    EXPECT_TRUE(a.modes == b.modes);
    for (Index j = 0; j < 4; ++j) {
        Index arg;
        a.modes.col(j).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(a.modes(arg, j), 0.0);
    }
    // Flipping snapshot sign leaves modes unchanged.
    s.values = -s.values;
    EXPECT_LE((compute_pod(s, 4).modes - a.modes).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pod, RejectsBadModeCounts)
{
    std::mt19937_64 rng(4);
    SnapshotMatrix s = make_snapshots(random_matrix(10, 5, rng), Vector::Ones(10));
    EXPECT_THROW(compute_pod(s, 0), Error);
    EXPECT_THROW(compute_pod(s, 6), Error);
}

TEST(Pod, EnergyIsMonotone)
{
    std::mt19937_64 rng(5);
    SnapshotMatrix s = make_snapshots(random_matrix(40, 15, rng), Vector::Constant(40, 0.5));
    PodBasis b = compute_pod(s, 15);
    double prev = 0.0;
    for (Index k = 1; k <= 15; ++k) {
        double e = energy_fraction(b, s, k);
        EXPECT_GE(e, prev);
        prev = e;
    }
    EXPECT_NEAR(prev, 1.0, 1e-10);
}

TEST(Projection, SingleModeAndZero)
{
    std::mt19937_64 rng(6);
    Vector w = nonuniform_weights(25, rng);
    SnapshotMatrix s = make_snapshots(random_matrix(25, 8, rng), w);
    PodBasis b = compute_pod(s, 3);
    for (Index k = 0; k < 3; ++k) {
        SnapshotMatrix one{b.modes.col(k).replicate(1, 4), Vector::LinSpaced(4, 0.0, 1.0), w};
        Matrix c = project_snapshots(one, b).coefficients;
        for (Index j = 0; j < 3; ++j)
            EXPECT_LE((c.col(j).array() - (j == k ? 1.0 : 0.0)).abs().maxCoeff(), 1e-12);
    }
    SnapshotMatrix zero{Matrix::Zero(25, 4), Vector::LinSpaced(4, 0.0, 1.0), w};
    MeasurementSet m = project_snapshots(zero, b);
    EXPECT_EQ(m.coefficients.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(m.noise_std.size(), 3);
    EXPECT_EQ(m.noise_std.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Projection, MatchesWeightedLeastSquares)
{
    std::mt19937_64 rng(7);
    const Index nc = 30;
    Vector w = nonuniform_weights(nc, rng);
    SnapshotMatrix train = make_snapshots(random_matrix(nc, 10, rng), w);
    PodBasis b = compute_pod(train, 5);
    SnapshotMatrix test = make_snapshots(random_matrix(nc, 6, rng), w);
    Matrix c = project_snapshots(test, b).coefficients;
    // Oracle: min ||W^{1/2}(u - Phi a)|| by QR of the scaled basis.
    Vector sw = w.cwiseSqrt();
    Matrix lhs = sw.asDiagonal() * b.modes;
    Matrix rhs = sw.asDiagonal() * test.values;
    Matrix oracle = lhs.colPivHouseholderQr().solve(rhs).transpose();
    EXPECT_LE((c - oracle).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Projection, WeightMismatch)
{
    std::mt19937_64 rng(8);
    SnapshotMatrix s = make_snapshots(random_matrix(12, 5, rng), Vector::Ones(12));
    PodBasis b = compute_pod(s, 2);
    s.weights[3] = 2.0;
    EXPECT_THROW(project_snapshots(s, b), IncompatibleDiscretizationError);
}

TEST(Reconstruct, Identities)
{
    std::mt19937_64 rng(9);
    Vector w = nonuniform_weights(20, rng);
    SnapshotMatrix s = make_snapshots(random_matrix(20, 7, rng), w);
    PodBasis b = compute_pod(s, 4);
    Vector t = Vector::LinSpaced(4, 0.0, 1.0);
    EXPECT_EQ(reconstruct(Matrix::Zero(4, 4), b, t).values.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_TRUE(reconstruct(Matrix::Identity(4, 4), b, t).values == b.modes);

    Matrix a = random_matrix(6, 4, rng);
    Vector t6 = Vector::LinSpaced(6, 0.0, 1.0);
    SnapshotMatrix in_span = reconstruct(a, b, t6);
    EXPECT_LE((project_snapshots(in_span, b).coefficients - a).cwiseAbs().maxCoeff(), 1e-10);
    SnapshotMatrix again = reconstruct(project_snapshots(in_span, b).coefficients, b, t6);
    EXPECT_LE(weighted_frob(again.values - in_span.values, w), 1e-10 * weighted_frob(in_span.values, w));
    EXPECT_THROW(reconstruct(Matrix::Zero(4, 3), b, t), DimensionError);
}
