#include "rombayes/config.hpp"

#include <gtest/gtest.h>

using namespace rombayes;

TEST(Config, ValidateCatchesProgrammaticEdits)
{
    PipelineConfig c = parse_config_text("{}");
    c.mean_center = true;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, DefaultsValidate)
{
    PipelineConfig c = parse_config_text("{}");
    EXPECT_EQ(c.fom_kind, "burgers");
    EXPECT_EQ(c.n_modes, 6);
    EXPECT_EQ(c.smoother.max_pce_vars, 93);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, CommentsAllowed)
{
    PipelineConfig c = parse_config_text(R"({
        // line comment
        "seed": 42, /* block */ "pod": {"n_modes": 4}
    })");
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.n_modes, 4);
}

TEST(Config, UnknownKeysRejectedWithPath)
{
    try {
        parse_config_text(R"({"smoother": {"ensemble": 10}})");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("smoother.ensemble"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config_text(R"({"bogus": true})"), ConfigError);
}

TEST(Config, WrongTypeRejected)
{
    EXPECT_THROW(parse_config_text(R"({"seed": "one"})"), ConfigError);
    EXPECT_THROW(parse_config_text(R"({"train_window": [0.5]})"), ConfigError);
    EXPECT_THROW(parse_config_text("{ not json"), ConfigError);
}

TEST(Config, InvalidValuesRejected)
{
    // parse_config_text validates as well.
    auto bad = [](const char* text) { EXPECT_THROW(parse_config_text(text), ConfigError) << text; };
    bad(R"({"pod": {"mean_center": true}})");
    bad(R"({"smoother": {"kind": "ukf"}})");
    bad(R"({"train_window": [0.5, 0.2]})");
    bad(R"({"validate_window": [0.2, 5.0]})");
    bad(R"({"sensitivity": {"threshold": 1.0}})");
    bad(R"({"quantiles": {"levels": [0.0, 0.5]}})");
    bad(R"({"rom": {"convection": "weno"}})");
    bad(R"({"noise": {"min_std": -1}})");
    bad(R"({"fom": {"kind": "quadratic_truth", "quadratic_truth": {"initial": [1, 0]}}})");
    bad(R"({"fom": {"kind": "quadratic_truth", "quadratic_truth": {"true_correction": [{"entry": [0, 9], "prior_std": 1}]}}})");
}

TEST(Config, CanonicalHashIgnoresThreadsAndOutput)
{
    PipelineConfig a = parse_config_text(R"({"threads": 1, "output_dir": "x"})");
    PipelineConfig b = parse_config_text(R"({"threads": 8, "output_dir": "y"})");
    EXPECT_EQ(canonical_json(a).dump(), canonical_json(b).dump());
    PipelineConfig c = parse_config_text(R"({"seed": 2})");
    EXPECT_NE(canonical_json(a).dump(), canonical_json(c).dump());
}

TEST(Config, CanonicalRoundTrip)
{
    PipelineConfig a = parse_config_text(R"({"fom": {"kind": "quadratic_truth",
        "quadratic_truth": {"true_correction": [{"entry": [1, 2, 3], "prior_std": -1.5}]}},
        "rvm": {"noise_variance": 1e-4}, "smoother": {"kind": "both"}})");
    nlohmann::json j = canonical_json(a);
    PipelineConfig b = parse_config(j);
    EXPECT_EQ(canonical_json(b).dump(), j.dump());
}

TEST(Config, Fnv1aKnownValues)
{
    // Reference values of 64-bit FNV-1a.
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
