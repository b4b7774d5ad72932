#include <gtest/gtest.h>

#include "isd/config.hpp"

using namespace isd;

TEST(Config, DefaultsValidateAndSerializeRoundTrip) {
    ExperimentConfig cfg;
    cfg.validate();
    const auto text = serialize_config(cfg);
    const auto back = parse_config(text);
    EXPECT_EQ(serialize_config(back), text);
    EXPECT_EQ(config_entries(back), config_entries(cfg));
}

TEST(Config, ParsesListsAndOverrides) {
    const auto cfg = parse_config(
        "[run]\nseed = 9\nmodels = linear_lag, rnn\nencoders = semantic,combined\n"
        "[synth]\nn_subjects = 4\nchannels = 12\n"
        "[mapping]\nrnn_hidden = 8\n"
        "[eval]\nnull_draws = 50\n");
    EXPECT_EQ(cfg.run.seed, 9u);
    EXPECT_EQ(cfg.run.models, (std::vector<MappingKind>{MappingKind::LinearLag, MappingKind::RNN}));
    EXPECT_EQ(cfg.run.encoders, (std::vector<EncoderName>{EncoderName::Semantic, EncoderName::Combined}));
    EXPECT_EQ(cfg.synth.n_subjects, 4u);
    EXPECT_EQ(cfg.mapping_spec(MappingKind::RNN).channels, 12u);
    EXPECT_EQ(cfg.mapping_spec(MappingKind::RNN).rnn_hidden, 8u);
    EXPECT_EQ(cfg.decoder_spec().channels, 12u);
    EXPECT_EQ(cfg.eval.null_draws, 50u);

    auto copy = cfg;
    set_config_value(copy, "run.seed", "10");
    EXPECT_EQ(copy.run.seed, 10u);
    const auto entries = config_entries(copy);
    EXPECT_EQ(entries.at("run.seed"), "10");
}

TEST(Config, RejectsUnknownKeysSectionsAndBadValues) {
    EXPECT_THROW(parse_config("[run]\nsede = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[nope]\nx = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[run]\nmodels = linear_lag,hopfield\n"), ConfigError);
    EXPECT_THROW(parse_config("[synth]\nchannels = many\n"), ConfigError);
    EXPECT_THROW(parse_config("[synth]\nn_subjects = 0\n"), ConfigError);
    ExperimentConfig cfg;
    EXPECT_THROW(set_config_value(cfg, "decoder", "1"), ConfigError);
    set_config_value(cfg, "decoder.temperature", "-1");
    EXPECT_ANY_THROW(cfg.validate());
}

TEST(Config, LoadsCheckedInFixture) {
    const auto cfg = load_config(std::string(ISD_FIXTURE_DIR) + "/small.ini");
    EXPECT_EQ(cfg.run.seed, 5u);
    EXPECT_EQ(cfg.synth.n_subjects, 3u);
    EXPECT_EQ(cfg.run.models.size(), 2u);
    EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
}
