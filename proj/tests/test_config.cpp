#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "conspec/config.hpp"

using namespace conspec;
using nlohmann::json;

namespace {

std::string dump(const ExperimentConfig& c) { return to_json(c).dump(); }

void expect_error(const std::string& text, const std::string& fragment) {
    try {
        parse_config(text);
        FAIL() << "accepted: " << text;
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
    const ExperimentConfig c;
    EXPECT_EQ(dump(config_from_json(to_json(c))), dump(c));
}

TEST(Config, ShippedConfigsRoundTrip) {
    for (const char* name : {"onekey.json", "twokey.json"}) {
        const auto path = std::filesystem::path(CONSPEC_SOURCE_DIR) / "configs" / name;
        const auto c = load_config(path.string());
        const auto again = parse_config(to_json(c).dump());
        EXPECT_EQ(dump(again), dump(c)) << name;
    }
}

TEST(Config, NonDefaultValuesRoundTrip) {
    const auto c = parse_config(R"({
      "seed": 17,
      "task": {"keys": 3, "conjunctive": true, "key_steps": 12, "key_start_distance": 0},
      "model": {"prototypes": 4, "scheme": "eq3", "diversity": "entropy", "freeze": false,
                "recruit": true, "temperature": 0.5, "reward_prototypes": "separated"},
      "optim": {"beta": 0.0, "intrinsic_scale": 0.5, "success": "top_k", "top_k": 3, "ppo_epochs": 4},
      "output": {"dir": "x/y", "checkpoint_interval": 10}
    })");
    EXPECT_EQ(c.seed, 17u);
    EXPECT_EQ(c.task.keys, 3);
    EXPECT_TRUE(c.task.conjunctive);
    EXPECT_EQ(c.task.key_start_distance, 0);
    EXPECT_EQ(c.model.scheme, "eq3");
    EXPECT_EQ(c.reward_scheme(), core::RewardScheme::potential);
    EXPECT_EQ(c.conspec_config().diversity, core::Diversity::entropy);
    EXPECT_TRUE(c.conspec_config().reward_separated_only);
    EXPECT_EQ(c.success_criterion().mode, memory::SuccessCriterion::Mode::top_k);
    EXPECT_EQ(c.optim.ppo_epochs, 4u);
    EXPECT_EQ(dump(parse_config(dump(c))), dump(c));
}

TEST(Config, UnknownKeysRejected) {
    expect_error(R"({"bogus": 1})", "bogus");
    expect_error(R"({"optim": {"learning_rate": 0.1}})", "optim.learning_rate");
}

TEST(Config, OutOfRangeRejected) {
    expect_error(R"({"model": {"threshold": 1.5}})", "model.threshold");
    expect_error(R"({"optim": {"gamma": 1.2}})", "optim.gamma");
    expect_error(R"({"optim": {"batch_size": 0}})", "optim.batch_size");
    expect_error(R"({"task": {"keys": -1}})", "task");
}

TEST(Config, WrongTypesAndChoicesRejected) {
    expect_error(R"({"optim": {"epochs": "many"}})", "optim.epochs");
    expect_error(R"({"model": {"scheme": "eq9"}})", "model.scheme");
    expect_error(R"({"model": {"diversity": 3}})", "model.diversity");
}

TEST(Config, MalformedJson) { expect_error("{\"seed\": ", "malformed"); }

TEST(Config, SchemaVersionChecked) { expect_error(R"({"schema_version": 99})", "schema_version"); }

TEST(Config, MissingFile) {
    try {
        load_config("/nonexistent/missing.json");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("not found"), std::string::npos);
    }
}
