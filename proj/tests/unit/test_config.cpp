#include <gtest/gtest.h>

#include <cstdlib>

#include "stvod/config.hpp"

using namespace stvod;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsValidate) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.model.tqe_schedule.keep, (std::vector<std::size_t>{16, 10, 6}));
}

TEST(Config, ParsesDottedKeysAndComments) {
  RunConfig c = parse_config(
      "# comment line\n"
      "model.dim = 32   # trailing comment\n"
      "model.heads=2\n"
      "\n"
      "model.tqe_schedule = 12, 8, 4\n"
      "model.frame_embedding = false\n"
      "optim.lr = 1e-3\n"
      "seed = 9\n");
  EXPECT_EQ(c.model.dim, 32u);
  EXPECT_EQ(c.model.heads, 2u);
  EXPECT_EQ(c.model.tqe_schedule.keep, (std::vector<std::size_t>{12, 8, 4}));
  EXPECT_FALSE(c.model.frame_embedding);
  EXPECT_DOUBLE_EQ(c.optim.lr, 1e-3);
  EXPECT_EQ(c.seed, 9u);
}

TEST(Config, TextRoundTrip) {
  RunConfig c;
  c.model.dim = 48;
  c.model.backbone_widths = {8, 16};
  c.optim.lr = 3.25e-4;
  c.data.degradation_kinds = "defocus";
  c.train.spatial_frames = "current";
  c.seed = 77;
  const std::string text = to_text(c);
  EXPECT_EQ(to_text(parse_config(text)), text);
  EXPECT_EQ(model_hash(parse_config(text).model), model_hash(c.model));
}

TEST(Config, ModelHashTracksModelSectionOnly) {
  RunConfig a, b;
  b.optim.lr = 1.0;
  b.seed = 5;
  EXPECT_EQ(model_hash(a.model), model_hash(b.model));
  b.model.queries += 1;
  EXPECT_NE(model_hash(a.model), model_hash(b.model));
}

TEST(Config, ErrorsNameTheLine) {
  EXPECT_NE(error_of("model.dim = 8\nmodel.bogus = 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("model.dim = 8\n\nmodel.dim\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of("model.dim = eight\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("model.frame_embedding = maybe\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("optim.lr = 1e-3x\n").find("line 1"), std::string::npos);
}

TEST(Config, CrossFieldValidation) {
  RunConfig c;
  c.model.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.data.clip_length = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.data.occlusion_max_fraction = 0.7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.model.tqe_layers = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Schedule, AcceptsCoarseToFine) {
  EXPECT_NO_THROW(QuerySelectionSchedule::checked({16, 10, 6}));
  EXPECT_NO_THROW(QuerySelectionSchedule::checked({8, 8}));
  EXPECT_NO_THROW(parse_config("model.tqe_schedule = 16,10,6\n").validate());
}

TEST(Schedule, RejectsIncreasingEmptyOrZero) {
  EXPECT_THROW(QuerySelectionSchedule::checked({6, 10, 16}), ConfigError);
  EXPECT_THROW(QuerySelectionSchedule::checked({10, 6, 8}), ConfigError);
  EXPECT_THROW(QuerySelectionSchedule::checked({}), ConfigError);
  EXPECT_THROW(QuerySelectionSchedule::checked({4, 0}), ConfigError);
  EXPECT_NE(error_of("model.tqe_schedule = 6, 10, 16\n").find("non-increasing"), std::string::npos);
}

TEST(Config, SeedFromEnvironment) {
  RunConfig c;
  ::setenv("STVOD_SEED", "42", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.seed, 42u);
  ::setenv("STVOD_SEED", "x", 1);
  EXPECT_THROW(apply_env_overrides(c), ConfigError);
  ::unsetenv("STVOD_SEED");
}
