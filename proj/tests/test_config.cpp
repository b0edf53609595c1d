#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "iwsm/config.hpp"

using namespace iwsm;
using nlohmann::json;

TEST(Benchmarks, RegistryAndScales) {
  EXPECT_EQ(make_benchmark("gmm40").scale(), 50.0);
  EXPECT_EQ(make_benchmark("gmm80").scale(), 100.0);
  EXPECT_EQ(make_benchmark("gmm120").scale(), 150.0);
  EXPECT_EQ(make_benchmark("gmm40").dim(), 2u);
  EXPECT_EQ(make_benchmark("gauss3").dim(), 3u);
  EXPECT_EQ(make_benchmark("dw4").dim(), 8u);
  EXPECT_TRUE(make_benchmark("dw4").is_particle_system());
  EXPECT_EQ(make_benchmark("lj13").dim(), 39u);
  EXPECT_EQ(make_benchmark("bimodal1d").dim(), 1u);
  for (const char* bad : {"gmm", "gmm0", "gmmx", "foo", "lj", ""}) EXPECT_THROW(make_benchmark(bad), ConfigError) << bad;
  EXPECT_EQ(default_buffer_capacity("gmm80"), 20000u);
  EXPECT_EQ(default_buffer_capacity("gmm40"), 10000u);
}

TEST(RunConfig, DefaultsFromEmptyDocument) {
  const RunConfig c = parse_run_config(json::object());
  EXPECT_EQ(c.benchmark.id, "gmm40");
  EXPECT_EQ(c.sigma_min, 1e-5);
  EXPECT_EQ(c.sigma_max, 1.0);
  EXPECT_EQ(c.net.input_dim, 2u);
  EXPECT_EQ(c.train.batch_size, 128u);
  EXPECT_EQ(c.train.buffer_capacity, 10000u);
  const RunConfig g = parse_run_config(json{{"benchmark", {{"id", "gmm80"}}}});
  EXPECT_EQ(g.train.buffer_capacity, 20000u);
  const RunConfig h = parse_run_config(json{{"benchmark", {{"id", "gmm80"}}}, {"train", {{"buffer_capacity", 7}}}});
  EXPECT_EQ(h.train.buffer_capacity, 7u);
}

TEST(RunConfig, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_THROW(parse_run_config(json{{"bogus", 1}}), ConfigError);
  for (const char* section : {"benchmark", "schedule", "net", "train", "sampler"})
    EXPECT_THROW(parse_run_config(json{{section, {{"bogus", 1}}}}), ConfigError) << section;
}

TEST(RunConfig, BadValuesRejected) {
  EXPECT_THROW(parse_run_config(json{{"train", {{"batch_size", "many"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"train", {{"batch_size", 0}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"train", {{"lr", -1.0}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"schedule", {{"sigma_min", 2.0}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"net", {{"activation", "relu"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"benchmark", {{"id", "nope"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"sampler", {{"n_steps", 0}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"seed", -3}}), ConfigError);
}

TEST(RunConfig, ResolvedDocumentRoundTrips) {
  const json in = {{"benchmark", {{"id", "gauss2"}}},
                   {"schedule", {{"sigma_max", 10.0}}},
                   {"net", {{"hidden_width", 32}}},
                   {"train", {{"snis_samples", 3}, {"target_clip", nullptr}, {"grad_clip", 2.5}, {"weighted", false}}},
                   {"sampler", {{"n_steps", 77}}},
                   {"seed", 12},
                   {"threads", 2}};
  const RunConfig a = parse_run_config(in);
  EXPECT_FALSE(a.train.target_clip);
  EXPECT_EQ(a.train.grad_clip, 2.5);
  EXPECT_EQ(a.train.seed, 12u);
  const json resolved = to_json(a);
  const RunConfig b = parse_run_config(resolved);
  EXPECT_EQ(to_json(b), resolved);
  EXPECT_EQ(b.net, a.net);
  EXPECT_EQ(b.sampler.n_steps, 77u);
  EXPECT_EQ(b.threads, 2u);
}

TEST(RunConfig, FileErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "iwsm_test_config";
  std::filesystem::create_directories(dir);
  EXPECT_THROW(load_run_config(dir / "missing.json"), IoError);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
  std::ofstream(dir / "ok.json") << R"({"seed": 4})";
  EXPECT_EQ(load_run_config(dir / "ok.json").seed, 4u);
}
