#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pib/harness/checks.hpp"
#include "pib/harness/config.hpp"
#include "pib/harness/records.hpp"
#include "pib/harness/sweeps.hpp"
#include "pib/harness/system.hpp"

using namespace pib;
using namespace pib::harness;

namespace {

ExperimentConfig tiny_config(std::size_t steps) {
  ExperimentConfig c = toy_config();
  c.training.steps = steps;
  c.training.final_grad_check = false;
  c.training.learning_rate = 0.01;
  return c;
}

RunRecord sample_record(std::uint64_t seed) {
  RunRecord r;
  r.config_hash = "0123456789abcdef";
  r.scenario = "toy, \"quoted\"";
  r.method = seed % 2 ? "pib" : "equal";
  r.seed = seed;
  r.sweep_axis = "lambda";
  r.sweep_value = 0.01 * static_cast<double>(seed);
  r.lambda = r.sweep_value;
  r.delayed_count = seed % 3;
  r.total_bits = 1234.5 + static_cast<double>(seed) / 3.0;
  r.estimate_bits = 1200.25;
  r.bits_per_camera = {100.125, 200.0, 1e-7};
  r.moda = 0.5 - 0.01 * static_cast<double>(seed);
  r.moda_degenerate = seed == 4;
  r.counts = scene::ModaCounts{10, 2, 3, 13};
  r.weights = {0.25, 0.75};
  r.w_target = 0.5;
  r.loss_total = 12.75;
  r.loss_l1 = 10.0;
  r.loss_l2 = 0.5;
  r.loss_l3 = 2.25;
  r.distortion = 9.0;
  r.rate_clipped = 100.0;
  r.grad_check_error = 1e-9;
  r.wall_time_s = 3.5;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, DefaultsAndValidation) {
  const ExperimentConfig c = config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.cameras, 7u);
  EXPECT_EQ(c.link.base.distance_m, 300.0);
  EXPECT_EQ(c.training.steps, 2000u);
  EXPECT_EQ(c.training.learning_rate, 1e-3);
  EXPECT_EQ(c.model.tau, 2u);
  EXPECT_THROW(config_from_json(nlohmann::json{{"cameras", 0}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"delayed_cameras", {9}}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"world", {{"height", 12}}}}), ConfigError);
}

TEST(Config, RejectsUnknownKeys) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"lambda", 0.1}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"loss", {{"lamda", 0.1}}}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"method", "fancy"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"cameras", "seven"}}), ConfigError);
}

TEST(Config, RoundTripAndHash) {
  ExperimentConfig c = toy_config();
  c.loss.w_target = 0.5;
  c.coverage_upper = 40.0;
  c.sweep.values = {0, 1, 2};
  const ExperimentConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  ExperimentConfig moved = c;
  moved.output = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(c));
  ExperimentConfig changed = c;
  changed.loss.lambda = 0.02;
  EXPECT_NE(config_hash(changed), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "pib_config_test.json";
  std::ofstream(path) << R"({"seeds": [3, 4], "loss": {"lambda": 0.1}})";
  const ExperimentConfig c = load_config(path.string());
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.loss.lambda, 0.1);
  std::ofstream(path) << "{not json";
  EXPECT_THROW(load_config(path.string()), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path.string()), IoError);
}

TEST(Scenario, DelayedCamerasExceedThreshold) {
  const ExperimentConfig c;
  const Scenario s = build_scenario(c, 1, {0, 3});
  ASSERT_EQ(s.cameras(), 7u);
  for (std::size_t k = 0; k < 7; ++k) {
    if (k == 0 || k == 3) EXPECT_GT(s.d_norm[k], c.loss.epsilon) << k;
    else EXPECT_LT(s.d_norm[k], c.loss.epsilon) << k;
  }
  EXPECT_NEAR(s.w_target, 0.2, 1e-15);
  EXPECT_THROW(build_scenario(c, 1, {7}), std::out_of_range);
}

TEST(Train, ZeroStepsLeavesInit) {
  const ExperimentConfig c = tiny_config(0);
  const Scenario s = build_scenario(c, 2, c.delayed_cameras);
  EXPECT_TRUE(train(c, s, Method::kPib, 2).params == init_model(c, 2));
}

TEST(Train, SeededRunsAreIdentical) {
  const ExperimentConfig c = tiny_config(5);
  const Scenario s = build_scenario(c, 3, c.delayed_cameras);
  const TrainResult a = train(c, s, Method::kPib, 3);
  const TrainResult b = train(c, s, Method::kPib, 3);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_FALSE(a.params == init_model(c, 3));
}

TEST(Train, LossDecreases) {
  ExperimentConfig c = tiny_config(150);
  c.world.frames = 40;
  const Scenario s = build_scenario(c, 4, c.delayed_cameras);
  const TrainResult r = train(c, s, Method::kPib, 4);
  ASSERT_EQ(r.log.size(), 150u);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) first += r.log[i].breakdown.total, last += r.log[130 + i].breakdown.total;
  EXPECT_LT(last, first);
}

TEST(Train, EvaluationDecodesRealBitstreams) {
  ExperimentConfig c = tiny_config(20);
  c.training.final_grad_check = true;
  const RunOutput out = run_once(c, 5, Method::kPib, c.delayed_cameras, "lambda", c.loss.lambda);
  EXPECT_EQ(out.eval.frames, c.training.eval_frames);
  EXPECT_GT(out.eval.total_bits, 0.0);
  EXPECT_EQ(out.record.bits_per_camera.size(), 2u);
  EXPECT_LT(out.record.grad_check_error, 1e-4);
  EXPECT_EQ(out.record.config_hash, config_hash(c));
  EXPECT_EQ(out.record.code_version, std::string(kCodeVersion));
}

TEST(Records, EmptyListHeaderOnly) {
  std::stringstream ss;
  write_records(ss, {});
  std::string line;
  std::size_t lines = 0;
  while (std::getline(ss, line)) ++lines;
  EXPECT_EQ(lines, 1u);
  EXPECT_EQ(run_columns().size(), 29u);
}

TEST(Records, RoundTripFifteenRecords) {
  std::vector<RunRecord> rs;
  for (std::uint64_t i = 1; i <= 15; ++i) rs.push_back(sample_record(i));
  const auto path = std::filesystem::temp_directory_path() / "pib_records_test.csv";
  emit_csv(rs, path.string());
  const std::string text = slurp(path);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 16);
  const std::vector<RunRecord> back = load_records(path.string());
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 15u);
  std::stringstream again;
  write_records(again, back);
  EXPECT_EQ(again.str(), text);
  EXPECT_EQ(back[3].scenario, rs[3].scenario);
  EXPECT_EQ(back[3].bits_per_camera, rs[3].bits_per_camera);
  EXPECT_EQ(back[3].moda_degenerate, true);
}

TEST(Records, RejectsForeignHeader) {
  std::stringstream ss("a,b,c\n1,2,3\n");
  EXPECT_THROW(parse_records(ss), IoError);
}

TEST(Stats, BinomialTail) {
  EXPECT_DOUBLE_EQ(binomial_upper_tail(5, 5), 1.0 / 32.0);
  EXPECT_DOUBLE_EQ(binomial_upper_tail(5, 4), 6.0 / 32.0);
  EXPECT_DOUBLE_EQ(binomial_upper_tail(5, 0), 1.0);
  EXPECT_DOUBLE_EQ(binomial_upper_tail(10, 9), 11.0 / 1024.0);
}

TEST(Stats, InterpolateInLogRate) {
  const std::vector<std::pair<double, double>> curve{{1000.0, 0.5}, {100.0, 0.1}, {10000.0, 0.6}};
  EXPECT_DOUBLE_EQ(interpolate_moda(curve, 100.0), 0.1);
  EXPECT_NEAR(interpolate_moda(curve, std::sqrt(1e5)), 0.3, 1e-12);
  EXPECT_DOUBLE_EQ(interpolate_moda(curve, 10.0), 0.1);
  EXPECT_DOUBLE_EQ(interpolate_moda(curve, 1e6), 0.6);
  EXPECT_THROW(interpolate_moda({}, 1.0), EvaluationError);
}

TEST(Stats, MatchedRateSignTest) {
  std::vector<RunRecord> rs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double bits : {100.0, 1000.0}) {
      RunRecord a;
      a.method = "equal";
      a.seed = seed;
      a.total_bits = bits;
      a.moda = bits == 100.0 ? 0.1 : 0.5;
      rs.push_back(a);
    }
    RunRecord p;
    p.method = "pib";
    p.seed = seed;
    p.total_bits = std::sqrt(1e5);
    p.moda = seed == 5 ? 0.3 : 0.4;
    rs.push_back(p);
  }
  SignTest t = matched_rate_sign_test(rs);
  EXPECT_EQ(t.wins, 4u);
  EXPECT_EQ(t.ties, 1u);
  EXPECT_NEAR(t.p_value, 1.0 / 16.0, 1e-15);
  EXPECT_NEAR(t.per_seed_margin[0], 0.1, 1e-12);
  rs.back().moda = 0.45;
  t = matched_rate_sign_test(rs);
  EXPECT_EQ(t.wins, 5u);
  EXPECT_NEAR(t.p_value, 1.0 / 32.0, 1e-15);
  rs.erase(rs.begin());
  rs.erase(rs.begin());
  EXPECT_THROW(matched_rate_sign_test(rs), EvaluationError);
}

TEST(Stats, SelectAndMean) {
  std::vector<RunRecord> rs;
  for (std::uint64_t i = 1; i <= 6; ++i) rs.push_back(sample_record(i));
  const auto pib = select(rs, "pib", 0.03);
  ASSERT_EQ(pib.size(), 1u);
  EXPECT_EQ(pib[0]->seed, 3u);
  EXPECT_DOUBLE_EQ(mean_of(select(rs, "pib", 0.01), &RunRecord::moda), 0.49);
  EXPECT_THROW(mean_of({}, &RunRecord::moda), EvaluationError);
}

TEST(SideFiles, ProvenanceAndPlotScript) {
  const auto dir = std::filesystem::temp_directory_path() / "pib_side_files";
  std::filesystem::create_directories(dir);
  const ExperimentConfig c = toy_config();
  write_provenance((dir / "provenance.json").string(), c, "verify --seed 1");
  const nlohmann::json j = nlohmann::json::parse(slurp(dir / "provenance.json"));
  EXPECT_EQ(j.at("config_hash"), config_hash(c));
  EXPECT_EQ(j.at("code_version"), kCodeVersion);
  EXPECT_EQ(config_hash(config_from_json(j.at("config"))), config_hash(c));
  write_plot_script((dir / "plot.gp").string(), "rate.csv", "lambda");
  const std::string gp = slurp(dir / "plot.gp");
  EXPECT_NE(gp.find("'rate.csv'"), std::string::npos);
  EXPECT_NE(gp.find("set logscale x"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, SaveAndLoad) {
  const ParamSet p = init_model(toy_config(), 6);
  const auto path = std::filesystem::temp_directory_path() / "pib_ckpt_test.txt";
  checkpoint::save(path.string(), p);
  EXPECT_TRUE(checkpoint::load(path.string()) == p);
  std::filesystem::remove(path);
}

TEST(Checks, QuickSuitePasses) {
  VerifySizes n;
  n.delay_cases = n.softmax_cases = n.kl_cases = n.pmf_cases = 100;
  n.coder_cases = 200;
  n.joint_cases = 20;
  n.decoder_cases = 10;
  const auto checks = run_checks(1, n);
  for (const CheckResult& c : checks) EXPECT_TRUE(c.passed) << c.name << " = " << c.value;
  std::stringstream a, b;
  write_checks(a, checks);
  write_checks(b, run_checks(1, n));
  EXPECT_EQ(a.str(), b.str());
}
