#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include <gtest/gtest.h>

#include "fcad/data.hpp"
#include "oracles.hpp"

namespace fcad {
namespace {

Series ramp_series(std::size_t length, std::size_t channels) {
  Series s;
  s.samples = Tensor(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(channels));
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      s.samples(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) =
          std::sin(0.3 * static_cast<double>(t) + static_cast<double>(c)) + 0.01 * static_cast<double>(c);
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    s.names.push_back("ch" + std::to_string(c));
    s.zones.push_back(0);
    s.roles.push_back(c % 2 == 0 ? ChannelRole::sensor : ChannelRole::actuator);
    s.periods.push_back(2.0 * std::numbers::pi / 0.3);
  }
  s.labels.assign(length, Label::normal);
  s.tags.assign(length, AttackType::none);
  return s;
}

Window window_of(std::vector<double> f) {
  Window w;
  w.features = std::move(f);
  return w;
}

// Rows of `a` and `b` that differ anywhere.
std::vector<std::size_t> changed_rows(const Series& a, const Series& b) {
  std::vector<std::size_t> out;
  for (Eigen::Index t = 0; t < a.samples.rows(); ++t) {
    if (a.samples.row(t) != b.samples.row(t)) out.push_back(static_cast<std::size_t>(t));
  }
  return out;
}

std::vector<Eigen::Index> changed_columns(const Series& a, const Series& b) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index c = 0; c < a.samples.cols(); ++c) {
    if (a.samples.col(c) != b.samples.col(c)) out.push_back(c);
  }
  return out;
}

TEST(Generator, NoiselessSingleChannelIsAnExactSinusoid) {
  GeneratorConfig cfg;
  cfg.channels = 1;
  cfg.zones = 1;
  cfg.duration = 2000;
  cfg.period_min = cfg.period_max = 40.0;
  cfg.noise_std = 0.0;
  cfg.seed = 17;
  const Series s = generate_normal(cfg);
  // Recover the phase from a quarter period apart, then compare everywhere.
  const double phase = std::atan2(s.samples(0, 0), s.samples(10, 0));
  double worst = 0.0;
  for (Eigen::Index t = 0; t < s.samples.rows(); ++t) {
    const double expected = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 40.0 + phase);
    worst = std::max(worst, std::abs(s.samples(t, 0) - expected));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Generator, NoiseHasTheConfiguredStd) {
  GeneratorConfig cfg;
  cfg.channels = 1;
  cfg.zones = 1;
  cfg.duration = 10000;
  cfg.seed = 4;
  cfg.noise_std = 0.0;
  const Series clean = generate_normal(cfg);
  cfg.noise_std = 0.1;
  const Series noisy = generate_normal(cfg);
  const Eigen::VectorXd e = noisy.samples.col(0) - clean.samples.col(0);
  const double mean = e.mean();
  const double sd = std::sqrt((e.array() - mean).square().sum() / static_cast<double>(e.size()));
  EXPECT_NEAR(sd, 0.1, 0.01);
}

TEST(Generator, IsDeterministicAndConsistent) {
  GeneratorConfig cfg;
  cfg.duration = 5000;
  cfg.coupling = zone_coupling(8, 4, 0.1);
  cfg.attacks = plan_attacks(AttackPlan{20, 20, 80, {}}, cfg.duration, 3);
  cfg.seed = 9;
  const Series a = generate(cfg);
  const Series b = generate(cfg);
  EXPECT_TRUE(a.samples == b.samples);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.tags, b.tags);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(anomalous_runs(a.labels).size(), 20u);
}

TEST(Generator, RejectsNonPositivePeriod) {
  GeneratorConfig cfg;
  cfg.period_min = 0.0;
  EXPECT_THROW(generate_normal(cfg), DataError);
}

TEST(Generator, ZoneCouplingIsBlockDiagonal) {
  const Tensor c = zone_coupling(8, 4, 0.1);
  for (Eigen::Index i = 0; i < 8; ++i) {
    for (Eigen::Index j = 0; j < 8; ++j) {
      const double expected = (i != j && i / 2 == j / 2) ? 0.1 : 0.0;
      EXPECT_EQ(c(i, j), expected);
    }
  }
}

TEST(Injector, ZeroStrengthCommandOnlyRelabels) {
  const Series s = ramp_series(100, 4);
  const Series out = inject_attack(s, AttackType::command_injection, 30, 10, 0.0, 1);
  EXPECT_TRUE(out.samples == s.samples);
  for (std::size_t t = 0; t < 100; ++t) {
    const bool inside = t >= 30 && t < 40;
    EXPECT_EQ(out.labels[t], inside ? Label::anomalous : Label::normal);
    EXPECT_EQ(out.tags[t], inside ? AttackType::command_injection : AttackType::none);
  }
}

TEST(Injector, DosFreezesOneChannel) {
  const Series s = ramp_series(100, 4);
  const Series out = inject_attack(s, AttackType::dos, 50, 12, 1.0, 2);
  const auto cols = changed_columns(s, out);
  ASSERT_EQ(cols.size(), 1u);
  for (Eigen::Index t = 50; t < 62; ++t) EXPECT_EQ(out.samples(t, cols[0]), s.samples(50, cols[0]));
}

TEST(Injector, ReplayCopiesAnEarlierSegment) {
  const Series s = ramp_series(300, 4);
  const Series out = inject_attack(s, AttackType::replay, 200, 25, 1.0, 3);
  const auto cols = changed_columns(s, out);
  ASSERT_EQ(cols.size(), 1u);
  const Eigen::Index c = cols[0];
  bool found = false;
  for (Eigen::Index src = 0; src + 25 <= 200 && !found; ++src) {
    found = out.samples.col(c).segment(200, 25) == s.samples.col(c).segment(src, 25);
    if (found) {
      EXPECT_EQ(out.labels[static_cast<std::size_t>(src)], Label::normal);
      EXPECT_EQ(out.labels[200], Label::anomalous);
    }
  }
  EXPECT_TRUE(found);
}

TEST(Injector, ReplayWithoutRoomRejects) {
  EXPECT_THROW(inject_attack(ramp_series(100, 2), AttackType::replay, 10, 20, 1.0, 1), DataError);
}

TEST(Injector, OverlapRejects) {
  const Series s = inject_attack(ramp_series(100, 2), AttackType::dos, 40, 10, 1.0, 1);
  EXPECT_THROW(inject_attack(s, AttackType::command_injection, 45, 10, 1.0, 2), DataError);
}

TEST(Injector, SensorTamperingRampsToPeak) {
  const Series s = ramp_series(200, 4);
  const Series out = inject_attack(s, AttackType::sensor_tampering, 100, 20, 2.0, 5);
  const auto cols = changed_columns(s, out);
  ASSERT_EQ(cols.size(), 1u);
  EXPECT_EQ(s.roles[static_cast<std::size_t>(cols[0])], ChannelRole::sensor);
  const Eigen::VectorXd delta = out.samples.col(cols[0]).segment(100, 20) - s.samples.col(cols[0]).segment(100, 20);
  for (Eigen::Index k = 1; k < 20; ++k) EXPECT_GT(delta(k), delta(k - 1));
}

TEST(Injector, EveryTypeIsLocal) {
  const Series s = ramp_series(400, 6);
  for (AttackType type : kInjectableAttacks) {
    const Series out = inject_attack(s, type, 250, 30, 1.5, 8);
    for (std::size_t t : changed_rows(s, out)) {
      EXPECT_GE(t, 250u) << attack_name(type);
      EXPECT_LT(t, 280u) << attack_name(type);
    }
    EXPECT_FALSE(changed_rows(s, out).empty()) << attack_name(type);
    EXPECT_NO_THROW(out.validate());
  }
}

TEST(Windowize, ForcedArithmetic) {
  const auto w = windowize(ramp_series(10, 3), 5, 5);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].start, 0u);
  EXPECT_EQ(w[1].start, 5u);
  EXPECT_EQ(w[1].features.size(), 15u);
  // Time-major flattening.
  EXPECT_EQ(w[1].features[3 * 1 + 2], ramp_series(10, 3).samples(6, 2));
}

TEST(Windowize, AllNormalSeries) {
  for (const Window& w : windowize(ramp_series(50, 2), 7, 3)) EXPECT_EQ(w.label, Label::normal);
}

TEST(Windowize, AnyAnomalousSampleFlagsTheWindow) {
  Series s = ramp_series(10, 1);
  for (std::size_t t = 7; t < 9; ++t) {
    s.labels[t] = Label::anomalous;
    s.tags[t] = AttackType::dos;
  }
  const auto w = windowize(s, 5, 1);
  ASSERT_EQ(w.size(), 6u);
  for (const Window& x : w) {
    const bool hit = x.start >= 3;
    EXPECT_EQ(x.label, hit ? Label::anomalous : Label::normal) << x.start;
    EXPECT_EQ(x.attack, hit ? AttackType::dos : AttackType::none) << x.start;
  }
}

TEST(Windowize, CountFormula) {
  for (std::size_t T : {20u, 21u, 57u, 200u}) {
    for (std::size_t L : {1u, 5u, 20u}) {
      for (std::size_t st : {1u, 3u, 10u}) {
        EXPECT_EQ(windowize(ramp_series(T, 2), L, st).size(), (T - L) / st + 1);
      }
    }
  }
}

TEST(Windowize, ShortSeriesRejects) {
  EXPECT_THROW(windowize(ramp_series(4, 2), 5, 1), DataError);
}

TEST(Normalize, ConstantFeatureMapsToZero) {
  std::vector<Window> train = {window_of({3.0, 1.0}), window_of({3.0, 2.0}), window_of({3.0, 6.0})};
  const NormStats stats = normalize(train);
  for (const Window& w : train) EXPECT_EQ(w.features[0], 0.0);
  EXPECT_EQ(stats.std[0], kStdFloor);
}

TEST(Normalize, TrainIsStandardised) {
  std::vector<Window> train;
  for (int i = 0; i < 50; ++i) train.push_back(window_of({std::sin(i * 1.0) * 4 + 2, i * 0.5 - 3.0}));
  normalize(train);
  for (std::size_t f = 0; f < 2; ++f) {
    double mean = 0.0, sq = 0.0;
    for (const Window& w : train) mean += w.features[f];
    mean /= 50.0;
    for (const Window& w : train) sq += (w.features[f] - mean) * (w.features[f] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-10);
    EXPECT_NEAR(std::sqrt(sq / 50.0), 1.0, 1e-10);
  }
}

TEST(Normalize, OtherListsUseTrainStatistics) {
  std::vector<Window> train, test;
  for (int i = 0; i < 40; ++i) {
    const double v = std::cos(i * 0.7) * 3.0;
    train.push_back(window_of({v}));
    test.push_back(window_of({v + 2.0}));
  }
  std::vector<Window>* others[] = {&test};
  const NormStats stats = normalize(train, others);
  double mean = 0.0;
  for (const Window& w : test) mean += w.features[0];
  mean /= 40.0;
  EXPECT_NEAR(mean, 2.0 / stats.std[0], 1e-10);
}

class CsvTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = oracle::scratch_dir("csv");
  std::filesystem::path write(const std::string& body) {
    const auto p = dir / "fixture.csv";
    std::ofstream(p) << body;
    return p;
  }
};

TEST_F(CsvTest, ThreeRowToy) {
  const Series s = load_swat_csv(write("Timestamp,FIT101,LIT101,Normal/Attack\n"
                                       "t0,1.5,2.0,Normal\n"
                                       "t1,1.6,2.1,Attack\n"
                                       "t2,1.7,2.2,Normal\n"),
                                 {});
  EXPECT_EQ(s.labels, (std::vector<Label>{Label::normal, Label::anomalous, Label::normal}));
  EXPECT_EQ(s.tags[1], AttackType::unknown);
  EXPECT_EQ(s.names, (std::vector<std::string>{"FIT101", "LIT101"}));
  EXPECT_EQ(s.samples(1, 1), 2.1);
}

TEST_F(CsvTest, MissingLabelColumnIsNamed) {
  try {
    load_swat_csv(write("Timestamp,FIT101\nt0,1.0\n"), {});
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("Normal/Attack"), std::string::npos) << e.what();
  }
}

TEST_F(CsvTest, NonNumericCellCitesRow) {
  try {
    load_swat_csv(write("Timestamp,FIT101,Normal/Attack\nt0,1.0,Normal\nt1,abc,Normal\n"), {});
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST_F(CsvTest, NoRowsRejects) {
  EXPECT_THROW(load_swat_csv(write("Timestamp,FIT101,Normal/Attack\n"), {}), DataError);
}

TEST_F(CsvTest, ConfiguredColumnsAndLabels) {
  CsvSchema schema;
  schema.timestamp_column = "time";
  schema.label_column = "state";
  schema.normal_value = "0";
  schema.attack_value = "1";
  schema.channels = {"b"};
  const Series s = load_swat_csv(write("time,a,b,state\n0,1,2,0\n1,3,4,1\n"), schema);
  EXPECT_EQ(s.channels(), 1u);
  EXPECT_EQ(s.samples(1, 0), 4.0);
  EXPECT_EQ(s.labels[1], Label::anomalous);
}

TEST_F(CsvTest, GeneratedSeriesRoundTrips) {
  GeneratorConfig cfg;
  cfg.duration = 3000;
  cfg.coupling = zone_coupling(8, 4, 0.1);
  cfg.attacks = plan_attacks(AttackPlan{10, 20, 60, {}}, cfg.duration, 2);
  cfg.seed = 5;
  const Series s = generate(cfg);
  const auto path = dir / "series.csv";
  write_series_csv(s, path);
  const Series back = load_swat_csv(path, {});
  EXPECT_TRUE(back.samples == s.samples);
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.tags, s.tags);
  EXPECT_EQ(back.names, s.names);
}

// The generator's difficulty ordering holds for a model-free detector.
TEST(DataOracle, CommandInjectionOutscoresTiming) {
  GeneratorConfig cfg;
  cfg.coupling = zone_coupling(cfg.channels, cfg.zones, 0.1);
  cfg.seed = 20250101;
  cfg.attacks = plan_attacks(AttackPlan{}, cfg.duration, 7);
  const std::vector<Window> windows = windowize(generate(cfg), 20, 10);
  const std::size_t fit_end = windows.size() * 7 / 10;
  const oracle::ZScoreDetector detector(std::span<const Window>(windows).first(fit_end), cfg.channels);
  std::map<AttackType, std::pair<double, std::size_t>> totals;
  for (const Window& w : windows) {
    auto& [sum, n] = totals[w.attack];
    sum += detector.score(w);
    ++n;
  }
  auto mean = [&](AttackType t) { return totals[t].first / static_cast<double>(totals[t].second); };
  EXPECT_GT(mean(AttackType::command_injection), mean(AttackType::timing));
  EXPECT_GT(mean(AttackType::command_injection), mean(AttackType::none));
}

}  // namespace
}  // namespace fcad
