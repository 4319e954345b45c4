#include <gtest/gtest.h>

#include "support.hpp"
#include "tokmerge/task_eval.hpp"

using namespace tokmerge;

namespace {

DatasetSpec small_spec(double noise, std::size_t per_class = 8) {
  DatasetSpec s;
  s.samples_per_class = per_class;
  s.noise_level = noise;
  return s;
}

std::shared_ptr<const ModelWeights> toy_weights(std::uint64_t seed = 100) {
  return std::make_shared<const ModelWeights>(random_weights(ModelDims{}, seed));
}

}  // namespace

TEST(GenerateDataset, CountsAndBalance) {
  const auto ds = generate_dataset(small_spec(0.25, 64), 1);
  ASSERT_EQ(ds.size(), 512u);
  std::vector<int> counts(8, 0);
  for (const auto& e : ds.examples) ++counts[e.label];
  for (int c : counts) EXPECT_EQ(c, 64);
  EXPECT_EQ(ds.examples[0].image.height, 12u);
  EXPECT_EQ(ds.examples[0].image.width, 20u);
}

TEST(GenerateDataset, Deterministic) {
  EXPECT_EQ(generate_dataset(small_spec(0.25), 3).examples, generate_dataset(small_spec(0.25), 3).examples);
  EXPECT_NE(generate_dataset(small_spec(0.25), 3).examples, generate_dataset(small_spec(0.25), 4).examples);
  EXPECT_NE(generate_dataset(small_spec(0.25), 3, Split::Calibration).examples,
            generate_dataset(small_spec(0.25), 3, Split::Evaluation).examples);
}

TEST(GenerateDataset, NoiselessSamplesEqualTemplate) {
  const auto ds = generate_dataset(small_spec(0.0), 5);
  for (const auto& a : ds.examples)
    for (const auto& b : ds.examples)
      if (a.label == b.label) {
        EXPECT_EQ(a.image, b.image);
      }
}

TEST(GenerateDataset, SplitsShareClassTemplates) {
  const auto a = generate_dataset(small_spec(0.0, 1), 5, Split::Calibration);
  const auto b = generate_dataset(small_spec(0.0, 1), 5, Split::Evaluation);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(a.examples[c].image, b.examples[c].image);
}

TEST(SeededSubset, SizeOrderAndDeterminism) {
  const auto ds = generate_dataset(small_spec(0.25, 16), 2);
  const auto a = seeded_subset(ds.examples, 40, 9);
  EXPECT_EQ(a.size(), 40u);
  EXPECT_EQ(a, seeded_subset(ds.examples, 40, 9));
  EXPECT_NE(a, seeded_subset(ds.examples, 40, 10));
  EXPECT_EQ(seeded_subset(ds.examples, 1000, 9).size(), ds.size());
}

TEST(FitPrototypes, OneSamplePerClassGivesItsEmbedding) {
  const auto w = toy_weights();
  const auto ds = generate_dataset(small_spec(0.25, 1), 6);
  const auto head = fit_prototypes(*w, ds.examples);
  for (const auto& e : ds.examples) {
    const auto pooled = mean_pool(forward(e.image, *w));
    for (std::size_t j = 0; j < pooled.size(); ++j) EXPECT_DOUBLE_EQ(head.centroids[e.label][j], pooled[j]);
  }
}

TEST(FitPrototypes, DuplicatedCalibrationSetSameCentroids) {
  const auto w = toy_weights();
  const auto ds = generate_dataset(small_spec(0.25, 4), 7);
  auto doubled = ds.examples;
  doubled.insert(doubled.end(), ds.examples.begin(), ds.examples.end());
  const auto a = fit_prototypes(*w, ds.examples);
  const auto b = fit_prototypes(*w, doubled);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(a.centroids[c][j], b.centroids[c][j], 1e-12);
}

TEST(FitPrototypes, MissingClassRejected) {
  const auto w = toy_weights();
  auto ds = generate_dataset(small_spec(0.25, 2), 7);
  std::erase_if(ds.examples, [](const LabeledExample& e) { return e.label == 3; });
  EXPECT_THROW(fit_prototypes(*w, ds.examples), ConfigError);
}

TEST(FitPrototypes, NoiselessTemplatesAreMemorized) {
  const auto w = toy_weights();
  const auto calib = generate_dataset(small_spec(0.0, 4), 8);
  TaskEvaluator ev(w, fit_prototypes(*w, calib.examples), calib.examples);
  EXPECT_EQ(ev.evaluate(MergeSchedule::uniform(4, 0.0)).accuracy, 1.0);
}

TEST(Classify, SelfMatchAndScaleInvariance) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  PrototypeHead head;
  head.centroids.assign(5, std::vector<double>(6));
  for (auto& c : head.centroids)
    for (auto& v : c) v = g(rng);
  EXPECT_EQ(classify_pooled(head.centroids[3], head), 3u);
  std::vector<double> scaled = head.centroids[3];
  for (auto& v : scaled) v *= 7.0;
  EXPECT_EQ(classify_pooled(scaled, head), 3u);
}

TEST(Classify, MatchesBruteForceArgmax) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 200; ++trial) {
    PrototypeHead head;
    head.centroids.assign(4, std::vector<double>(8));
    for (auto& c : head.centroids)
      for (auto& v : c) v = g(rng);
    std::vector<double> x(8);
    for (auto& v : x) v = g(rng);
    std::size_t best = 0;
    double best_cos = -2;
    for (std::size_t c = 0; c < 4; ++c) {
      double dot = 0, nx = 0, nc = 0;
      for (std::size_t j = 0; j < 8; ++j) {
        dot += x[j] * head.centroids[c][j];
        nx += x[j] * x[j];
        nc += head.centroids[c][j] * head.centroids[c][j];
      }
      const double cs = dot / std::sqrt(nx * nc);
      if (cs > best_cos) best_cos = cs, best = c;
    }
    EXPECT_EQ(classify_pooled(x, head), best);
  }
}

TEST(Evaluator, CalibrationSelfConsistency) {
  const auto w = toy_weights();
  const auto calib = generate_dataset(small_spec(0.25, 8), 9);
  const auto head = fit_prototypes(*w, calib.examples);
  std::size_t correct = 0;
  for (const auto& e : calib.examples) correct += classify(forward(e.image, *w), head) == e.label;
  const auto r = evaluate_objectives(MergeSchedule::uniform(4, 0.0), *w, head, calib.examples, std::nullopt);
  EXPECT_DOUBLE_EQ(r.accuracy, double(correct) / double(calib.size()));
}

TEST(Evaluator, ObjectivesInRangeAndFlopsFromModel) {
  const auto w = toy_weights();
  const auto calib = generate_dataset(small_spec(0.25, 4), 10);
  const auto eval = generate_dataset(small_spec(0.25, 4), 10, Split::Evaluation);
  TaskEvaluator ev(w, fit_prototypes(*w, calib.examples), eval.examples);
  const auto full = ev.evaluate(MergeSchedule::uniform(4, 0.0));
  for (const auto& s : {MergeSchedule::uniform(4, 0.3), MergeSchedule{{0.1, 0.0, 0.25, 0.05}}}) {
    const auto r = ev.evaluate(s);
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
    EXPECT_EQ(r.flops, schedule_flops(s, w->dims).total);
    EXPECT_LT(r.flops, full.flops);
  }
}

TEST(Evaluator, ThreadCountDoesNotChangeResults) {
  const auto w = toy_weights();
  const auto calib = generate_dataset(small_spec(0.25, 4), 11);
  const auto eval = generate_dataset(small_spec(0.25, 8), 11, Split::Evaluation);
  const auto head = fit_prototypes(*w, calib.examples, 1);
  TaskEvaluator one(w, head, eval.examples, 1), four(w, head, eval.examples, 4);
  const MergeSchedule s{{0.3, 0.1, 0.2, 0.0}};
  ChannelSpec ch;
  ch.snr_db = 0.0;
  ch.seed = 5;
  const std::optional<ChannelSpec> channels[] = {std::nullopt, ch};
  EXPECT_EQ(one.correctness(s, channels), four.correctness(s, channels));
  const auto h4 = fit_prototypes(*w, calib.examples, 4);
  EXPECT_EQ(head.centroids, h4.centroids);
}

TEST(Evaluator, SweepMatchesSingleEvaluations) {
  const auto w = toy_weights();
  const auto calib = generate_dataset(small_spec(0.25, 4), 12);
  const auto eval = generate_dataset(small_spec(0.25, 4), 12, Split::Evaluation);
  TaskEvaluator ev(w, fit_prototypes(*w, calib.examples), eval.examples);
  ChannelSpec base;
  base.seed = 77;
  const double snrs[] = {-10.0, 5.0, 25.0};
  const auto sweep = ev.evaluate_sweep(MergeSchedule::uniform(4, 0.2), snrs, base);
  for (std::size_t i = 0; i < 3; ++i) {
    ChannelSpec c = base;
    c.snr_db = snrs[i];
    const auto single = ev.evaluate(MergeSchedule::uniform(4, 0.2), c);
    EXPECT_EQ(sweep[i].correct, single.correct);
    EXPECT_EQ(*sweep[i].snr_db, snrs[i]);
  }
}
