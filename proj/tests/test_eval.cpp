#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ctxrel/eval.hpp"
#include "ctxrel/synth.hpp"
#include "oracles.hpp"

namespace {

using ctxrel::BoundingBox;
using ctxrel::Dataset;
using ctxrel::GroundTruth;
using ctxrel::ImageAnnotation;
using ctxrel::Model;
using ctxrel::ModelKind;
using ctxrel::RankedPrediction;
using ctxrel::Task;
using ctxrel::TensorId;
using ctxrel::Vec;

ctxrel::ModelDims spatial_dims(std::size_t P, std::size_t K = 0) {
  ctxrel::ModelDims d;
  d.predicates = P;
  d.feature_dim = 14;
  d.code_dim = 3;
  d.embedding_dim = 2;
  d.combos = K;
  return d;
}

ImageAnnotation two_object_image() {
  ImageAnnotation img;
  img.id = "img";
  img.size = {100, 100};
  img.objects = {{"cat", {10, 10, 20, 20}}, {"dog", {50, 40, 30, 20}}};
  img.relationships = {{0, 1, 1, ""}};
  img.detections = {{"cat", {11, 10, 20, 20}, 0.9}, {"dog", {50, 41, 30, 20}, 0.5}};
  return img;
}

Dataset one_image_dataset() {
  Dataset ds;
  ds.predicates = {"near", "on", "under"};
  ds.images = {two_object_image()};
  ctxrel::refresh_vocabulary(ds);
  return ds;
}

Model random_spatial_model(std::size_t P, std::uint64_t seed) {
  Model model(ModelKind::Baseline1Spatial, spatial_dims(P));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& t : model.params().tensors()) {
    for (double& v : t.value) v = g(rng);
  }
  for (std::size_t p = 0; p < P; ++p) model.predicate_names().push_back("p" + std::to_string(p));
  return model;
}

RankedPrediction pred(std::string s, std::string o, std::size_t p, double score, std::size_t si = 0,
                      std::size_t oi = 1) {
  RankedPrediction r;
  r.subject.label = std::move(s);
  r.object.label = std::move(o);
  r.subject.box = {0, 0, 10, 10};
  r.object.box = {20, 0, 10, 10};
  r.subject_index = si;
  r.object_index = oi;
  r.predicate = p;
  r.score = score;
  return r;
}

GroundTruth truth(std::size_t si, std::size_t oi, std::size_t p) {
  return {"a", "b", {0, 0, 10, 10}, {20, 0, 10, 10}, si, oi, p};
}

TEST(Iou, Examples) {
  EXPECT_DOUBLE_EQ(ctxrel::iou({1, 2, 3, 4}, {1, 2, 3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(ctxrel::iou({0, 0, 1, 1}, {5, 5, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(ctxrel::iou({0, 0, 10, 10}, {10, 0, 10, 10}), 0.0);
  EXPECT_DOUBLE_EQ(ctxrel::iou({0, 0, 10, 10}, {5, 0, 10, 10}), 50.0 / 150.0);
}

TEST(Iou, AgreesWithOracleAndIsSymmetric) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int trial = 0; trial < 500; ++trial) {
    const BoundingBox a{u(rng), u(rng), 1 + u(rng), 1 + u(rng)}, b{u(rng), u(rng), 1 + u(rng), 1 + u(rng)};
    EXPECT_NEAR(ctxrel::iou(a, b), oracle::box_iou(a, b), 1e-14);
    EXPECT_DOUBLE_EQ(ctxrel::iou(a, b), ctxrel::iou(b, a));
  }
}

TEST(UnionBox, Examples) {
  EXPECT_EQ(ctxrel::union_box({0, 0, 2, 2}, {4, 4, 2, 2}), (BoundingBox{0, 0, 6, 6}));
  EXPECT_EQ(ctxrel::union_box({1, 1, 2, 2}, {0, 0, 5, 5}), (BoundingBox{0, 0, 5, 5}));
  EXPECT_EQ(ctxrel::union_box({3, 4, 5, 6}, {3, 4, 5, 6}), (BoundingBox{3, 4, 5, 6}));
}

TEST(TaskNames, RoundTrip) {
  for (Task t : ctxrel::kAllTasks) EXPECT_EQ(ctxrel::parse_task(ctxrel::task_name(t)), t);
  EXPECT_EQ(ctxrel::task_title(Task::Phrase), "Phrase Det.");
  EXPECT_THROW(ctxrel::parse_task("caption"), ctxrel::Error);
}

TEST(PredictImage, TwoObjectsGiveTwoPCandidates) {
  const Model model = random_spatial_model(3, 1);
  const auto preds = ctxrel::predict_image(model, two_object_image(), Task::Predicate, {});
  EXPECT_EQ(preds.size(), 2u * 3u);
  for (std::size_t i = 1; i < preds.size(); ++i) EXPECT_GE(preds[i - 1].score, preds[i].score);
}

TEST(PredictImage, FewerThanTwoObjectsGivesNothing) {
  ImageAnnotation img = two_object_image();
  img.objects.resize(1);
  img.relationships.clear();
  const Model model = random_spatial_model(3, 1);
  EXPECT_TRUE(ctxrel::predict_image(model, img, Task::Predicate, {}).empty());
}

TEST(PredictImage, ScoreIsObjectnessTimesProbability) {
  const Model model = random_spatial_model(2, 2);
  const ImageAnnotation img = two_object_image();
  const auto preds = ctxrel::predict_image(model, img, Task::Relationship, {});
  ASSERT_EQ(preds.size(), 4u);
  for (const auto& p : preds) {
    const auto& s = img.detections[p.subject_index];
    const auto& o = img.detections[p.object_index];
    const auto probs = model.forward(ctxrel::spatial_feature(s.box, o.box, img.size)).probabilities;
    EXPECT_NEAR(p.score, s.objectness * o.objectness * probs[p.predicate], 1e-15);
  }
}

TEST(PredictImage, EqualScoresFollowLexicographicTieBreak) {
  Model model(ModelKind::Baseline1Spatial, spatial_dims(3));  // all-zero weights: uniform probabilities
  model.predicate_names() = {"a", "b", "c"};
  ImageAnnotation img = two_object_image();
  img.objects = {{"zebra", {10, 10, 20, 20}}, {"apple", {50, 40, 30, 20}}};
  const auto preds = ctxrel::predict_image(model, img, Task::Predicate, {});
  ASSERT_EQ(preds.size(), 6u);
  EXPECT_EQ(preds[0].subject.label, "apple");
  EXPECT_EQ(preds[0].predicate, 0u);
  EXPECT_EQ(preds[2].predicate, 2u);
  EXPECT_EQ(preds[3].subject.label, "zebra");
  const auto again = ctxrel::predict_image(model, img, Task::Predicate, {});
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EXPECT_EQ(again[i].subject_index, preds[i].subject_index);
    EXPECT_EQ(again[i].predicate, preds[i].predicate);
  }
}

TEST(PredictImage, RankingInvariantUnderObjectnessScaling) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  const Model model = random_spatial_model(3, 9);
  for (int trial = 0; trial < 30; ++trial) {
    ImageAnnotation img = two_object_image();
    img.detections.clear();
    for (int i = 0; i < 4; ++i) {
      img.detections.push_back({i % 2 ? "cat" : "dog", {u(rng) * 50, u(rng) * 50, 10 + u(rng) * 40, 10 + u(rng) * 40},
                                u(rng)});
    }
    ImageAnnotation scaled = img;
    for (auto& d : scaled.detections) d.objectness *= 0.37;
    const auto a = ctxrel::predict_image(model, img, Task::Phrase, {});
    const auto b = ctxrel::predict_image(model, scaled, Task::Phrase, {});
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].subject_index, b[i].subject_index);
      EXPECT_EQ(a[i].object_index, b[i].object_index);
      EXPECT_EQ(a[i].predicate, b[i].predicate);
    }
  }
}

TEST(PredictImage, TopFiftyCapKeepsMostConfident) {
  const Model model = random_spatial_model(1, 3);
  ImageAnnotation img = two_object_image();
  img.detections.clear();
  for (int i = 0; i < 55; ++i) {
    img.detections.push_back({"cat", {static_cast<double>(i), 0, 10, 10}, i < 5 ? 0.1 : 0.9});
  }
  ctxrel::PredictContext ctx;
  ctx.top50 = true;
  const auto capped = ctxrel::predict_image(model, img, Task::Relationship, ctx);
  EXPECT_EQ(capped.size(), 50u * 49u);
  for (const auto& p : capped) {
    EXPECT_GE(p.subject_index, 5u);
    EXPECT_GE(p.object_index, 5u);
  }
  EXPECT_EQ(ctxrel::predict_image(model, img, Task::Relationship, {}).size(), 55u * 54u);
}

TEST(PredictImage, Baseline2OmitsUnseenCombos) {
  Model model(ModelKind::Baseline2Spatial, spatial_dims(3, 2));
  model.predicate_names() = {"near", "on", "under"};
  model.combos().combos = {{"cat", 1, "dog"}, {"cat", 2, "dog"}};
  model.params().at(TensorId::CombinationWeights).value[0] = 1.0;
  const auto preds = ctxrel::predict_image(model, two_object_image(), Task::Predicate, {});
  // Only cat->dog has combos, and only for predicates 1 and 2.
  ASSERT_EQ(preds.size(), 2u);
  for (const auto& p : preds) {
    EXPECT_EQ(p.subject.label, "cat");
    EXPECT_NE(p.predicate, 0u);
  }
  const auto probs = model.forward(ctxrel::spatial_feature({10, 10, 20, 20}, {50, 40, 30, 20}, {100, 100})).probabilities;
  EXPECT_NEAR(preds[0].score + preds[1].score, probs[0] + probs[1], 1e-15);
}

TEST(PredictImage, AppearanceKindsScoreOnlyPairsWithMaps) {
  ctxrel::ModelDims d;
  d.predicates = 2;
  d.feature_dim = 2;
  Model model(ModelKind::Baseline1App, d);
  model.predicate_names() = {"a", "b"};
  ImageAnnotation img = two_object_image();
  img.relationships = {{0, 0, 1, "m.fmap"}};
  const auto fm = std::make_shared<const ctxrel::FeatureMap>(1, 1, 2, std::vector<double>{1, 2});
  ctxrel::PredictContext ctx;
  ctx.resolver = [fm](const std::string&) { return fm; };
  const auto preds = ctxrel::predict_image(model, img, Task::Predicate, ctx);
  ASSERT_EQ(preds.size(), 2u);
  EXPECT_EQ(preds[0].subject_index, 0u);
  EXPECT_TRUE(ctxrel::predict_image(model, img, Task::Phrase, ctx).empty());
  EXPECT_THROW(ctxrel::predict_image(model, img, Task::Predicate, {}), ctxrel::Error);
}

TEST(Recall, AllGroundTruthFoundGivesOne) {
  const std::vector<std::vector<RankedPrediction>> preds{{pred("a", "b", 1, 0.9), pred("a", "b", 0, 0.1)}};
  const std::vector<std::vector<GroundTruth>> gt{{truth(0, 1, 1), truth(0, 1, 0)}};
  EXPECT_EQ(ctxrel::recall_at_k(preds, gt, 2, Task::Predicate).value(), 1.0);
}

TEST(Recall, HalfMatchedGivesHalf) {
  const std::vector<std::vector<RankedPrediction>> preds{{pred("a", "b", 1, 0.9), pred("a", "b", 0, 0.1)}};
  const std::vector<std::vector<GroundTruth>> gt{{truth(0, 1, 1), truth(0, 1, 0)}};
  const auto r = ctxrel::recall_at_k(preds, gt, 1, Task::Predicate);
  EXPECT_EQ(r.matched, 1u);
  EXPECT_EQ(r.total, 2u);
  EXPECT_EQ(r.value(), 0.5);
}

TEST(Recall, EachPredictionConsumesOneGroundTruth) {
  // Duplicate ground truth on the same pair needs two predictions.
  const std::vector<RankedPrediction> preds{pred("a", "b", 0, 0.9)};
  const std::vector<GroundTruth> gt{truth(0, 1, 0), truth(0, 1, 0)};
  EXPECT_EQ(ctxrel::count_matches(preds, gt, 5, Task::Predicate), 1u);
}

TEST(Recall, MaximumMatchingBeatsFirstComeAssignment) {
  // Prediction 0 matches both boxes, prediction 1 only the first. Assigning
  // prediction 0 to the first box would strand prediction 1.
  RankedPrediction wide = pred("a", "b", 0, 0.9);
  wide.subject.box = {0, 0, 10, 10};
  RankedPrediction narrow = pred("a", "b", 0, 0.8);
  const std::vector<RankedPrediction> preds{wide, narrow};
  GroundTruth g1 = truth(0, 1, 0);
  GroundTruth g2 = truth(2, 3, 0);
  g2.subject_box = {2, 0, 10, 10};
  narrow.subject.box = {0, 0, 10, 10};
  const std::vector<GroundTruth> gt{g1, g2};
  EXPECT_EQ(ctxrel::count_matches(preds, gt, 2, Task::Relationship),
            oracle::brute_force_matches(preds, gt, 2, Task::Relationship));
}

TEST(Recall, MatchesBruteForceOracle) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 500; ++trial) {
    const auto inst = oracle::random_instance(rng);
    EXPECT_EQ(ctxrel::count_matches(inst.preds, inst.truth, inst.k, inst.task),
              oracle::brute_force_matches(inst.preds, inst.truth, inst.k, inst.task))
        << "trial " << trial;
  }
}

TEST(Recall, MonotoneInK) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = oracle::random_instance(rng);
    std::size_t prev = 0;
    for (std::size_t k = 1; k <= inst.preds.size() + 1; ++k) {
      const std::size_t now = ctxrel::count_matches(inst.preds, inst.truth, k, inst.task);
      EXPECT_GE(now, prev);
      prev = now;
    }
  }
}

TEST(Recall, PredicateTaskIgnoresIouThreshold) {
  std::mt19937_64 rng(78);
  for (int trial = 0; trial < 200; ++trial) {
    auto inst = oracle::random_instance(rng);
    inst.task = Task::Predicate;
    const std::size_t base = ctxrel::count_matches(inst.preds, inst.truth, inst.k, Task::Predicate, 0.5);
    for (double thr : {0.0, 0.3, 0.9, 1.0}) {
      EXPECT_EQ(ctxrel::count_matches(inst.preds, inst.truth, inst.k, Task::Predicate, thr), base);
    }
  }
}

TEST(Recall, NoGroundTruthAndBadK) {
  const std::vector<std::vector<RankedPrediction>> preds{{}};
  const std::vector<std::vector<GroundTruth>> gt{{}};
  const auto r = ctxrel::recall_at_k(preds, gt, 50, Task::Predicate);
  EXPECT_EQ(r.total, 0u);
  EXPECT_EQ(r.value(), 0.0);
  EXPECT_THROW(ctxrel::recall_at_k(preds, gt, 0, Task::Predicate), ctxrel::Error);
}

TEST(ZeroShotSplit, Examples) {
  Dataset train = one_image_dataset();
  Dataset test = one_image_dataset();
  EXPECT_TRUE(ctxrel::zero_shot_split(train, test).empty());

  // Same subject and predicate, new object.
  test.images[0].objects[1].label = "horse";
  ctxrel::refresh_vocabulary(test);
  const auto split = ctxrel::zero_shot_split(train, test);
  ASSERT_EQ(split.size(), 1u);
  EXPECT_EQ(split.begin()->object, "horse");

  // Disjoint types: everything in test is unseen.
  test.images[0].relationships = {{0, 0, 1, ""}, {1, 2, 0, ""}};
  EXPECT_EQ(ctxrel::zero_shot_split(train, test), ctxrel::split_triplet_types(test));
}

TEST(ZeroShotSplit, PartitionsTestTypes) {
  ctxrel::SynthConfig sc = ctxrel::SynthConfig::zero_shot_preset();
  sc.train_images = 300;
  sc.test_images = 200;
  const auto data = ctxrel::synth_generate(sc);
  const auto train_types = ctxrel::split_triplet_types(data.train);
  const auto test_types = ctxrel::split_triplet_types(data.test);
  const auto split = ctxrel::zero_shot_split(data.train, data.test);
  for (const auto& t : split) {
    EXPECT_EQ(train_types.count(t), 0u);
    EXPECT_EQ(test_types.count(t), 1u);
  }
  for (const auto& t : test_types) EXPECT_TRUE(split.count(t) == 1 || train_types.count(t) == 1);
}

TEST(LanguagePrior, LoadAndApply) {
  std::istringstream in("# weights\ncat on dog 2\ncat near dog 0\n");
  const auto prior = ctxrel::load_language_prior(in);
  EXPECT_EQ(prior.size(), 2u);
  EXPECT_EQ(prior.weight("cat", "under", "dog"), 1.0);
  const std::vector<std::string> names{"near", "on", "under"};
  const ctxrel::PredicateScores s{{0.0, 0.0, 0.0}, {0.5, 0.3, 0.2}};
  const auto out = ctxrel::apply_language_prior(s, prior, "cat", "dog", names);
  EXPECT_EQ(out.probabilities, (Vec{0.0, 0.6, 0.2}));
  EXPECT_EQ(out.scores, s.scores);
}

TEST(LanguagePrior, NeutralAndScaledPriorsKeepRanking) {
  const Model model = random_spatial_model(3, 4);
  std::istringstream ones("cat p0 dog 1\ncat p1 dog 1\ncat p2 dog 1\n");
  std::istringstream twos("cat p0 dog 2\ncat p1 dog 2\ncat p2 dog 2\ndog p0 cat 2\ndog p1 cat 2\ndog p2 cat 2\n");
  const auto one = ctxrel::load_language_prior(ones), two = ctxrel::load_language_prior(twos);
  ctxrel::PredictContext a, b, c;
  b.prior = &one;
  c.prior = &two;
  const auto plain = ctxrel::predict_image(model, two_object_image(), Task::Predicate, a);
  const auto neutral = ctxrel::predict_image(model, two_object_image(), Task::Predicate, b);
  const auto doubled = ctxrel::predict_image(model, two_object_image(), Task::Predicate, c);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_EQ(plain[i].predicate, neutral[i].predicate);
    EXPECT_EQ(plain[i].subject_index, neutral[i].subject_index);
    EXPECT_EQ(plain[i].predicate, doubled[i].predicate);
    EXPECT_EQ(plain[i].subject_index, doubled[i].subject_index);
  }
}

TEST(LanguagePrior, ZeroWeightRanksLastAmongNonzero) {
  const Model model = random_spatial_model(3, 4);
  const auto plain = ctxrel::predict_image(model, two_object_image(), Task::Predicate, {});
  const std::size_t top = plain.front().predicate;
  std::istringstream in("cat p" + std::to_string(top) + " dog 0\n");
  const auto prior = ctxrel::load_language_prior(in);
  ctxrel::PredictContext ctx;
  ctx.prior = &prior;
  const auto preds = ctxrel::predict_image(model, two_object_image(), Task::Predicate, ctx);
  std::vector<RankedPrediction> cat_dog;
  for (const auto& p : preds) {
    if (p.subject.label == "cat") cat_dog.push_back(p);
  }
  EXPECT_EQ(cat_dog.back().predicate, top);
  EXPECT_EQ(cat_dog.back().score, 0.0);
}

TEST(LanguagePrior, RejectsNegativeAndMalformed) {
  std::istringstream neg("a on b -1\n");
  EXPECT_THROW(ctxrel::load_language_prior(neg), ctxrel::LanguagePriorError);
  std::istringstream short_line("a on 1\n");
  EXPECT_THROW(ctxrel::load_language_prior(short_line), ctxrel::LanguagePriorError);
  std::istringstream bad_number("a on b x\n");
  EXPECT_THROW(ctxrel::load_language_prior(bad_number), ctxrel::LanguagePriorError);
  ctxrel::LanguagePrior prior;
  EXPECT_THROW(prior.set({"a", "on", "b"}, -0.5), ctxrel::LanguagePriorError);
}

TEST(Evaluate, EmptyRelationshipsGiveZeroTotals) {
  Dataset ds = one_image_dataset();
  ds.images[0].relationships.clear();
  const Model model = random_spatial_model(3, 1);
  ctxrel::EvalOptions opt;
  opt.tasks = {Task::Predicate, Task::Phrase};
  const auto r = ctxrel::evaluate(model, ds, {}, opt);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) EXPECT_EQ(row.result.total, 0u);
}

TEST(Evaluate, RowsPerTaskAndKAndTruncatedPredictions) {
  const Dataset ds = one_image_dataset();
  Model model = random_spatial_model(3, 1);
  model.predicate_names() = ds.predicates;
  ctxrel::EvalOptions opt;
  opt.ks = {1, 3};
  opt.tasks = {Task::Predicate, Task::Relationship};
  const auto r = ctxrel::evaluate(model, ds, {}, opt);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows[0].k, 1u);
  EXPECT_EQ(r.rows[3].task, Task::Relationship);
  EXPECT_EQ(r.predictions.size(), 6u);
  EXPECT_LE(r.rows[0].result.matched, r.rows[1].result.matched);

  std::ostringstream results, predictions;
  ctxrel::write_results(results, "Spatial+C", "all", r.rows);
  EXPECT_EQ(results.str().substr(0, 41), "method\tsplit\ttask\tk\tmatched\ttotal\trecall\n");
  ctxrel::write_predictions(predictions, r.predictions, model.predicate_names());
  EXPECT_NE(predictions.str().find("img\tpredicate\tcat\t"), std::string::npos);
}

TEST(Evaluate, RestrictsToRequestedTypes) {
  const Dataset ds = one_image_dataset();
  Model model = random_spatial_model(3, 1);
  model.predicate_names() = ds.predicates;
  const std::set<ctxrel::TripletType> none;
  ctxrel::EvalOptions opt;
  opt.only_types = &none;
  const auto r = ctxrel::evaluate(model, ds, {}, opt);
  for (const auto& row : r.rows) EXPECT_EQ(row.result.total, 0u);
}

}  // namespace
