#include <gtest/gtest.h>

#include "katsum/triplet_select.hpp"
#include "oracles.hpp"

using namespace katsum;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

KGEmbeddings three_entities() {
  KGEmbeddings e;
  e.entities = {"alice", "acme", "nova"};
  e.relations = {"founded", "visited"};
  e.entity = Eigen::MatrixXd(3, 2);
  e.entity << 1, 0, 0, 1, -1, 0;
  e.relation = Eigen::MatrixXd(2, 2);
  e.relation << 1, 1, -1, 1;
  e.build_index();
  return e;
}

Triplet tr(std::string h, std::string r, std::string t) { return {std::move(h), std::move(r), std::move(t), "d", 0}; }

}  // namespace

TEST(Similarity, Examples) {
  EXPECT_NEAR(similarity(vec({2, 3}), vec({2, 3})), 1.0, 1e-15);
  EXPECT_EQ(similarity(vec({1, 0}), vec({0, 1})), 0.0);
  EXPECT_NEAR(similarity(vec({1, 0}), vec({1, 1})), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_THROW(similarity(vec({0, 0}), vec({1, 1})), Error);
}

TEST(LabelTriplets, Examples) {
  const auto emb = three_entities();
  const std::vector<Triplet> source{tr("alice", "founded", "acme"), tr("alice", "visited", "nova")};
  const auto l = label_triplets(source, {tr("alice", "founded", "acme")}, emb, 0.8);
  EXPECT_EQ(l[0].label, 1);
  EXPECT_NEAR(l[0].best_similarity, 1.0, 1e-12);
  EXPECT_EQ(l[1].label, 0);
  for (const auto& x : label_triplets(source, {}, emb, 0.8)) EXPECT_EQ(x.label, 0);
}

TEST(LabelTriplets, ThresholdBoundary) {
  // best similarity 1/sqrt(2) stays below 0.8
  KGEmbeddings e;
  e.entities = {"a", "b", "c"};
  e.relations = {"r"};
  e.entity = Eigen::MatrixXd::Zero(3, 1);
  e.entity << 1, 0, 1;
  e.relation = Eigen::MatrixXd::Zero(1, 1);
  e.build_index();
  // [a;r;b] = [1,0,0] and [a;r;c] = [1,0,1]: cosine 1/sqrt(2)
  const auto l = label_triplets({tr("a", "r", "b")}, {tr("a", "r", "c")}, e, 0.8);
  EXPECT_NEAR(l[0].best_similarity, 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_EQ(l[0].label, 0);
}

TEST(Classify, Examples) {
  EXPECT_EQ(classify(vec({3, -4}), {vec({0, 0}), 0.0}), 0.5);
  EXPECT_NEAR(classify(vec({1, 0}), {vec({2, -1}), -1.0}), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(classify(vec({5, 5}), {vec({0, 0}), 20.0}), 1.0, 1e-8);
  EXPECT_THROW(classify(vec({1}), {vec({1, 2}), 0.0}), Error);
}

TEST(Classifier, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int i = 0; i < 10; ++i) EXPECT_LT(oracle::classifier_gradient_error(rng), 1e-6);
}

TEST(Classifier, SeparableSetIsFitExactly) {
  Rng rng(6);
  std::vector<LabeledTriplet> data;
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd e(3);
    const int y = i % 2;
    e << (y ? 1.0 : -1.0) + 0.5 * rng.uniform(), rng.normal(), rng.normal();
    data.push_back({{}, e, y, 0});
  }
  ClassifierConfig c;
  c.epochs = 200;
  c.steps_per_epoch = 5;
  c.batch = 8;
  c.lr = 0.5;
  const auto r = train_classifier(data, c);
  int correct = 0;
  for (const auto& d : data) correct += (classify(d.embedding, r.params) >= 0.5) == (d.label == 1);
  EXPECT_EQ(correct, 20);
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Classifier, RejectsSingleClass) {
  std::vector<LabeledTriplet> data{{{}, vec({1, 0}), 1, 0}, {{}, vec({0, 1}), 1, 0}};
  EXPECT_THROW(train_classifier(data, {}), Error);
}

TEST(Classifier, ParamsRoundTrip) {
  const ClassifierParams p{vec({0.1, -2.0 / 3}), 1e-7};
  const auto back = ClassifierParams::parse(p.serialize());
  EXPECT_EQ(back.W, p.W);
  EXPECT_EQ(back.b, p.b);
}

TEST(SelectTriplets, OrdersThresholdsAndCaps) {
  // one-dimensional embeddings make the classifier scores explicit
  KGEmbeddings e;
  e.entities = {"x", "p", "q", "r", "s"};
  e.relations = {"rel"};
  e.entity = Eigen::MatrixXd(5, 1);
  const double z1 = std::log(0.55 / 0.45), z2 = std::log(0.9 / 0.1), z3 = std::log(0.6 / 0.4), z4 = std::log(0.2 / 0.8);
  e.entity << 0, z1, z2, z3, z4;
  e.relation = Eigen::MatrixXd::Zero(1, 1);
  e.build_index();
  const TripletEmbedder embed(e);
  const ClassifierParams clf{vec({0, 0, 1}), 0.0};
  const std::vector<Triplet> ts{tr("x", "rel", "p"), tr("x", "rel", "q"), tr("x", "rel", "r"), tr("x", "rel", "s")};
  const auto two = select_triplets(ts, embed, clf, 0.5, 2);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].triplet.tail, "q");
  EXPECT_NEAR(two[0].score, 0.9, 1e-12);
  EXPECT_EQ(two[1].triplet.tail, "r");
  EXPECT_EQ(select_triplets(ts, embed, clf, 0.5, 10).size(), 3u);
  EXPECT_TRUE(select_triplets(ts, embed, clf, 0.5, 0).empty());
  EXPECT_TRUE(select_triplets(ts, embed, clf, 0.95, 10).empty());
  EXPECT_THROW(select_triplets(ts, embed, clf, 1.0, 10), Error);

  const auto all = select_all(ts, embed, 3);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].triplet.tail, "p");
  EXPECT_EQ(all[2].score, 1.0);
}

TEST(SelectTriplets, RaisingTauNeverGrowsSelection) {
  Rng rng(8);
  KGEmbeddings e;
  e.relations = {"rel"};
  e.relation = Eigen::MatrixXd::Zero(1, 2);
  e.entity = Eigen::MatrixXd(12, 2);
  std::vector<Triplet> ts;
  for (int i = 0; i < 12; ++i) {
    e.entities.push_back("e" + std::to_string(i));
    e.entity.row(i) << rng.normal(), rng.normal();
    if (i) ts.push_back(tr("e0", "rel", "e" + std::to_string(i)));
  }
  e.build_index();
  const TripletEmbedder embed(e);
  const ClassifierParams clf{vec({0, 0, 0, 0, 1.5, -0.7}), 0.2};
  std::size_t prev = ts.size() + 1;
  for (double tau = 0.05; tau < 1; tau += 0.05) {
    const auto s = select_triplets(ts, embed, clf, tau, 100);
    EXPECT_LE(s.size(), prev);
    prev = s.size();
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_GE(s[i - 1].score, s[i].score);
  }
}
