#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <vector>

#include "kern/kg.hpp"
#include "kern/rng.hpp"

using namespace kern::kg;

namespace {

TripleStore tiny_random_store(int entities, int relations, int triples,
                              std::uint64_t seed) {
  kern::Rng rng(seed);
  TripleStore store;
  while (static_cast<int>(store.triples().size()) < triples) {
    const int h = rng.below_int(entities);
    int t = rng.below_int(entities);
    if (t == h) continue;
    const int r = rng.below_int(relations);
    store.add("Q" + std::to_string(h), "P" + std::to_string(r),
              "Q" + std::to_string(t));
  }
  return store;
}

}  // namespace

TEST_CASE("transe distance identities") {
  std::vector<double> h = {0.5, -1.0, 2.0};
  std::vector<double> r = {1.0, 1.0, -3.0};
  std::vector<double> t = {1.5, 0.0, -1.0};
  CHECK(transe_distance(h, r, t, 2) == 0.0);
  CHECK(transe_distance(h, r, t, 1) == 0.0);

  std::vector<double> zero = {0, 0, 0};
  std::vector<double> basis = {0, 1, 0};
  CHECK(transe_distance(zero, zero, basis, 2) == 1.0);

  kern::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(4), b(4), c(4);
    for (int i = 0; i < 4; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      c[i] = rng.normal();
    }
    double l1 = 0, l2 = 0;
    for (int i = 0; i < 4; ++i) {
      const double v = a[i] + b[i] - c[i];
      l1 += std::abs(v);
      l2 += v * v;
    }
    CHECK(transe_distance(a, b, c, 1) == doctest::Approx(l1).epsilon(1e-14));
    CHECK(transe_distance(a, b, c, 2) ==
          doctest::Approx(std::sqrt(l2)).epsilon(1e-14));
  }

  CHECK_THROWS_AS(transe_distance({1, 2}, {1}, {1, 2}, 2), kern::ShapeError);
}

TEST_CASE("translation invariance of the distance") {
  // Exactness requires the shifted inputs themselves to be exact, so draw
  // integer-valued vectors: h+c and t+c then round-trip without error and
  // (h+c)+r-(t+c) is bitwise h+r-t.
  kern::Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> h(5), r(5), t(5), c(5);
    for (int i = 0; i < 5; ++i) {
      h[i] = static_cast<double>(rng.below_int(200)) - 100.0;
      r[i] = static_cast<double>(rng.below_int(200)) - 100.0;
      t[i] = static_cast<double>(rng.below_int(200)) - 100.0;
      c[i] = static_cast<double>(rng.below_int(200)) - 100.0;
    }
    std::vector<double> hc(5), tc(5);
    for (int i = 0; i < 5; ++i) {
      hc[i] = h[i] + c[i];
      tc[i] = t[i] + c[i];
    }
    // (h+c) + r - (t+c) == h + r - t coordinate-wise, so both norms agree
    // exactly.
    CHECK(transe_distance(hc, r, tc, 2) == transe_distance(h, r, t, 2));
    CHECK(transe_distance(hc, r, tc, 1) == transe_distance(h, r, t, 1));
  }
}

TEST_CASE("margin loss") {
  CHECK(margin_loss(0.0, 1.0, 1.0) == 0.0);
  CHECK(margin_loss(0.7, 0.7, 1.0) == doctest::Approx(1.0));

  kern::Rng rng(7);
  double batch_impl = 0, batch_oracle = 0;
  for (int i = 0; i < 100; ++i) {
    const double dp = rng.uniform(0, 3);
    const double dn = rng.uniform(0, 3);
    batch_impl += margin_loss(dp, dn, 1.0);
    const double raw = 1.0 + dp - dn;
    batch_oracle += raw > 0 ? raw : 0.0;
  }
  CHECK(batch_impl / 100 == doctest::Approx(batch_oracle / 100).epsilon(1e-14));

  // Monotonicity: nondecreasing in pos, nonincreasing in neg.
  for (int i = 0; i < 50; ++i) {
    const double dp = rng.uniform(0, 3);
    const double dn = rng.uniform(0, 3);
    const double eps = rng.uniform(0, 0.5);
    CHECK(margin_loss(dp + eps, dn, 1.0) >= margin_loss(dp, dn, 1.0));
    CHECK(margin_loss(dp, dn + eps, 1.0) <= margin_loss(dp, dn, 1.0));
  }
}

TEST_CASE("triple store dedupes and validates") {
  TripleStore store;
  store.add("Q1", "P1", "Q2");
  store.add("Q1", "P1", "Q2");
  store.add("Q2", "P1", "Q1");
  CHECK(store.triples().size() == 2);
  CHECK(store.entity_count() == 2);
  CHECK(store.relation_count() == 1);
  CHECK(store.contains(Triple{0, 0, 1}));
  CHECK_THROWS_AS(store.entity_id("Q9"), kern::IndexError);
}

TEST_CASE("train: single triple converges, zero epochs is the init") {
  TripleStore store;
  store.add("Qa", "P0", "Qb");

  KGEmbedConfig cfg;
  cfg.dimension = 8;
  cfg.epochs = 100;
  cfg.learning_rate = 0.1;
  cfg.seed = 3;
  auto emb = train(store, cfg);
  const double d = transe_distance(emb.entity(0), emb.relation(0),
                                   emb.entity(1), 8, 2);
  CHECK(d < 0.1);

  KGEmbedConfig zero = cfg;
  zero.epochs = 0;
  auto init1 = train(store, zero);
  auto init2 = train(store, zero);
  CHECK(init1.entities == init2.entities);
  CHECK(init1.relations == init2.relations);
  // Training actually moved something relative to the initialization.
  CHECK(emb.relations != init1.relations);
}

TEST_CASE("train: empty store is a configuration error") {
  TripleStore store;
  KGEmbedConfig cfg;
  CHECK_THROWS_AS(train(store, cfg), kern::ConfigError);
}

TEST_CASE("train: same seed twice is bit-identical") {
  auto store = tiny_random_store(20, 3, 60, 11);
  KGEmbedConfig cfg;
  cfg.dimension = 12;
  cfg.epochs = 50;
  cfg.seed = 77;
  auto a = train(store, cfg);
  auto b = train(store, cfg);
  CHECK(a.entities == b.entities);
  CHECK(a.relations == b.relations);
}

TEST_CASE("entity rows are unit-normalized after training") {
  auto store = tiny_random_store(15, 2, 40, 19);
  KGEmbedConfig cfg;
  cfg.dimension = 6;
  cfg.epochs = 20;
  auto emb = train(store, cfg);
  for (int e = 0; e < emb.entity_count(); ++e) {
    double norm = 0;
    for (int i = 0; i < 6; ++i) norm += emb.entity(e)[i] * emb.entity(e)[i];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("link prediction: hand-built case with filtering") {
  // Entities on a plane: e0=(0,0), e1=(1,0), e2=(0,1); relation r=(1,0).
  // Known triples: (e0,r,e2) to evaluate and (e0,r,e1) as a filter entry.
  // From h+r=(1,0): d(e0)=1, d(e1)=0, d(e2)=sqrt(2).
  TripleStore known;
  known.add("e0", "r", "e2");
  known.add("e0", "r", "e1");
  EmbeddingStore emb;
  emb.dimension = 2;
  emb.entities = {0, 0, 1, 0, 0, 1};
  emb.relations = {1, 0};
  emb.entity_names = {"e0", "e1", "e2"};
  emb.relation_names = {"r"};

  // For eval triple (e0,r,e2): candidate e1 filtered out (known-true), e0 is
  // strictly closer -> rank 2.
  auto filtered = link_prediction_eval(known, {Triple{0, 0, 2}}, emb, 2);
  CHECK(filtered.mean_rank == doctest::Approx(2.0));
  CHECK(filtered.hits_at_1 == doctest::Approx(0.0));
  CHECK(filtered.hits_at_10 == doctest::Approx(1.0));

  // For eval triple (e0,r,e1): true tail is the unique nearest -> rank 1.
  auto best = link_prediction_eval(known, {Triple{0, 0, 1}}, emb, 2);
  CHECK(best.hits_at_1 == doctest::Approx(1.0));
  CHECK(best.mean_rank == doctest::Approx(1.0));
}

TEST_CASE("link prediction: random embeddings give mean rank near n/2") {
  auto store = tiny_random_store(50, 5, 100, 23);
  KGEmbedConfig cfg;
  cfg.dimension = 16;
  cfg.epochs = 0;  // untrained random embeddings
  cfg.seed = 5;
  auto emb = train(store, cfg);
  auto report = link_prediction_eval(store, store.triples(), emb, 2);
  CHECK(report.mean_rank > 15.0);
  CHECK(report.mean_rank < 35.0);
}

TEST_CASE("triple file round trip") {
  const std::string path = "/tmp/kern_test_triples.tsv";
  {
    std::ofstream out(path);
    out << "Q1\tP1\tQ2\nQ2\tP2\tQ3\n\nQ1\tP1\tQ2\n";
  }
  auto store = TripleStore::load(path);
  CHECK(store.triples().size() == 2);
  CHECK(store.entity_names() == std::vector<std::string>{"Q1", "Q2", "Q3"});

  {
    std::ofstream out(path);
    out << "Q1 P1 Q2\n";
  }
  CHECK_THROWS_AS(TripleStore::load(path), kern::FormatError);
}
