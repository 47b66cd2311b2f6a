#pragma once

// TransE training over a triple file plus the filtered link-prediction
// evaluation used for acceptance. Embeddings are trained with plain SGD on
// the margin ranking loss and the entity rows are renormalized to unit L2
// after every epoch.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kern/common.hpp"
#include "kern/rng.hpp"

namespace kern::kg {

struct Triple {
  int head = 0;
  int relation = 0;
  int tail = 0;

  friend bool operator<(const Triple& a, const Triple& b) {
    if (a.head != b.head) return a.head < b.head;
    if (a.relation != b.relation) return a.relation < b.relation;
    return a.tail < b.tail;
  }
  friend bool operator==(const Triple& a, const Triple& b) {
    return a.head == b.head && a.relation == b.relation && a.tail == b.tail;
  }
};

class TripleStore {
 public:
  // Inserts vocabulary entries on first sight; duplicate triples are
  // dropped.
  void add(const std::string& head, const std::string& relation,
           const std::string& tail);

  int entity_id(const std::string& name) const;
  int relation_id(const std::string& name) const;

  int entity_count() const { return static_cast<int>(entity_names_.size()); }
  int relation_count() const { return static_cast<int>(relation_names_.size()); }
  const std::vector<Triple>& triples() const { return triples_; }
  const std::vector<std::string>& entity_names() const { return entity_names_; }
  const std::vector<std::string>& relation_names() const {
    return relation_names_;
  }
  bool contains(const Triple& t) const { return seen_.count(t) > 0; }

  static TripleStore load(const std::string& path);

 private:
  int intern(std::map<std::string, int>& table, std::vector<std::string>& names,
             const std::string& name);

  std::map<std::string, int> entity_ids_;
  std::map<std::string, int> relation_ids_;
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::vector<Triple> triples_;
  std::set<Triple> seen_;
};

struct KGEmbedConfig {
  int dimension = 16;
  double margin = 1.0;
  int negatives_per_positive = 1;
  int norm_order = 2;  // 1 or 2
  double learning_rate = 0.05;
  int epochs = 500;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EmbeddingStore {
  int dimension = 0;
  std::vector<double> entities;   // [entity_count, dimension]
  std::vector<double> relations;  // [relation_count, dimension]
  std::vector<std::string> entity_names;
  std::vector<std::string> relation_names;

  int entity_count() const {
    return dimension == 0 ? 0 : static_cast<int>(entities.size()) / dimension;
  }
  int relation_count() const {
    return dimension == 0 ? 0 : static_cast<int>(relations.size()) / dimension;
  }
  const double* entity(int id) const {
    return entities.data() + static_cast<std::size_t>(id) * dimension;
  }
  const double* relation(int id) const {
    return relations.data() + static_cast<std::size_t>(id) * dimension;
  }
};

double transe_distance(const double* head, const double* relation,
                       const double* tail, int dimension, int norm_order);
double transe_distance(const std::vector<double>& head,
                       const std::vector<double>& relation,
                       const std::vector<double>& tail, int norm_order);

double margin_loss(double positive_distance, double negative_distance,
                   double margin);

struct TrainStats {
  // Mean margin loss per epoch, one entry per epoch.
  std::vector<double> epoch_loss;
};

EmbeddingStore train(const TripleStore& store, const KGEmbedConfig& config,
                     TrainStats* stats = nullptr);

struct LinkPredictionReport {
  double hits_at_1 = 0.0;
  double hits_at_10 = 0.0;
  double mean_rank = 0.0;
};

// Ranks the true tail of every eval triple against all entities by
// distance. Filtered protocol: candidate tails that form another known-true
// triple are skipped. Rank = 1 + number of strictly closer candidates.
LinkPredictionReport link_prediction_eval(const TripleStore& known,
                                          const std::vector<Triple>& eval,
                                          const EmbeddingStore& emb,
                                          int norm_order = 2);

}  // namespace kern::kg
