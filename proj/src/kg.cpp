#include "kern/kg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace kern::kg {

void TripleStore::add(const std::string& head, const std::string& relation,
                      const std::string& tail) {
  Triple t;
  t.head = intern(entity_ids_, entity_names_, head);
  t.relation = intern(relation_ids_, relation_names_, relation);
  t.tail = intern(entity_ids_, entity_names_, tail);
  if (seen_.insert(t).second) triples_.push_back(t);
}

int TripleStore::entity_id(const std::string& name) const {
  auto it = entity_ids_.find(name);
  if (it == entity_ids_.end())
    throw IndexError("unknown entity id: " + name);
  return it->second;
}

int TripleStore::relation_id(const std::string& name) const {
  auto it = relation_ids_.find(name);
  if (it == relation_ids_.end())
    throw IndexError("unknown relation id: " + name);
  return it->second;
}

int TripleStore::intern(std::map<std::string, int>& table,
                        std::vector<std::string>& names,
                        const std::string& name) {
  auto [it, inserted] = table.emplace(name, static_cast<int>(names.size()));
  if (inserted) names.push_back(name);
  return it->second;
}

TripleStore TripleStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open triple file: " + path);
  TripleStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos
                                                : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos)
      throw FormatError("triple file " + path + " line " +
                        std::to_string(lineno) +
                        ": expected head<TAB>relation<TAB>tail");
    store.add(line.substr(0, tab1), line.substr(tab1 + 1, tab2 - tab1 - 1),
              line.substr(tab2 + 1));
  }
  return store;
}

void KGEmbedConfig::validate() const {
  if (dimension <= 0) throw ConfigError("kg dimension must be positive");
  if (margin <= 0.0) throw ConfigError("kg margin must be positive");
  if (negatives_per_positive <= 0)
    throw ConfigError("kg negatives per positive must be positive");
  if (norm_order != 1 && norm_order != 2)
    throw ConfigError("kg norm order must be 1 or 2");
  if (learning_rate <= 0.0) throw ConfigError("kg learning rate must be positive");
  if (epochs < 0) throw ConfigError("kg epochs must be nonnegative");
}

double transe_distance(const double* head, const double* relation,
                       const double* tail, int dimension, int norm_order) {
  double acc = 0.0;
  if (norm_order == 1) {
    for (int i = 0; i < dimension; ++i)
      acc += std::abs(head[i] + relation[i] - tail[i]);
    return acc;
  }
  for (int i = 0; i < dimension; ++i) {
    const double d = head[i] + relation[i] - tail[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double transe_distance(const std::vector<double>& head,
                       const std::vector<double>& relation,
                       const std::vector<double>& tail, int norm_order) {
  if (head.size() != relation.size() || head.size() != tail.size())
    throw ShapeError("transe_distance dimension mismatch: " +
                     std::to_string(head.size()) + "/" +
                     std::to_string(relation.size()) + "/" +
                     std::to_string(tail.size()));
  return transe_distance(head.data(), relation.data(), tail.data(),
                         static_cast<int>(head.size()), norm_order);
}

double margin_loss(double positive_distance, double negative_distance,
                   double margin) {
  return std::max(0.0, margin + positive_distance - negative_distance);
}

namespace {

void normalize_rows(std::vector<double>& matrix, int dimension) {
  const std::size_t rows = matrix.size() / static_cast<std::size_t>(dimension);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = matrix.data() + r * dimension;
    double norm = 0.0;
    for (int i = 0; i < dimension; ++i) norm += row[i] * row[i];
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (int i = 0; i < dimension; ++i) row[i] /= norm;
  }
}

// d/dv ||v||_p applied to v = h + r - t; writes the per-coordinate gradient.
void distance_grad(const double* h, const double* r, const double* t, int dim,
                   int norm_order, double distance, std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) {
    const double v = h[i] + r[i] - t[i];
    if (norm_order == 1)
      out[static_cast<std::size_t>(i)] = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
    else
      out[static_cast<std::size_t>(i)] = distance > 0 ? v / distance : 0.0;
  }
}

}  // namespace

EmbeddingStore train(const TripleStore& store, const KGEmbedConfig& config,
                     TrainStats* stats) {
  config.validate();
  if (store.triples().empty())
    throw ConfigError("TransE training requires a non-empty triple store");

  const int dim = config.dimension;
  const int num_entities = store.entity_count();
  EmbeddingStore emb;
  emb.dimension = dim;
  emb.entity_names = store.entity_names();
  emb.relation_names = store.relation_names();
  emb.entities.resize(static_cast<std::size_t>(num_entities) * dim);
  emb.relations.resize(static_cast<std::size_t>(store.relation_count()) * dim);

  Rng rng(derive_seed(config.seed, 0x6b67));  // "kg"
  const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
  for (auto& v : emb.entities) v = rng.uniform(-bound, bound);
  for (auto& v : emb.relations) v = rng.uniform(-bound, bound);
  normalize_rows(emb.relations, dim);
  normalize_rows(emb.entities, dim);

  std::vector<int> order(store.triples().size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  std::vector<double> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t updates = 0;
    for (const int idx : order) {
      const Triple pos = store.triples()[static_cast<std::size_t>(idx)];
      for (int neg_i = 0; neg_i < config.negatives_per_positive; ++neg_i) {
        // Corrupt head or tail with equal probability; resample while the
        // corruption is a known-true triple (false negative on tiny KGs).
        Triple neg = pos;
        const bool corrupt_head = rng.bernoulli(0.5);
        for (int attempt = 0; attempt < 100; ++attempt) {
          const int candidate = rng.below_int(num_entities);
          if (corrupt_head)
            neg.head = candidate;
          else
            neg.tail = candidate;
          if (!(neg == pos) && !store.contains(neg)) break;
          neg = pos;
        }
        if (neg == pos) continue;  // no usable corruption found

        double* ph = emb.entities.data() + static_cast<std::size_t>(pos.head) * dim;
        double* pt = emb.entities.data() + static_cast<std::size_t>(pos.tail) * dim;
        double* pr = emb.relations.data() +
                     static_cast<std::size_t>(pos.relation) * dim;
        double* nh = emb.entities.data() + static_cast<std::size_t>(neg.head) * dim;
        double* nt = emb.entities.data() + static_cast<std::size_t>(neg.tail) * dim;

        const double pos_d = transe_distance(ph, pr, pt, dim, config.norm_order);
        const double neg_d = transe_distance(nh, pr, nt, dim, config.norm_order);
        const double loss = margin_loss(pos_d, neg_d, config.margin);
        epoch_loss += loss;
        ++updates;
        if (loss <= 0.0) continue;

        const double lr = config.learning_rate;
        distance_grad(ph, pr, pt, dim, config.norm_order, pos_d, grad);
        for (int i = 0; i < dim; ++i) {
          ph[i] -= lr * grad[static_cast<std::size_t>(i)];
          pr[i] -= lr * grad[static_cast<std::size_t>(i)];
          pt[i] += lr * grad[static_cast<std::size_t>(i)];
        }
        distance_grad(nh, pr, nt, dim, config.norm_order, neg_d, grad);
        for (int i = 0; i < dim; ++i) {
          nh[i] += lr * grad[static_cast<std::size_t>(i)];
          pr[i] += lr * grad[static_cast<std::size_t>(i)];
          nt[i] -= lr * grad[static_cast<std::size_t>(i)];
        }
      }
    }
    normalize_rows(emb.entities, dim);
    if (stats)
      stats->epoch_loss.push_back(updates ? epoch_loss / static_cast<double>(updates)
                                          : 0.0);
  }
  return emb;
}

LinkPredictionReport link_prediction_eval(const TripleStore& known,
                                          const std::vector<Triple>& eval,
                                          const EmbeddingStore& emb,
                                          int norm_order) {
  LinkPredictionReport report;
  if (eval.empty()) return report;
  const int dim = emb.dimension;
  std::size_t hits1 = 0, hits10 = 0;
  double rank_sum = 0.0;
  for (const Triple& t : eval) {
    const double* h = emb.entity(t.head);
    const double* r = emb.relation(t.relation);
    const double true_d = transe_distance(h, r, emb.entity(t.tail), dim, norm_order);
    std::size_t closer = 0;
    for (int cand = 0; cand < emb.entity_count(); ++cand) {
      if (cand == t.tail) continue;
      Triple alt = t;
      alt.tail = cand;
      if (known.contains(alt)) continue;  // filtered ranking
      const double d = transe_distance(h, r, emb.entity(cand), dim, norm_order);
      if (d < true_d) ++closer;
    }
    const std::size_t rank = closer + 1;
    rank_sum += static_cast<double>(rank);
    if (rank <= 1) ++hits1;
    if (rank <= 10) ++hits10;
  }
  const double n = static_cast<double>(eval.size());
  report.hits_at_1 = static_cast<double>(hits1) / n;
  report.hits_at_10 = static_cast<double>(hits10) / n;
  report.mean_rank = rank_sum / n;
  return report;
}

}  // namespace kern::kg
