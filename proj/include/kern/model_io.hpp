#pragma once

// Bridges between in-memory models and the checkpoint container, plus the
// ModelConfig JSON snapshot.

#include <string>

#include <json.hpp>

#include "kern/checkpoint.hpp"
#include "kern/kg.hpp"
#include "kern/objectives.hpp"
#include "kern/tasks.hpp"

namespace kern::io {

inline nlohmann::json model_config_to_json(const model::ModelConfig& cfg) {
  nlohmann::json j;
  j["t_layers"] = cfg.t_layers;
  j["k_layers"] = cfg.k_layers;
  j["hidden_w"] = cfg.hidden_w;
  j["hidden_e"] = cfg.hidden_e;
  j["heads_w"] = cfg.heads_w;
  j["heads_e"] = cfg.heads_e;
  j["vocab_size"] = cfg.vocab_size;
  j["entity_count"] = cfg.entity_count;
  j["max_len"] = cfg.max_len;
  j["ff_mult"] = cfg.ff_mult;
  j["dropout"] = cfg.dropout;
  j["seed"] = cfg.seed;
  return j;
}

inline model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  model::ModelConfig cfg;
  try {
    cfg.t_layers = j.at("t_layers").get<int>();
    cfg.k_layers = j.at("k_layers").get<int>();
    cfg.hidden_w = j.at("hidden_w").get<int>();
    cfg.hidden_e = j.at("hidden_e").get<int>();
    cfg.heads_w = j.at("heads_w").get<int>();
    cfg.heads_e = j.at("heads_e").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.entity_count = j.at("entity_count").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.ff_mult = j.at("ff_mult").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config snapshot: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

template <typename ModelT>
void add_model_tensors(Checkpoint& ckpt, ModelT& m) {
  m.visit([&ckpt](const std::string& name, auto& tensor, bool) {
    ckpt.add(name, to_raw(tensor));
  });
}

// Loads every tensor the model declares; extra checkpoint tensors (e.g.
// pretraining heads when fine-tuning) are ignored.
template <typename ModelT>
void load_model_tensors(const Checkpoint& ckpt, ModelT& m) {
  m.visit([&ckpt](const std::string& name, auto& tensor, bool) {
    const RawTensor* raw = ckpt.find(name);
    if (raw == nullptr)
      throw FormatError("checkpoint is missing tensor " + name);
    from_raw(name, *raw, tensor);
  });
}

inline Checkpoint kg_to_checkpoint(const kg::EmbeddingStore& emb,
                                   const nlohmann::json& snapshot) {
  Checkpoint ckpt;
  const auto pack = [&](const std::vector<double>& values, int rows) {
    RawTensor raw;
    raw.dtype = Dtype::kF32;
    raw.dims = {static_cast<std::uint64_t>(rows),
                static_cast<std::uint64_t>(emb.dimension)};
    raw.data.resize(values.size() * sizeof(float));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float f = static_cast<float>(values[i]);
      std::memcpy(raw.data.data() + i * sizeof(float), &f, sizeof(float));
    }
    return raw;
  };
  ckpt.add("kg.entity", pack(emb.entities, emb.entity_count()));
  ckpt.add("kg.relation", pack(emb.relations, emb.relation_count()));
  ckpt.config_json = snapshot.dump();
  return ckpt;
}

// Reads the frozen entity table from a kg-train export, widened to S.
template <typename S>
std::vector<S> entity_table_from_checkpoint(const Checkpoint& ckpt,
                                            int* entity_count, int* dimension) {
  const RawTensor* raw = ckpt.find("kg.entity");
  if (raw == nullptr)
    throw FormatError("kg checkpoint is missing tensor kg.entity");
  if (raw->dtype != Dtype::kF32 || raw->dims.size() != 2)
    throw FormatError("kg.entity must be a rank-2 f32 tensor");
  *entity_count = static_cast<int>(raw->dims[0]);
  *dimension = static_cast<int>(raw->dims[1]);
  std::vector<S> out(raw->numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, raw->data.data() + i * sizeof(float), sizeof(float));
    out[i] = static_cast<S>(f);
  }
  return out;
}

}  // namespace kern::io
