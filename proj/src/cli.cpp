#include "kern/cli.hpp"

#include <filesystem>
#include <set>

#include <json.hpp>

#include "kern/corpus.hpp"
#include "kern/gradient_suite.hpp"
#include "kern/io_util.hpp"
#include "kern/kg.hpp"
#include "kern/model_io.hpp"
#include "kern/run_config.hpp"
#include "kern/synth.hpp"

namespace kern::cli {

namespace {

using RunFn = int (*)(const RunConfig&, std::ostream&, std::ostream&);

void log_config(const RunConfig& cfg, const std::string& command,
                std::ostream& out) {
  out << "command: " << command << "\n" << cfg.resolved();
}

// ---------------------------------------------------------------------------

int cmd_synth_gen(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  synth::SynthSpec spec;
  spec.entities = static_cast<int>(cfg.integer_or("entities", spec.entities));
  spec.relations = static_cast<int>(cfg.integer_or("relations", spec.relations));
  spec.vocab_size = static_cast<int>(cfg.integer_or("vocab_size", spec.vocab_size));
  spec.sentences = static_cast<int>(cfg.integer_or("sentences", spec.sentences));
  spec.ambiguity = cfg.real_or("ambiguity", spec.ambiguity);
  spec.seed = cfg.seed_or(spec.seed);
  spec.facts = static_cast<int>(cfg.integer_or("facts", spec.facts));
  spec.types = static_cast<int>(cfg.integer_or("types", spec.types));
  spec.relation_train_per_fact = static_cast<int>(
      cfg.integer_or("relation_train_per_fact", spec.relation_train_per_fact));
  spec.relation_test_per_fact = static_cast<int>(
      cfg.integer_or("relation_test_per_fact", spec.relation_test_per_fact));
  spec.typing_train_per_entity = static_cast<int>(
      cfg.integer_or("typing_train_per_entity", spec.typing_train_per_entity));
  spec.typing_test_per_entity = static_cast<int>(
      cfg.integer_or("typing_test_per_entity", spec.typing_test_per_entity));
  spec.doc_size = static_cast<int>(cfg.integer_or("doc_size", spec.doc_size));

  const auto stats = synth::generate(spec, cfg.str("out"));
  out << "generated " << stats.sentences << " sentences, " << stats.triples
      << " triples, " << stats.relation_train_instances << "+"
      << stats.relation_test_instances << " relation instances\n"
      << "relation text-only ceiling: " << stats.relation_text_bayes_bound
      << "\n";
  return kExitOk;
}

int cmd_kg_train(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  kg::KGEmbedConfig kcfg;
  kcfg.dimension = static_cast<int>(cfg.integer_or("dim", kcfg.dimension));
  kcfg.margin = cfg.real_or("margin", kcfg.margin);
  kcfg.negatives_per_positive =
      static_cast<int>(cfg.integer_or("negatives", kcfg.negatives_per_positive));
  kcfg.norm_order = static_cast<int>(cfg.integer_or("norm", kcfg.norm_order));
  kcfg.learning_rate = cfg.real_or("lr", kcfg.learning_rate);
  kcfg.epochs = static_cast<int>(cfg.integer_or("epochs", kcfg.epochs));
  kcfg.seed = cfg.seed_or(kcfg.seed);

  const auto store = kg::TripleStore::load(cfg.str("triples"));
  kg::TrainStats stats;
  const auto emb = kg::train(store, kcfg, &stats);

  const std::string out_path = cfg.str("out");
  nlohmann::json snapshot;
  snapshot["command"] = "kg-train";
  snapshot["dim"] = kcfg.dimension;
  snapshot["margin"] = kcfg.margin;
  snapshot["negatives"] = kcfg.negatives_per_positive;
  snapshot["norm"] = kcfg.norm_order;
  snapshot["lr"] = kcfg.learning_rate;
  snapshot["epochs"] = kcfg.epochs;
  snapshot["seed"] = kcfg.seed;
  io::save_checkpoint(io::kg_to_checkpoint(emb, snapshot), out_path);
  corpus::save_entity_vocab(emb.entity_names,
                            cfg.str_or("entity_vocab_out", out_path + ".entities.txt"));
  corpus::save_entity_vocab(emb.relation_names,
                            cfg.str_or("relation_vocab_out", out_path + ".relations.txt"));

  const auto eval = kg::link_prediction_eval(store, store.triples(), emb,
                                             kcfg.norm_order);
  out << "entities=" << emb.entity_count() << " relations=" << emb.relation_count()
      << " triples=" << store.triples().size() << "\n";
  if (!stats.epoch_loss.empty())
    out << "final epoch loss: " << stats.epoch_loss.back() << "\n";
  out << "train link prediction: hits@1=" << eval.hits_at_1
      << " hits@10=" << eval.hits_at_10 << " mean_rank=" << eval.mean_rank
      << "\n";
  return kExitOk;
}

int cmd_annotate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto raw = corpus::load_raw_corpus(cfg.str("corpus"));
  const auto gazetteer = corpus::Gazetteer::load(cfg.str("gazetteer"));
  const auto entity_ids = corpus::load_entity_vocab(cfg.str("entity_vocab"));

  corpus::SubwordVocab vocab;
  if (cfg.has("subword_vocab")) {
    vocab = corpus::SubwordVocab::load(cfg.str("subword_vocab"));
  } else {
    std::vector<std::string> lines;
    for (const auto& doc : raw.documents)
      lines.insert(lines.end(), doc.begin(), doc.end());
    vocab = corpus::SubwordVocab::learn(
        lines, static_cast<int>(cfg.integer_or("vocab_size", 512)));
  }
  const std::string out_path = cfg.str("out");
  vocab.save(cfg.str_or("save_vocab", out_path + ".vocab.txt"));

  const int min_entities = static_cast<int>(cfg.integer_or("min_entities", 3));
  const auto result = corpus::annotate(raw, vocab, gazetteer, entity_ids,
                                       min_entities);
  corpus::save_annotated(result.sentences, out_path);
  out << "kept " << result.sentences.size() << " sentences, dropped "
      << result.dropped_sentences << " below " << min_entities << " entities, "
      << result.stats.matched << " mentions\n";
  if (result.stats.skipped_unknown_entity > 0)
    err << "warning: " << result.stats.skipped_unknown_entity
        << " mentions referenced entities outside the vocabulary\n";
  return kExitOk;
}

model::ModelConfig model_config_from(const RunConfig& cfg, int vocab_size,
                                     int entity_count) {
  const std::string preset = cfg.str_or("preset", "desk");
  model::ModelConfig mc;
  if (preset == "desk")
    mc = model::ModelConfig::desk(vocab_size, entity_count);
  else if (preset == "full")
    mc = model::ModelConfig::full_scale(vocab_size, entity_count);
  else
    throw ConfigError("unknown preset: " + preset);
  mc.t_layers = static_cast<int>(cfg.integer_or("t_layers", mc.t_layers));
  mc.k_layers = static_cast<int>(cfg.integer_or("k_layers", mc.k_layers));
  mc.hidden_w = static_cast<int>(cfg.integer_or("hidden_w", mc.hidden_w));
  mc.hidden_e = static_cast<int>(cfg.integer_or("hidden_e", mc.hidden_e));
  mc.heads_w = static_cast<int>(cfg.integer_or("heads_w", mc.heads_w));
  mc.heads_e = static_cast<int>(cfg.integer_or("heads_e", mc.heads_e));
  mc.max_len = static_cast<int>(cfg.integer_or("max_len", mc.max_len));
  mc.ff_mult = static_cast<int>(cfg.integer_or("ff_mult", mc.ff_mult));
  mc.dropout = cfg.real_or("dropout", mc.dropout);
  mc.seed = cfg.seed_or(mc.seed);
  mc.validate();
  return mc;
}

int cmd_pretrain(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto sentences = corpus::load_annotated(cfg.str("annotated"));
  const auto vocab = corpus::SubwordVocab::load(cfg.str("subword_vocab"));
  const auto kg_ckpt = io::load_checkpoint(cfg.str("kg"));
  int entity_count = 0, dimension = 0;
  auto table =
      io::entity_table_from_checkpoint<float>(kg_ckpt, &entity_count, &dimension);

  auto mc = model_config_from(cfg, vocab.size(), entity_count);
  if (mc.hidden_e != dimension)
    throw ConfigError("hidden_e " + std::to_string(mc.hidden_e) +
                      " must equal the KG embedding dimension " +
                      std::to_string(dimension) +
                      " (entity vectors feed the stream unprojected)");

  train::PretrainOptions opts;
  opts.steps = static_cast<std::uint64_t>(cfg.integer_or("steps", 500));
  opts.batch_size = static_cast<int>(cfg.integer_or("batch", 8));
  opts.learning_rate = cfg.real_or("lr", 1e-3);
  opts.warmup_frac = cfg.real_or("warmup", 0.1);
  opts.include_dea = !cfg.flag_or("no_dea", false);
  opts.loss_log_path = cfg.str_or("loss_log", "");

  auto m = train::PretrainModel<float>::init(mc);
  m.enc.set_entity_table(std::move(table));
  train::PretrainState<float> state(
      std::move(m),
      corpus::PretrainBatcher(sentences, mc.vocab_size, mc.entity_count,
                              mc.max_len, derive_seed(mc.seed, 0x64617461)),
      opts);
  const auto history = train::pretrain_run(state);
  if (!history.empty())
    out << "step " << history.back().step << ": total=" << history.back().total
        << " dea=" << history.back().dea << " mlm=" << history.back().mlm
        << " nsp=" << history.back().nsp << "\n";

  io::Checkpoint ckpt;
  io::add_model_tensors(ckpt, state.model);
  nlohmann::json snapshot;
  snapshot["command"] = "pretrain";
  snapshot["model"] = io::model_config_to_json(mc);
  snapshot["step"] = state.step;
  snapshot["include_dea"] = opts.include_dea;
  ckpt.config_json = snapshot.dump();
  io::save_checkpoint(ckpt, cfg.str("out"));
  out << "saved checkpoint after " << state.step << " steps\n";
  return kExitOk;
}

std::vector<tasks::TaskExample> load_and_rewrite(const std::string& path,
                                                 tasks::TaskKind kind) {
  std::vector<tasks::TaskExample> out;
  for (const auto& raw : tasks::load_task_file(path, kind))
    out.push_back(kind == tasks::TaskKind::kRelation
                      ? tasks::rewrite_relation(raw)
                      : tasks::rewrite_typing(raw));
  return out;
}

tasks::TaskKind task_kind_from(const RunConfig& cfg) {
  const std::string kind = cfg.str_or("task_kind", "relation");
  if (kind == "relation") return tasks::TaskKind::kRelation;
  if (kind == "typing") return tasks::TaskKind::kTyping;
  throw ConfigError("task_kind must be relation or typing, got " + kind);
}

void emit_report(const tasks::MetricReport& report, const RunConfig& cfg,
                 std::ostream& out) {
  if (cfg.flag_or("json", false)) {
    out << report.to_json() << "\n";
  } else {
    out << "strict=" << report.strict;
    if (report.has_loose)
      out << " loose_macro_f1=" << report.loose_macro_f1
          << " loose_micro_f1=" << report.loose_micro_f1;
    if (report.has_class_metrics)
      out << " macro_f1=" << report.macro_f1 << " micro_f1=" << report.micro_f1;
    out << "\n";
  }
  if (cfg.has("report"))
    io::atomic_write(cfg.str("report"), [&](std::ostream& f) {
      f << report.to_json() << "\n";
    });
}

int cmd_finetune(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto kind = task_kind_from(cfg);
  const auto train_set = load_and_rewrite(cfg.str("task"), kind);
  const auto eval_set = load_and_rewrite(cfg.str("eval"), kind);

  const auto ckpt = io::load_checkpoint(cfg.str("checkpoint"));
  nlohmann::json snapshot;
  try {
    snapshot = nlohmann::json::parse(ckpt.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config snapshot: ") + e.what());
  }
  auto mc = io::model_config_from_json(snapshot.at("model"));
  auto encoder = model::ModelParams<float>::init(mc);
  io::load_model_tensors(ckpt, encoder);

  tasks::FinetuneOptions opts;
  opts.epochs = static_cast<int>(cfg.integer_or("epochs", 3));
  opts.batch_size = static_cast<int>(cfg.integer_or("batch", 8));
  opts.learning_rate = cfg.real_or("lr", 1e-3);
  opts.warmup_frac = cfg.real_or("warmup", 0.1);
  opts.seed = cfg.seed_or(1);
  opts.strip_entities = cfg.flag_or("no_entities", false);
  if (cfg.has("null_label")) opts.null_label = cfg.str("null_label");

  auto result = tasks::finetune(std::move(encoder), kind, train_set, eval_set,
                                opts);
  for (const auto& w : result.report.warnings) err << "warning: " << w << "\n";
  emit_report(result.report, cfg, out);

  if (cfg.has("out")) {
    io::Checkpoint task_ckpt;
    io::add_model_tensors(task_ckpt, result.model);
    nlohmann::json task_snapshot;
    task_snapshot["command"] = "finetune";
    task_snapshot["model"] = io::model_config_to_json(mc);
    task_snapshot["task_kind"] =
        kind == tasks::TaskKind::kRelation ? "relation" : "typing";
    task_snapshot["labels"] = result.model.labels;
    task_snapshot["strip_entities"] = opts.strip_entities;
    task_ckpt.config_json = task_snapshot.dump();
    io::save_checkpoint(task_ckpt, cfg.str("out"));
  }
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto ckpt = io::load_checkpoint(cfg.str("checkpoint"));
  nlohmann::json snapshot;
  try {
    snapshot = nlohmann::json::parse(ckpt.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config snapshot: ") + e.what());
  }
  if (snapshot.value("command", "") != "finetune")
    throw FormatError("evaluate needs a fine-tuned checkpoint");
  auto mc = io::model_config_from_json(snapshot.at("model"));
  const auto kind = snapshot.at("task_kind").get<std::string>() == "relation"
                        ? tasks::TaskKind::kRelation
                        : tasks::TaskKind::kTyping;

  tasks::TaskModel<float> m;
  m.enc = model::ModelParams<float>::init(mc);
  m.kind = kind;
  m.labels = snapshot.at("labels").get<std::vector<std::string>>();
  {
    Rng rng(1);
    m.head = model::Linear<float>::init(mc.hidden_w,
                                        static_cast<int>(m.labels.size()), rng);
  }
  io::load_model_tensors(ckpt, m);

  const bool strip =
      cfg.flag_or("no_entities", snapshot.value("strip_entities", false));
  const auto eval_set = load_and_rewrite(cfg.str("task"), kind);
  std::optional<std::string> null_label;
  if (cfg.has("null_label")) null_label = cfg.str("null_label");
  auto report = tasks::evaluate(m, eval_set, strip, null_label);
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  emit_report(report, cfg, out);
  return kExitOk;
}

int cmd_grad_check(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const bool quick = cfg.flag_or("quick", false);
  const auto results = verify::run_gradient_suite(quick, &out);
  if (!verify::all_pass(results))
    throw VerifyError("gradient suite failed");
  out << "all " << results.size() << " gradient checks passed\n";
  return kExitOk;
}

struct Command {
  const char* name;
  RunFn fn;
  std::set<std::string> keys;
};

const Command kCommands[] = {
    {"synth-gen", cmd_synth_gen,
     {"config", "out", "entities", "relations", "vocab_size", "sentences",
      "ambiguity", "seed", "facts", "types", "relation_train_per_fact",
      "relation_test_per_fact", "typing_train_per_entity",
      "typing_test_per_entity", "doc_size"}},
    {"kg-train", cmd_kg_train,
     {"config", "triples", "out", "dim", "margin", "negatives", "norm", "lr",
      "epochs", "seed", "entity_vocab_out", "relation_vocab_out"}},
    {"annotate", cmd_annotate,
     {"config", "corpus", "gazetteer", "entity_vocab", "out", "subword_vocab",
      "vocab_size", "save_vocab", "min_entities"}},
    {"pretrain", cmd_pretrain,
     {"config", "annotated", "subword_vocab", "kg", "out", "steps", "batch",
      "lr", "warmup", "no_dea", "loss_log", "seed", "preset", "t_layers",
      "k_layers", "hidden_w", "hidden_e", "heads_w", "heads_e", "max_len",
      "ff_mult", "dropout"}},
    {"finetune", cmd_finetune,
     {"config", "task", "eval", "checkpoint", "out", "task_kind", "epochs",
      "batch", "lr", "warmup", "seed", "no_entities", "null_label", "report",
      "json"}},
    {"evaluate", cmd_evaluate,
     {"config", "task", "checkpoint", "no_entities", "null_label", "report",
      "json"}},
    {"grad-check", cmd_grad_check, {"config", "quick"}},
};

void emit_error(std::ostream& err, const std::string& code,
                const std::string& message) {
  nlohmann::json j;
  j["error"]["code"] = code;
  j["error"]["message"] = message;
  err << j.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  if (args.empty()) {
    err << "usage: kern <command> [--key value ...]\ncommands:";
    for (const auto& c : kCommands) err << " " << c.name;
    err << "\n";
    return kExitConfig;
  }
  const Command* command = nullptr;
  for (const auto& c : kCommands)
    if (args[0] == c.name) command = &c;
  if (command == nullptr) {
    emit_error(err, "config", "unknown command: " + args[0]);
    return kExitConfig;
  }
  try {
    const auto cfg = RunConfig::parse(
        std::vector<std::string>(args.begin() + 1, args.end()), command->keys);
    log_config(cfg, command->name, out);
    return command->fn(cfg, out, err);
  } catch (const ConfigError& e) {
    emit_error(err, "config", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    emit_error(err, "io", e.what());
    return kExitIo;
  } catch (const VersionError& e) {
    emit_error(err, "version", e.what());
    return kExitVersion;
  } catch (const FormatError& e) {
    emit_error(err, "format", e.what());
    return kExitFormat;
  } catch (const VerifyError& e) {
    emit_error(err, "verify", e.what());
    return kExitVerify;
  } catch (const DataError& e) {
    emit_error(err, "data", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    emit_error(err, "error", e.what());
    return kExitError;
  }
}

}  // namespace kern::cli
