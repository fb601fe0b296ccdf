// Command-line front end. Every subcommand prints one JSON object on success;
// failures print {"error": ...} on stderr and exit nonzero.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <map>

#include "fetilda/chunker.hpp"
#include "fetilda/corpus.hpp"
#include "fetilda/harness.hpp"
#include "fetilda/numcore/checkpoint.hpp"

using namespace fetilda;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, bool required) {
  auto* opt = cmd->add_option("-c,--config", args.path, "key=value experiment config")->check(CLI::ExistingFile);
  if (required) opt->required();
  cmd->add_option("-s,--set", args.overrides, "override one config key (key=value)");
}

ExperimentConfig build_config(const ConfigArgs& args) {
  ExperimentConfig c = args.path.empty() ? ExperimentConfig{} : ExperimentConfig::load(args.path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

json row_json(const ExperimentOutputs& out) {
  return {{"model", out.row.model},
          {"metric", to_string(out.row.metric)},
          {"test_mse", out.row.test_mse},
          {"val_mse", out.row.val_mse},
          {"test_mse_raw", out.row.test_mse_raw},
          {"runtime_s", out.row.runtime_s},
          {"seed", out.row.seed},
          {"examples", out.examples},
          {"excluded", out.excluded},
          {"selected", out.selected_method},
          {"run_dir", out.run_dir.string()}};
}

std::vector<std::vector<Chunk>> chunk_corpus(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  const Corpus corpus = load_corpus(cfg.docs, cfg.targets);
  std::vector<std::vector<Chunk>> docs;
  for (const auto& d : corpus.documents) {
    if (cfg.section && d.section != *cfg.section) continue;
    docs.push_back(make_chunks(tokenize(d.text, vocab, d.doc_id), cfg.chunk_length, cfg.max_doc_tokens, vocab));
  }
  return docs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-document regression over chunked filings"};
  app.require_subcommand(1);
  std::string command;

  ConfigArgs ingest_cfg, chunk_cfg, embed_cfg, train_cfg, baseline_cfg;

  auto* ingest = app.add_subcommand("ingest", "validate a corpus, or derive KPI targets from fundamentals");
  add_config_options(ingest, ingest_cfg, false);
  std::string fundamentals, kpi_out;
  std::size_t z_window = 0;
  ingest->add_option("--fundamentals", fundamentals, "wide CSV of line items")->check(CLI::ExistingFile);
  ingest->add_option("--kpi-out", kpi_out, "targets CSV to write from --fundamentals");
  ingest->add_option("--z-window", z_window, "years in the Z-score deviation (0 = all)");

  auto* chunk = app.add_subcommand("chunk", "tokenize and chunk every document");
  add_config_options(chunk, chunk_cfg, true);
  std::string chunk_out;
  chunk->add_option("-o,--out", chunk_out, "chunk dump CSV")->required();

  auto* embed = app.add_subcommand("embed", "write chunk embeddings from the encoder");
  add_config_options(embed, embed_cfg, true);
  std::string embed_out, embed_ckpt;
  embed->add_option("-o,--out", embed_out, "embedding file")->required();
  embed->add_option("--checkpoint", embed_ckpt, "pipeline checkpoint to take encoder weights from")
      ->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "train the chunked-encoder model");
  add_config_options(train, train_cfg, true);

  auto* baseline = app.add_subcommand("baseline", "fit tfidf, log1p or hist_linear");
  add_config_options(baseline, baseline_cfg, true);
  std::string baseline_model;
  baseline->add_option("-m,--model", baseline_model, "tfidf, log1p or hist_linear");

  auto* evaluate = app.add_subcommand("evaluate", "recompute MSE from a predictions file");
  std::string predictions;
  evaluate->add_option("predictions", predictions, "predictions CSV")->required()->check(CLI::ExistingFile);

  auto* table = app.add_subcommand("table", "render result rows as markdown and CSV");
  std::vector<std::string> results;
  std::string table_out;
  table->add_option("results", results, "result CSV files")->required()->check(CLI::ExistingFile);
  table->add_option("-o,--out", table_out, "output stem (writes .md and .csv)")->required();

  auto* synth = app.add_subcommand("synth", "write a planted-signal corpus");
  PlantedSpec planted;
  std::string synth_out;
  synth->add_option("-o,--out", synth_out, "output directory")->required();
  synth->add_option("--documents", planted.documents);
  synth->add_option("--tokens", planted.tokens_per_document);
  synth->add_option("--noise", planted.noise);
  synth->add_option("--seed", planted.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "usage"}}.dump() << '\n';
    return 2;
  }
  command = app.get_subcommands().front()->get_name();

  try {
    json out;
    if (command == "ingest") {
      if (!fundamentals.empty()) {
        if (kpi_out.empty()) throw std::invalid_argument("--fundamentals needs --kpi-out");
        const KpiReport report = compute_kpis(load_fundamentals(fundamentals), z_window);
        write_targets(kpi_out, report.records);
        out = {{"records", report.records.size()}, {"skipped", report.skipped}, {"targets", kpi_out}};
      } else {
        const ExperimentConfig cfg = build_config(ingest_cfg);
        const Corpus corpus = load_corpus(cfg.docs, cfg.targets);
        const ExampleSet set = join_examples(corpus, cfg.metric, cfg.section);
        out = {{"documents", corpus.documents.size()},
               {"targets", corpus.targets.size()},
               {"metric", to_string(cfg.metric)},
               {"examples", set.examples.size()},
               {"excluded", set.excluded.size()}};
      }
    } else if (command == "chunk") {
      const ExperimentConfig cfg = build_config(chunk_cfg);
      const auto docs = chunk_corpus(cfg, Vocabulary::load(cfg.vocab));
      write_chunk_dump(chunk_out, docs);
      std::size_t chunks = 0;
      for (const auto& d : docs) chunks += d.size();
      out = {{"documents", docs.size()}, {"chunks", chunks}, {"out", chunk_out}};
    } else if (command == "embed") {
      const ExperimentConfig cfg = build_config(embed_cfg);
      const Vocabulary vocab = Vocabulary::load(cfg.vocab);
      PipelineConfig pc;
      pc.encoder = cfg.encoder;
      pc.encoder.vocab_size = vocab.size();
      pc.encoder.max_positions = cfg.chunk_length + 2;
      pc.docpool.input_dim = cfg.encoder.model_dim;
      pc.docpool.hidden_dim = cfg.lstm_hidden;
      pc.head = cfg.head;
      pc.head.input_dim = cfg.encoder.model_dim;
      Pipeline pipe(pc, cfg.seed);
      if (!embed_ckpt.empty()) pipe.load_state(load_checkpoint(embed_ckpt));
      std::vector<Chunk> all;
      for (auto& d : chunk_corpus(cfg, vocab)) all.insert(all.end(), d.begin(), d.end());
      const auto embeddings = embed_chunks(pipe.encoder(), all);
      save_embeddings(embed_out, embeddings);
      out = {{"chunks", embeddings.size()}, {"dim", cfg.encoder.model_dim}, {"out", embed_out}};
    } else if (command == "train" || command == "baseline") {
      ExperimentConfig cfg = build_config(command == "train" ? train_cfg : baseline_cfg);
      if (command == "train") {
        cfg.model = ModelKind::kFetilda;
      } else {
        if (!baseline_model.empty()) cfg.model = parse_model(baseline_model);
        if (cfg.model == ModelKind::kFetilda) throw std::invalid_argument("baseline: use `train` for fetilda");
      }
      out = row_json(run_experiment(cfg));
    } else if (command == "evaluate") {
      out = {{"test_mse", mse_from_predictions(predictions)},
             {"test_mse_raw", mse_from_predictions(predictions, true)}};
    } else if (command == "table") {
      std::vector<ResultRow> rows;
      for (const auto& r : results) {
        const auto part = load_result_rows(r);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      emit_table(rows, table_out);
      out = {{"rows", rows.size()}, {"markdown", table_out + ".md"}, {"csv", table_out + ".csv"}};
    } else if (command == "synth") {
      const PlantedCorpus corpus = make_planted_corpus(planted);
      write_planted_corpus(corpus, synth_out);
      out = {{"documents", corpus.corpus.documents.size()}, {"dir", synth_out}, {"marker", corpus.marker}};
    }
    std::cout << out.dump(2) << '\n';
    return 0;
  } catch (const ExperimentError& e) {
    std::cerr << json{{"error", e.what()}, {"command", command}, {"config", e.config_text()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"command", command}}.dump() << '\n';
    return 1;
  }
}
