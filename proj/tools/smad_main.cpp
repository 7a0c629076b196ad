// SPDX-License-Identifier: Apache-2.0
//
// smad: sequence-to-sequence toolkit around the self-and-mixed attention
// decoder. Subcommands: generate, train, decode, ablate, describe.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smad/cer.hpp"
#include "smad/corpus.hpp"
#include "smad/decode.hpp"
#include "smad/errors.hpp"
#include "smad/model.hpp"
#include "smad/runconfig.hpp"
#include "smad/trainer.hpp"

namespace fs = std::filesystem;
using namespace smad;

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  bool force = false;

  RunConfig load() const { return load_run_config(config_file, overrides); }
};

void add_common(CLI::App* sub, CommonArgs& args, bool with_force = true) {
  sub->add_option("-c,--config", args.config_file,
                  "JSON config file (defaults apply when omitted)");
  sub->add_option("--set", args.overrides,
                  "override config fields, e.g. --set model.d_model=128");
  if (with_force) {
    sub->add_flag("-f,--force", args.force,
                  "overwrite existing outputs instead of refusing");
  }
}

void check_corpus_matches(const RunConfig& cfg, const Corpus& corpus) {
  if (corpus.vocab.size() != cfg.model.vocab_size) {
    throw ConfigError("corpus vocab size " + std::to_string(corpus.vocab.size()) +
                      " does not match model.vocab_size " +
                      std::to_string(cfg.model.vocab_size));
  }
  if (corpus.feature_dim != cfg.model.feature_dim) {
    throw ConfigError("corpus feature dim " + std::to_string(corpus.feature_dim) +
                      " does not match model.feature_dim " +
                      std::to_string(cfg.model.feature_dim));
  }
}

void write_resolved_config(const RunConfig& cfg, const fs::path& run_dir) {
  std::ofstream os(run_dir / "resolved_config.json");
  if (!os) throw DataError("cannot write resolved config in " + run_dir.string());
  os << run_config_to_json(cfg).dump(2) << "\n";
}

int cmd_generate(const CommonArgs& args) {
  RunConfig cfg = args.load();
  const fs::path marker = cfg.data_dir / "manifest_train.tsv";
  if (fs::exists(marker) && !args.force) {
    throw UsageError("corpus already exists at " + cfg.data_dir.string() +
                     "; pass --force to regenerate");
  }
  const Corpus corpus = generate_corpus(cfg.data);
  const CorpusSplits splits = split_corpus(corpus, cfg.data.seed);
  const NormStats stats = compute_norm_stats(splits.train);
  save_corpus_dir(cfg.data_dir, splits, stats, cfg.data);
  std::cout << "generated " << corpus.utts.size() << " utterances ("
            << splits.train.utts.size() << " train / " << splits.dev.utts.size()
            << " dev / " << splits.test.utts.size() << " test) in "
            << cfg.data_dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = args.load();
  if (fs::exists(cfg.run_dir / "resolved_config.json") && !args.force) {
    throw UsageError("run directory " + cfg.run_dir.string() +
                     " already holds a run; pass --force or pick a new one");
  }
  fs::create_directories(cfg.run_dir);
  write_resolved_config(cfg, cfg.run_dir);

  const Corpus train = load_corpus_split(cfg.data_dir, "train");
  const Corpus dev = load_corpus_split(cfg.data_dir, "dev");
  check_corpus_matches(cfg, train);

  SmadModel model(cfg.model);
  std::cout << "training " << to_string(cfg.model.variant) << " ("
            << model.parameter_count() << " parameters) for "
            << cfg.optim.max_steps << " steps\n";
  const TrainResult result = train_model(model, train, dev, cfg.optim,
                                         cfg.run_dir);
  std::cout << "done: best dev att loss " << result.best_dev_att << " at step "
            << result.best_step << "\n";
  std::cout << "checkpoints: " << result.best_checkpoint.string() << ", "
            << result.last_checkpoint.string() << "\n";
  return 0;
}

struct DecodeSummary {
  CerReport totals;
  fs::path hyp_path;
};

DecodeSummary decode_split(const RunConfig& cfg, SmadModel& model,
                           const Corpus& corpus, const std::string& split,
                           const std::string& mode,
                           const fs::path& dump_alignments) {
  fs::create_directories(cfg.run_dir / "hyps");
  DecodeSummary summary;
  summary.hyp_path = cfg.run_dir / "hyps" / (split + "_" + mode + ".hyp");
  std::ofstream hyp_os(summary.hyp_path);
  if (!hyp_os) throw DataError("cannot write " + summary.hyp_path.string());

  std::vector<CerReport> reports;
  for (const auto& utt : corpus.utts) {
    const EncoderOutput enc = model.encode(utt.feature_tensor());
    std::vector<int> hyp;
    if (mode == "greedy") {
      hyp = greedy_decode(model, enc, cfg.decode.max_len);
    } else {
      DecodeOptions opts = cfg.decode;
      hyp = beam_decode(model, enc, opts);
    }
    reports.push_back(cer(utt.tokens, hyp));
    hyp_os << utt.id << '\t' << corpus.vocab.detokenize(hyp) << '\n';

    if (!dump_alignments.empty()) {
      fs::create_directories(dump_alignments);
      std::vector<int> target_in = {Vocab::kSosId};
      target_in.insert(target_in.end(), utt.tokens.begin(), utt.tokens.end());
      std::vector<Tensor> weights;
      NoGradGuard ng;
      model.decode_training(enc, target_in, false, &weights);
      std::ofstream am(dump_alignments / (utt.id + ".txt"));
      am << "# attention weights, one matrix per layer/head, rows = target "
            "positions\n";
      for (std::size_t w = 0; w < weights.size(); ++w) {
        am << "# matrix " << w << " (" << weights[w].rows() << "x"
           << weights[w].cols() << ")\n";
        for (std::size_t i = 0; i < weights[w].rows(); ++i) {
          for (std::size_t j = 0; j < weights[w].cols(); ++j) {
            if (j) am << ' ';
            am << weights[w].at(i, j);
          }
          am << '\n';
        }
      }
    }
  }
  summary.totals = aggregate_cer(reports);

  nlohmann::json j;
  j["split"] = split;
  j["mode"] = mode;
  j["substitutions"] = summary.totals.substitutions;
  j["deletions"] = summary.totals.deletions;
  j["insertions"] = summary.totals.insertions;
  j["ref_len"] = summary.totals.ref_len;
  j["cer_percent"] = summary.totals.cer_percent();
  std::ofstream js(cfg.run_dir / "hyps" / (split + "_" + mode + ".cer.json"));
  js << j.dump(2) << "\n";
  return summary;
}

int cmd_decode(const CommonArgs& args, const std::string& split,
               const std::string& mode, std::string checkpoint,
               const std::string& dump_alignments) {
  RunConfig cfg = args.load();
  if (checkpoint.empty()) {
    checkpoint = (cfg.run_dir / "checkpoints" / "best.ckpt").string();
  }
  if (!fs::exists(checkpoint)) {
    throw DataError("checkpoint not found: " + checkpoint);
  }
  const Corpus corpus = load_corpus_split(cfg.data_dir, split);
  check_corpus_matches(cfg, corpus);
  SmadModel model(cfg.model);
  model.params().load(checkpoint);

  const DecodeSummary summary =
      decode_split(cfg, model, corpus, split, mode, dump_alignments);
  std::cout << split << " " << mode << ": CER " << std::fixed
            << std::setprecision(2) << summary.totals.cer_percent() << "% (S "
            << summary.totals.substitutions << ", D "
            << summary.totals.deletions << ", I " << summary.totals.insertions
            << ", N " << summary.totals.ref_len << ")\n";
  std::cout << "hypotheses: " << summary.hyp_path.string() << "\n";
  return 0;
}

struct AblationRow {
  std::string variant;
  std::size_t params = 0;
  double dev_cer = 0.0;
  double test_cer = 0.0;
  std::string note;
};

void write_ablation_table(const std::vector<AblationRow>& rows,
                          const fs::path& path, bool partial) {
  std::ofstream os(path);
  os << "variant\tparams\tdev_cer\ttest_cer\tnote\n";
  std::cout << std::left << std::setw(24) << "variant" << std::setw(12)
            << "params" << std::setw(10) << "dev_cer" << std::setw(10)
            << "test_cer" << "note\n";
  for (const auto& r : rows) {
    os << r.variant << '\t' << r.params << '\t' << std::fixed
       << std::setprecision(2) << r.dev_cer << '\t' << r.test_cer << '\t'
       << r.note << '\n';
    std::cout << std::left << std::setw(24) << r.variant << std::setw(12)
              << r.params << std::setw(10) << std::fixed
              << std::setprecision(2) << r.dev_cer << std::setw(10)
              << r.test_cer << r.note << "\n";
  }
  if (partial) {
    os << "# partial results: a variant failed before completion\n";
    std::cout << "(partial results preserved at " << path.string() << ")\n";
  }
}

int cmd_ablate(const CommonArgs& args) {
  RunConfig cfg = args.load();
  if (fs::exists(cfg.run_dir / "ablation.tsv") && !args.force) {
    throw UsageError("ablation results already exist in " +
                     cfg.run_dir.string() + "; pass --force");
  }
  fs::create_directories(cfg.run_dir);
  write_resolved_config(cfg, cfg.run_dir);
  const Corpus train = load_corpus_split(cfg.data_dir, "train");
  const Corpus dev = load_corpus_split(cfg.data_dir, "dev");
  const Corpus test = load_corpus_split(cfg.data_dir, "test");
  check_corpus_matches(cfg, train);

  const Variant variants[] = {
      Variant::t_smad,           Variant::transformer_baseline,
      Variant::no_encoder,       Variant::no_das,
      Variant::no_mixed_attention, Variant::no_modality_specific,
  };
  std::vector<AblationRow> rows;
  const fs::path table_path = cfg.run_dir / "ablation.tsv";
  try {
    for (Variant v : variants) {
      AblationRow row;
      row.variant = to_string(v);
      ModelConfig mc = cfg.model;
      mc.variant = v;
      if (v == Variant::no_encoder) {
        mc.n_enc_layers = 0;
        mc.n_dec_layers = SmadModel::parity_decoder_depth(cfg.model);
        row.note = "decoder deepened to " + std::to_string(mc.n_dec_layers) +
                   " layers for parameter parity";
      }
      if (mc.ctc_placement == CtcPlacement::ctc2 &&
          !has_decoder_acoustic_stream(v)) {
        mc.ctc_placement = CtcPlacement::ctc1;
        row.note += row.note.empty() ? "" : "; ";
        row.note += "no acoustic stream, ctc2 -> ctc1";
      }
      SmadModel model(mc);
      row.params = model.parameter_count();
      std::cout << "[ablate] training " << row.variant << " (" << row.params
                << " parameters)\n";
      RunConfig vcfg = cfg;
      vcfg.model = mc;
      vcfg.run_dir = cfg.run_dir / ("ablate_" + row.variant);
      const TrainResult tr =
          train_model(model, train, dev, vcfg.optim, vcfg.run_dir);
      model.params().load(tr.best_checkpoint);
      row.dev_cer =
          decode_split(vcfg, model, dev, "dev", "beam", "").totals.cer_percent();
      row.test_cer =
          decode_split(vcfg, model, test, "test", "beam", "").totals.cer_percent();
      rows.push_back(std::move(row));
    }
  } catch (...) {
    write_ablation_table(rows, table_path, true);
    throw;
  }
  write_ablation_table(rows, table_path, false);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smad: self-and-mixed attention sequence-to-sequence toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, decode_args, ablate_args, describe_args;

  CLI::App* gen = app.add_subcommand("generate", "create the synthetic corpus");
  add_common(gen, gen_args);

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, train_args);

  CLI::App* decode = app.add_subcommand("decode", "decode a split and report CER");
  add_common(decode, decode_args, false);
  std::string split = "dev", mode = "beam", checkpoint, dump_alignments;
  decode->add_option("--split", split, "split to decode: train|dev|test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  decode->add_option("--mode", mode, "decoding mode")
      ->check(CLI::IsMember({"greedy", "beam"}));
  decode->add_option("--checkpoint", checkpoint,
                     "checkpoint path (default: <run_dir>/checkpoints/best.ckpt)");
  decode->add_option("--dump-alignments", dump_alignments,
                     "write attention matrices for every utterance here");

  CLI::App* ablate = app.add_subcommand(
      "ablate", "train all six variants with one budget and tabulate CER");
  add_common(ablate, ablate_args);

  CLI::App* describe = app.add_subcommand("describe", "print the parameter table");
  add_common(describe, describe_args, false);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_generate(gen_args);
    if (train->parsed()) return cmd_train(train_args);
    if (decode->parsed())
      return cmd_decode(decode_args, split, mode, checkpoint, dump_alignments);
    if (ablate->parsed()) return cmd_ablate(ablate_args);
    if (describe->parsed()) {
      RunConfig cfg = describe_args.load();
      std::cout << SmadModel(cfg.model).describe();
      return 0;
    }
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error (usage): " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error (data): " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error (numerical): " << e.what() << "\n";
    return 3;
  }
}
