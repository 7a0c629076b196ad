// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "smad/cer.hpp"
#include "smad/corpus.hpp"
#include "smad/model.hpp"
#include "smad/runconfig.hpp"

using namespace smad;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SMAD_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) {
    r.output.append(buf.data(), n);
    if (n < buf.size()) break;
  }
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Tiny end-to-end scenario shared across cases.
struct Scenario {
  fs::path root;
  fs::path config_path;
  fs::path data_dir;
  fs::path run_dir;

  Scenario() {
    root = fs::temp_directory_path() / "smad_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    data_dir = root / "corpus";
    run_dir = root / "run";
    config_path = root / "config.json";
    nlohmann::json j;
    j["data"] = {{"dir", data_dir.string()}, {"seed", 11},
                 {"n_utterances", 40},       {"vocab_size", 8},
                 {"min_len", 2},             {"max_len", 4},
                 {"feature_dim", 8},         {"noise", 0.0}};
    j["model"] = {{"n_enc_layers", 1}, {"n_dec_layers", 1}, {"d_model", 16},
                  {"d_ff", 32},        {"n_heads", 2},      {"vocab_size", 8},
                  {"feature_dim", 8},  {"seed", 1}};
    j["optim"] = {{"max_steps", 6}, {"batch_size", 8}, {"eval_interval", 3},
                  {"warmup_steps", 4}};
    j["decode"] = {{"beam_width", 2}, {"max_len", 8}};
    j["run_dir"] = run_dir.string();
    std::ofstream os(config_path);
    os << j.dump(2);
  }
  ~Scenario() { fs::remove_all(root); }

  std::string base_args() const { return "-c " + config_path.string(); }
};

}  // namespace

TEST_CASE("help is available for every subcommand") {
  CHECK(run_cli("--help").exit_code == 0);
  for (const char* sub :
       {"generate", "train", "decode", "ablate", "describe"}) {
    CliResult r = run_cli(std::string(sub) + " --help");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("--config") != std::string::npos);
  }
}

TEST_CASE("bad flags and bad configs exit with usage code 1") {
  CHECK(run_cli("train --no-such-flag").exit_code == 1);
  CHECK(run_cli("nonexistent-command").exit_code == 1);

  const fs::path bad = fs::temp_directory_path() / "smad_bad_config.json";
  std::ofstream(bad) << "{\"model\": {\"d_model\": 63}}";
  CliResult r = run_cli("describe -c " + bad.string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("d_model") != std::string::npos);
  std::ofstream(bad) << "{\"model\": {\"no_such_key\": 1}}";
  CliResult r2 = run_cli("describe -c " + bad.string());
  CHECK(r2.exit_code == 1);
  CHECK(r2.output.find("$.model.no_such_key") != std::string::npos);
  fs::remove(bad);
}

TEST_CASE("missing config file exits with data code 2") {
  CHECK(run_cli("describe -c /nonexistent/config.json").exit_code == 2);
}

TEST_CASE("generate creates the corpus files and refuses to overwrite") {
  Scenario sc;
  CliResult r = run_cli("generate " + sc.base_args());
  CHECK(r.exit_code == 0);
  for (const char* f :
       {"manifest_train.tsv", "manifest_dev.tsv", "manifest_test.tsv",
        "feats_train.bin", "feats_dev.bin", "feats_test.bin", "stats.json",
        "vocab.json", "meta.json"}) {
    CHECK(fs::exists(sc.data_dir / f));
  }
  // manifest line count equals the split size
  std::ifstream mf(sc.data_dir / "manifest_train.tsv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(mf, line))
    if (!line.empty() && line[0] != '#') ++rows;
  CHECK(rows == 32);  // 80% of 40

  const std::string before = slurp(sc.data_dir / "feats_train.bin");
  CliResult again = run_cli("generate " + sc.base_args());
  CHECK(again.exit_code == 1);
  CHECK(again.output.find("--force") != std::string::npos);
  CHECK(slurp(sc.data_dir / "feats_train.bin") == before);  // untouched
  CHECK(run_cli("generate " + sc.base_args() + " --force").exit_code == 0);
}

TEST_CASE("full train/decode round trip through the CLI") {
  Scenario sc;
  REQUIRE(run_cli("generate " + sc.base_args()).exit_code == 0);
  CliResult train = run_cli("train " + sc.base_args());
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(sc.run_dir / "resolved_config.json"));
  CHECK(fs::exists(sc.run_dir / "checkpoints" / "best.ckpt"));
  CHECK(fs::exists(sc.run_dir / "checkpoints" / "last.ckpt"));
  CHECK(fs::exists(sc.run_dir / "logs" / "metrics.jsonl"));

  // resolved config parses back to an equal config
  const RunConfig original = load_run_config(sc.config_path, {});
  const RunConfig echoed =
      load_run_config(sc.run_dir / "resolved_config.json", {});
  CHECK(run_config_to_json(original) == run_config_to_json(echoed));

  // rerun without force refuses
  CHECK(run_cli("train " + sc.base_args()).exit_code == 1);

  // decode greedy and beam=1 byte-identical
  CHECK(run_cli("decode " + sc.base_args() + " --mode greedy --split dev")
            .exit_code == 0);
  CHECK(run_cli("decode " + sc.base_args() +
                " --mode beam --set decode.beam_width=1 --split dev")
            .exit_code == 0);
  const std::string greedy = slurp(sc.run_dir / "hyps" / "dev_greedy.hyp");
  const std::string beam1 = slurp(sc.run_dir / "hyps" / "dev_beam.hyp");
  CHECK(!greedy.empty());
  CHECK(greedy == beam1);

  // summary CER matches a recomputation from the hypotheses file
  const Corpus dev = load_corpus_split(sc.data_dir, "dev");
  std::map<std::string, std::vector<int>> ref;
  for (const auto& u : dev.utts) ref[u.id] = u.tokens;
  std::vector<CerReport> reports;
  std::istringstream hs(greedy);
  std::string line;
  while (std::getline(hs, line)) {
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    const std::string id = line.substr(0, tab);
    std::vector<int> hyp;
    std::istringstream ts(line.substr(tab + 1));
    std::string sym;
    while (ts >> sym) hyp.push_back(dev.vocab.id_of(sym));
    reports.push_back(cer(ref.at(id), hyp));
  }
  const CerReport total = aggregate_cer(reports);
  const auto summary = nlohmann::json::parse(
      slurp(sc.run_dir / "hyps" / "dev_greedy.cer.json"));
  CHECK(summary["substitutions"].get<std::size_t>() == total.substitutions);
  CHECK(summary["deletions"].get<std::size_t>() == total.deletions);
  CHECK(summary["insertions"].get<std::size_t>() == total.insertions);
  CHECK(summary["cer_percent"].get<double>() ==
        doctest::Approx(total.cer_percent()).epsilon(1e-12));

  // missing checkpoint is a data error with a message
  CliResult missing = run_cli("decode " + sc.base_args() +
                              " --checkpoint /nonexistent/x.ckpt");
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("checkpoint") != std::string::npos);

  // alignment dump writes one matrix file per utterance
  const fs::path dumps = sc.root / "alignments";
  CHECK(run_cli("decode " + sc.base_args() +
                " --mode greedy --split dev --dump-alignments " +
                dumps.string())
            .exit_code == 0);
  std::size_t dumped = 0;
  for (auto& e : fs::directory_iterator(dumps)) (void)e, ++dumped;
  CHECK(dumped == dev.utts.size());
}

TEST_CASE("describe prints the parameter table") {
  Scenario sc;
  CliResult r = run_cli("describe " + sc.base_args());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("total parameters:") != std::string::npos);
  const ModelConfig mc = load_run_config(sc.config_path, {}).model;
  CHECK(r.output.find(std::to_string(SmadModel::count_parameters(mc))) !=
        std::string::npos);
}

TEST_CASE("ablate trains all six variants and tabulates them") {
  Scenario sc;
  REQUIRE(run_cli("generate " + sc.base_args()).exit_code == 0);
  CliResult r = run_cli("ablate " + sc.base_args());
  CHECK(r.exit_code == 0);
  const fs::path table = sc.run_dir / "ablation.tsv";
  REQUIRE(fs::exists(table));
  std::ifstream is(table);
  std::string line;
  std::getline(is, line);  // header
  CHECK(line.find("variant") == 0);
  std::size_t rows = 0;
  std::map<std::string, std::size_t> params;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    ++rows;
    std::istringstream ls(line);
    std::string variant, count;
    std::getline(ls, variant, '\t');
    std::getline(ls, count, '\t');
    params[variant] = std::stoull(count);
  }
  CHECK(rows == 6);

  // param column matches the model's own accounting
  RunConfig cfg = load_run_config(sc.config_path, {});
  CHECK(params.at("t_smad") == SmadModel::count_parameters(cfg.model));
  ModelConfig base = cfg.model;
  ModelConfig ne = base;
  ne.variant = Variant::no_encoder;
  ne.n_enc_layers = 0;
  ne.n_dec_layers = SmadModel::parity_decoder_depth(base);
  CHECK(params.at("no_encoder") == SmadModel::count_parameters(ne));
  ModelConfig bl = base;
  bl.variant = Variant::transformer_baseline;
  bl.ctc_placement = CtcPlacement::ctc1;
  CHECK(params.at("transformer_baseline") ==
        SmadModel::count_parameters(bl));

  // per-variant run directories hold their own artifacts
  CHECK(fs::exists(sc.run_dir / "ablate_t_smad" / "checkpoints" / "best.ckpt"));
  CHECK(fs::exists(sc.run_dir / "ablate_no_das" / "hyps" / "dev_beam.hyp"));
}
