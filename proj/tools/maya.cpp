// maya: command-line front end for the library and the HTTP service.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "maya/augment.hpp"
#include "maya/fer.hpp"
#include "maya/service.hpp"
#include "maya/sessions.hpp"
#include "maya/stats.hpp"
#include "maya/synth.hpp"

namespace fs = std::filesystem;
using namespace maya;
using nlohmann::json;

namespace {

// Thrown for problems the user can fix without reading a stack trace.
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 42;
  fs::path model;
  fs::path data_dir = "maya-data";
  int port = 8080;
};

struct CorpusOptions {
  fs::path corpus;  // empty: synthesize
  std::size_t per_class = 20;
  double jitter = augment::kDefaultJitter;
  std::string mode = "source_disjoint";
};

void add_corpus_options(CLI::App* cmd, CorpusOptions& o) {
  cmd->add_option("--corpus", o.corpus, "Labelled landmark file (.lmk.jsonl); synthesized when omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("--per-class", o.per_class, "Synthetic stills per class")->check(CLI::Range(1, 1000));
  cmd->add_option("--jitter", o.jitter, "Synthetic landmark jitter in pixels")->check(CLI::NonNegativeNumber);
  cmd->add_option("--mode", o.mode, "Split leakage mode")->check(CLI::IsMember({"paper", "source_disjoint"}));
}

fs::path model_path(const Globals& g) { return g.model.empty() ? g.data_dir / "model.ckpt" : g.model; }

std::vector<LandmarkSet> load_corpus(const CorpusOptions& o, std::uint64_t seed) {
  if (!o.corpus.empty()) return parse_landmark_file(o.corpus);
  return augment::synth_corpus(o.per_class, seed, o.jitter);
}

struct Prepared {
  augment::Dataset dataset;
  augment::DatasetManifest manifest;
  std::vector<std::size_t> halves;  // per class
};

Prepared prepare(const CorpusOptions& o, std::uint64_t seed) {
  const auto corpus = load_corpus(o, seed);
  const auto banks = augment::banks_from_corpus(corpus);
  Prepared p;
  for (const auto& b : banks) p.halves.push_back(b->size());
  p.dataset = augment::build_dataset(banks);
  p.manifest = augment::stratified_split(p.dataset, {}, seed, augment::leakage_mode_from_string(o.mode));
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DomainError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_ledger(const fer::FerModel& model) {
  const auto ledger = fer::param_ledger(model);
  std::cout << "parameters\n";
  for (const auto& row : ledger.rows) {
    std::cout << "  " << std::left << std::setw(13) << row.layer << std::right << std::setw(9) << row.params << "  "
              << row.rounded << '\n';
  }
  std::cout << "  " << std::left << std::setw(13) << "trunk" << std::right << std::setw(9) << ledger.trunk_total << "  "
            << fer::format_thousands(ledger.trunk_total) << '\n';
  std::cout << "  " << std::left << std::setw(13) << "head" << std::right << std::setw(9) << ledger.head << '\n';
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ------------------------------------------------------------- commands

int cmd_synth(const Globals& g, const CorpusOptions& o, fs::path out) {
  if (out.empty()) out = g.data_dir / "corpus.lmk.jsonl";
  const auto corpus = augment::synth_corpus(o.per_class, g.seed, o.jitter);
  std::string text;
  for (const auto& ls : corpus) text += to_json_line(ls) + "\n";
  write_text(out, text);
  std::cout << "wrote " << corpus.size() << " landmark sets (" << o.per_class << " per class) to " << out.string()
            << '\n';
  return 0;
}

int cmd_augment(const Globals& g, const CorpusOptions& o, bool pack) {
  const auto p = prepare(o, g.seed);
  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    std::cout << std::left << std::setw(10) << to_string(kAllEmotions[c]) << std::right << std::setw(5) << p.halves[c]
              << " halves -> " << std::setw(6) << p.dataset.per_class_counts[c] << " composites\n";
  }
  std::cout << "total: " << p.dataset.samples.size() << '\n';
  std::cout << "split (" << to_string(p.manifest.leakage_mode) << "): train " << p.manifest.train.size() << ", val "
            << p.manifest.val.size() << ", test " << p.manifest.test.size();
  if (!p.manifest.discarded.empty()) std::cout << ", discarded " << p.manifest.discarded.size();
  std::cout << '\n';
  const auto manifest_file = g.data_dir / "manifest.json";
  write_text(manifest_file, augment::manifest_to_json(p.manifest));
  std::cout << "manifest: " << manifest_file.string() << " (" << fer::manifest_hash(p.manifest) << ")\n";
  if (pack) {
    for (const auto& [name, split] : {std::pair{"train", augment::Split::train}, std::pair{"val", augment::Split::val},
                                      std::pair{"test", augment::Split::test}}) {
      const auto file = g.data_dir / (std::string(name) + ".pack");
      std::ofstream out(file, std::ios::binary | std::ios::trunc);
      augment::write_pack(out, p.dataset, p.manifest.indices(split));
      if (!out) throw DomainError("cannot write " + file.string());
      std::cout << "pack: " << file.string() << '\n';
    }
  }
  return 0;
}

int cmd_train(const Globals& g, const CorpusOptions& o, nn::TrainConfig cfg) {
  cfg.seed = g.seed;
  cfg.validate();
  const auto p = prepare(o, g.seed);
  std::cout << "dataset: " << p.dataset.samples.size() << " composites, train " << p.manifest.train.size() << ", val "
            << p.manifest.val.size() << ", test " << p.manifest.test.size() << " (" << o.mode << ")\n";
  auto model = fer::build_maya_net(g.seed);
  const auto start = std::chrono::steady_clock::now();
  const auto result = fer::train_model(model, p.dataset, p.manifest, cfg, [&](const nn::EpochMetrics& m) {
    const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "epoch " << std::setw(3) << m.epoch << "  train_loss " << fixed(m.train_loss, 4) << "  train_acc "
              << fixed(m.train_accuracy, 4) << "  val_loss " << fixed(m.val_loss, 4) << "  val_acc "
              << fixed(m.val_accuracy, 4) << "  t " << fixed(secs, 1) << "s" << std::endl;
  });
  std::cout << "best epoch " << result.best_epoch << (result.early_stopped ? " (early stop)" : "") << '\n';
  const auto path = model_path(g);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fer::save_model(path, model);
  std::cout << "model: " << path.string() << '\n';
  print_ledger(model);
  return 0;
}

int cmd_eval(const Globals& g, const CorpusOptions& o, const std::string& split_name, const fs::path& csv) {
  const auto model = fer::load_model(model_path(g));
  const auto p = prepare(o, g.seed);
  const auto split = split_name == "train" ? augment::Split::train
                     : split_name == "val" ? augment::Split::val
                                           : augment::Split::test;
  if (model.meta.contains("manifest_hash") && model.meta["manifest_hash"] != fer::manifest_hash(p.manifest)) {
    std::cerr << "warning: the model was trained on a different split than the one evaluated\n";
  }
  const fer::CompositeSource source(p.dataset, p.manifest.indices(split));
  const auto ev = fer::evaluate(model, source);
  std::cout << ev.matrix.to_text();
  std::cout << "samples: " << ev.matrix.total() << '\n';
  std::cout << "accuracy: " << fixed(ev.accuracy, 4) << '\n';
  if (!csv.empty()) write_text(csv, ev.matrix.to_csv());
  return 0;
}

int cmd_predict(const Globals& g, const fs::path& input) {
  const auto model = fer::load_model(model_path(g));
  const auto sets = parse_landmark_file(input);
  for (const auto& ls : sets) {
    auto j = service::prediction_json(fer::predict(model, ls));
    j.erase("embedding");
    j["subject_id"] = ls.subject_id;
    std::cout << j.dump() << '\n';
  }
  return 0;
}

int cmd_simulate(const Globals& g, const fs::path& board, const fs::path& out, const std::string& child,
                 double pass_rate) {
  const auto config =
      board.empty() ? sessions::BoardConfig::standard() : sessions::board_from_json(json::parse(read_text(board)));
  sessions::SimulationOptions opts;
  opts.child_name = child;
  opts.pass_rate = pass_rate;
  const auto s = sessions::simulate_game("sim-" + std::to_string(g.seed), config, g.seed, opts);
  std::string text;
  for (const auto& e : s.events()) text += sessions::to_line(e) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
    const auto& game = s.game();
    std::cerr << s.events().size() << " events, winner " << sessions::to_string(*game.winner) << '\n';
  }
  return 0;
}

int cmd_stats_pain(const fs::path& input, bool as_json) {
  std::ifstream in(input);
  if (!in) throw DomainError("cannot read " + input.string());
  const auto report = stats::pain_report(stats::read_pain_csv(in));
  if (as_json) {
    std::cout << report.to_json().dump(2) << '\n';
  } else {
    std::cout << report.to_text();
  }
  return 0;
}

int cmd_stats_utaut(const fs::path& input, const std::string& pairing, bool as_json) {
  std::ifstream in(input);
  if (!in) throw DomainError("cannot read " + input.string());
  const auto responses = stats::read_responses_csv(in);
  std::vector<stats::UtautResponse> children, parents;
  for (const auto& r : responses) (r.group == stats::Group::child ? children : parents).push_back(r);
  const auto rows = stats::compare_groups(children, parents, stats::CategoryMap::standard(),
                                          *stats::pairing_from_string(pairing));
  if (as_json) {
    json out = json::array();
    for (const auto& r : rows) out.push_back(stats::to_json(r));
    std::cout << out.dump(2) << '\n';
  } else {
    std::cout << stats::render_comparison(rows);
  }
  return 0;
}

int cmd_serve(const Globals& g, const std::string& host, std::size_t max_sessions, unsigned threads) {
  service::ServiceConfig cfg;
  cfg.host = host;
  cfg.port = g.port;
  cfg.data_dir = g.data_dir;
  cfg.max_sessions = max_sessions;
  cfg.threads = threads;
  cfg.seed = g.seed;
  if (!g.model.empty()) cfg.model_path = g.model;

  // Signals go to a dedicated thread so shutdown runs outside a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  service::Server server(cfg);
  const int port = server.bind();
  std::cout << "maya " << service::build_hash() << " listening on http://" << host << ":" << port
            << (server.model_loaded() ? "" : " (no model loaded)") << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.run();
  // run() also returns on bind loss; wake the waiter either way.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  std::cout << "stopped" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Facial-expression recognition and session engine"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", service::build_hash());
  app.set_config("--config", "", "TOML or INI file with option defaults");

  Globals g;
  app.add_option("--seed", g.seed, "Seed for corpus synthesis, splitting, initialization and games");
  app.add_option("--model", g.model, "Model checkpoint (default <data-dir>/model.ckpt)");
  app.add_option("--data-dir", g.data_dir, "Directory for corpora, manifests, models and session logs");
  app.add_option("--port", g.port, "HTTP port for serve (0 picks a free one)")->check(CLI::Range(0, 65535));

  CorpusOptions corpus;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic labelled landmark corpus");
  synth->add_option("--per-class", corpus.per_class, "Stills per class")->check(CLI::Range(1, 1000));
  synth->add_option("--jitter", corpus.jitter, "Landmark jitter in pixels")->check(CLI::NonNegativeNumber);
  synth->add_option("--out", synth_out, "Output file (default <data-dir>/corpus.lmk.jsonl)");

  bool pack = false;
  auto* aug = app.add_subcommand("augment", "Build the half-face permutation dataset and its split manifest");
  add_corpus_options(aug, corpus);
  aug->add_flag("--pack", pack, "Also write packed train/val/test composites");

  nn::TrainConfig tcfg;
  tcfg.batch_size = 32;
  tcfg.max_epochs = 12;
  auto* train = app.add_subcommand("train", "Train a checkpoint and print per-epoch metrics");
  add_corpus_options(train, corpus);
  train->add_option("--lr", tcfg.learning_rate, "ADAM learning rate");
  train->add_option("--epochs", tcfg.max_epochs, "Maximum epochs")->check(CLI::Range(1, 10000));
  train->add_option("--batch", tcfg.batch_size, "Mini-batch size")->check(CLI::Range(1, 100000));
  train->add_option("--patience", tcfg.patience, "Epochs without validation improvement before stopping");

  std::string split = "test";
  fs::path csv;
  auto* eval = app.add_subcommand("eval", "Confusion matrix and accuracy of a checkpoint");
  add_corpus_options(eval, corpus);
  eval->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--csv", csv, "Also write the matrix as CSV");

  fs::path predict_input;
  auto* predict = app.add_subcommand("predict", "Predict every landmark set in a file");
  predict->add_option("landmarks", predict_input, "Landmark file (.lmk.jsonl)")->required()->check(CLI::ExistingFile);

  auto* game = app.add_subcommand("game", "Game utilities");
  game->require_subcommand(1);
  fs::path board, log_out;
  std::string child = "Sam";
  double pass_rate = 0.6;
  auto* simulate = game->add_subcommand("simulate", "Play a scripted full game and print its event log");
  simulate->add_option("--board", board, "Board config JSON")->check(CLI::ExistingFile);
  simulate->add_option("--out", log_out, "Write the log here instead of stdout");
  simulate->add_option("--child-name", child, "Child's name");
  simulate->add_option("--pass-rate", pass_rate, "Chance a scripted expression matches")->check(CLI::Range(0.0, 1.0));

  auto* stats_cmd = app.add_subcommand("stats", "Statistics reports from CSV");
  stats_cmd->require_subcommand(1);
  fs::path stats_input;
  bool as_json = false;
  std::string pairing = "independent";
  auto* pain = stats_cmd->add_subcommand("pain", "Paired t-test on pain scores (participant_id,mode,score)");
  pain->add_option("csv", stats_input, "Pain CSV")->required()->check(CLI::ExistingFile);
  pain->add_flag("--json", as_json, "JSON output");
  auto* utaut = stats_cmd->add_subcommand("utaut", "Children vs parents per UTAUT category");
  utaut->add_option("csv", stats_input, "Responses CSV")->required()->check(CLI::ExistingFile);
  utaut->add_option("--pairing", pairing, "Test pairing")->check(CLI::IsMember({"independent", "by_dyad"}));
  utaut->add_flag("--json", as_json, "JSON output");

  std::string host = "127.0.0.1";
  std::size_t max_sessions = 64;
  unsigned threads = 16;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--max-sessions", max_sessions, "Concurrently active sessions")->check(CLI::PositiveNumber);
  serve->add_option("--threads", threads, "Request threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(g, corpus, synth_out);
    if (*aug) return cmd_augment(g, corpus, pack);
    if (*train) return cmd_train(g, corpus, tcfg);
    if (*eval) return cmd_eval(g, corpus, split, csv);
    if (*predict) return cmd_predict(g, predict_input);
    if (*simulate) return cmd_simulate(g, board, log_out, child, pass_rate);
    if (*pain) return cmd_stats_pain(stats_input, as_json);
    if (*utaut) return cmd_stats_utaut(stats_input, pairing, as_json);
    if (*serve) return cmd_serve(g, host, max_sessions, threads);
  } catch (const service::ApiError& e) {
    std::cerr << "maya: " << e.what() << '\n';
    return e.status() == 400 ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "maya: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
