#include "ctxtts/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctxtts/checkpoint.hpp"
#include "ctxtts/config.hpp"
#include "ctxtts/errors.hpp"
#include "ctxtts/eval.hpp"
#include "ctxtts/record_io.hpp"
#include "ctxtts/synth.hpp"
#include "ctxtts/toy_corpus.hpp"
#include "ctxtts/vocoder.hpp"

namespace ctxtts::cli {

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string preset;
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Model preset (tiny, full)");
    app->add_option("--config", file, "Configuration file");
    app->add_option("--set", sets, "Override, KEY=VALUE (repeatable)");
  }

  // Precedence: base file < preset < --config < --set.
  config::RunConfig build(const std::string& base_file = {}) const {
    config::RunConfig cfg;
    if (!base_file.empty()) cfg.apply_file(base_file);
    if (!preset.empty()) config::apply_preset(cfg, preset);
    if (!file.empty()) cfg.apply_file(file);
    config::KeyValues kv;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw InvalidConfig("--set expects KEY=VALUE, got '" + s + "'");
      auto trim = [](std::string x) {
        const auto b = x.find_first_not_of(" \t"), e = x.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
      };
      kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    if (!kv.empty()) cfg.apply(kv, "flag");
    return cfg;
  }
};

// Removes the lock file on scope exit.
class RunLock {
 public:
  explicit RunLock(const fs::path& path) : path_(path) {
    std::FILE* f = std::fopen(path.c_str(), "wx");
    if (!f) throw InvalidRequest("run directory is locked (" + path.string() + " exists)");
    std::fputs("training\n", f);
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

void write_text(const fs::path& path, const std::string& text) { io::write_file_atomic(path.string(), text); }

MatF column_record(const std::vector<float>& v) {
  MatF m(v.size(), 1);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

std::string embedder_signature(const config::RunConfig& cfg) {
  auto c = cfg;
  std::ostringstream s;
  for (auto& f : config::embedder_fields(c.embedder)) s << f.key << " = " << f.get() << '\n';
  s << "model.semantic_context = " << cfg.model.semantic_context << '\n';
  return s.str();
}

std::map<std::string, MatF> compute_pbes(const corpus::CorpusStore& store, const semantic::PairEmbedder& embedder,
                                         int L) {
  std::map<std::string, MatF> out;
  for (const auto& pid : store.paragraph_ids()) {
    const auto para = store.paragraph(pid);
    for (std::size_t i = 0; i < para.size(); ++i) {
      const auto window = context::build_window(para, i, L);
      out[para[i]->utterance_id] = semantic::embed_pairs(context::derive_pairs(window), embedder);
    }
  }
  return out;
}

frontend::Lexicon load_lexicon_or_empty(const fs::path& path) {
  return fs::exists(path) ? frontend::Lexicon::load(path.string()) : frontend::Lexicon();
}

// ---- prepare ----

struct PrepareArgs {
  std::string manifest, out, lexicon;
  ConfigFlags cfg;
};

void run_prepare(const PrepareArgs& a) {
  auto cfg = a.cfg.build();
  cfg.audio.validate();
  const auto manifest = corpus::CorpusManifest::load(a.manifest);
  corpus::IngestOptions opts;
  opts.seed = cfg.seed;
  opts.valid_count = cfg.valid_count;
  opts.test_count = cfg.test_count;
  opts.max_duration_residual = cfg.max_duration_residual;
  const fs::path lex_path =
      a.lexicon.empty() ? fs::path(a.manifest).parent_path() / "lexicon.txt" : fs::path(a.lexicon);
  if (!a.lexicon.empty() && !fs::exists(lex_path)) throw InvalidInput("lexicon not found: " + a.lexicon);
  const auto store = corpus::ingest(manifest, cfg.audio, opts);
  fs::create_directories(a.out);
  store.save(a.out);
  if (fs::exists(lex_path)) write_text(fs::path(a.out) / "lexicon.txt", frontend::Lexicon::load(lex_path.string()).to_text());

  const auto embedder = semantic::make_embedder(cfg.embedder);
  const auto pbes = compute_pbes(store, *embedder, int(cfg.model.semantic_context));
  fs::create_directories(fs::path(a.out) / "pbe");
  for (const auto& [id, m] : pbes) io::write_record((fs::path(a.out) / "pbe" / (id + ".rec")).string(), m);
  write_text(fs::path(a.out) / "pbe" / "embedder.txt", embedder_signature(cfg));
  write_text(fs::path(a.out) / "prepare_config.txt", cfg.snapshot());
  const auto& sp = store.split();
  std::cout << "prepared " << store.utterances().size() << " utterances (train " << sp.train.size() << ", valid "
            << sp.valid.size() << ", test " << sp.test.size() << ") in " << a.out << "\n";
}

// ---- train ----

struct TrainArgs {
  std::string data, out;
  long long max_steps = -1;
  ConfigFlags cfg;
};

void run_train(const TrainArgs& a) {
  auto cfg = a.cfg.build();
  if (a.max_steps >= 0) cfg.apply({{"train.max_steps", std::to_string(a.max_steps)}}, "flag");
  if (!fs::is_directory(a.data)) throw InvalidInput("not a prepared corpus: " + a.data);
  const auto store = corpus::CorpusStore::load(a.data);
  const auto lexicon = load_lexicon_or_empty(fs::path(a.data) / "lexicon.txt");

  // Vocabulary: corpus inventory plus every lexicon symbol, so edits and
  // synthesis can use phonemes the recordings lack.
  std::set<std::string> phones(store.stats().phones.begin(), store.stats().phones.end());
  {
    std::istringstream lex(lexicon.to_text());
    std::string line;
    while (std::getline(lex, line)) {
      std::istringstream ls(line);
      std::string tok;
      ls >> tok;
      while (ls >> tok) phones.insert(tok);
    }
    if (!lexicon.boundary().empty()) phones.insert(lexicon.boundary());
  }
  auto& m = cfg.model;
  m.phones.assign(phones.begin(), phones.end());
  const auto& st = store.stats();
  m.pitch_mean = st.pitch_mean;
  m.pitch_std = st.pitch_std;
  m.energy_mean = st.energy_mean;
  m.energy_std = st.energy_std;
  m.energy_min = st.energy_min;
  m.energy_max = st.energy_max;
  for (const char* k : {"model.phones", "model.pitch_mean", "model.pitch_std", "model.energy_mean",
                        "model.energy_std", "model.energy_min", "model.energy_max"}) {
    cfg.provenance[k] = "corpus:" + a.data;
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  if (!store.utterances().empty() && store.utterances().front().mel.cols() != m.mel_bins) {
    throw InvalidConfig("corpus mel width differs from model.mel_bins");
  }
  if (store.split().train.empty()) throw InvalidInput("training split is empty");

  fs::create_directories(a.out);
  RunLock lock(fs::path(a.out) / "train.lock");

  trainer::TrainData data;
  const context::PhoneVocab vocab(m.phones);
  const int L = int(m.semantic_context);
  data.train = trainer::build_examples(store, store.split().train, vocab, cfg.train, L);
  data.valid = trainer::build_examples(store, store.split().valid, vocab, cfg.train, L);
  const fs::path cache = fs::path(a.data) / "pbe";
  if (fs::exists(cache / "embedder.txt") && io::read_file((cache / "embedder.txt").string()) == embedder_signature(cfg)) {
    for (const auto& u : store.utterances()) {
      data.pbes[u.utterance_id] = io::read_record((cache / (u.utterance_id + ".rec")).string());
    }
  } else {
    data.pbes = compute_pbes(store, *semantic::make_embedder(cfg.embedder), L);
  }

  write_text(fs::path(a.out) / "config.txt", cfg.snapshot());
  write_text(fs::path(a.out) / "lexicon.txt", lexicon.to_text());
  model::AcousticModel<float> model(m);
  const auto summary = trainer::train_to_dir(model, data, cfg.train, a.out);
  std::cout << "trained " << summary.steps << " steps (" << summary.skipped << " skipped) into " << a.out << "\n";
}

// ---- synth / edit ----

struct ModelArgs {
  std::string run, ckpt, lexicon;
  ConfigFlags cfg;

  void attach(CLI::App* app) {
    app->add_option("--run", run, "Training run directory")->required();
    app->add_option("--ckpt", ckpt, "Checkpoint (default: <run>/latest.ckpt)");
    app->add_option("--lexicon", lexicon, "Lexicon (default: <run>/lexicon.txt)");
    cfg.attach(app);
  }
};

struct LoadedRun {
  config::RunConfig cfg;
  checkpoint::Loaded ckpt;
  std::unique_ptr<semantic::PairEmbedder> embedder;
  frontend::Lexicon lexicon;
};

LoadedRun load_run(const ModelArgs& a) {
  const fs::path run(a.run);
  if (!fs::exists(run / "config.txt")) throw InvalidInput("not a training run: " + a.run);
  LoadedRun r;
  r.cfg = a.cfg.build((run / "config.txt").string());
  r.ckpt = checkpoint::load(a.ckpt.empty() ? (run / "latest.ckpt").string() : a.ckpt);
  r.embedder = semantic::make_embedder(r.cfg.embedder);
  const fs::path lex = a.lexicon.empty() ? run / "lexicon.txt" : fs::path(a.lexicon);
  if (!fs::exists(lex)) throw InvalidInput("lexicon not found: " + lex.string());
  r.lexicon = frontend::Lexicon::load(lex.string());
  return r;
}

void write_outputs(const fs::path& dir, const std::string& id, const MatF& mel, const std::vector<float>& f0,
                   const config::RunConfig& cfg, bool wav) {
  io::write_record((dir / (id + ".mel")).string(), mel);
  io::write_record((dir / (id + ".f0")).string(), column_record(f0));
  if (wav) {
    audio::write_wav((dir / (id + ".wav")).string(),
                     vocoder::mel_to_wave(mel, cfg.audio, cfg.synth.griffin_lim_iters, cfg.synth.vocoder_seed));
  }
}

struct SynthArgs {
  ModelArgs model;
  std::string text, mode = "prev", out, data;
  bool no_wav = false;
};

void run_synth(const SynthArgs& a) {
  auto run = load_run(a.model);
  const auto mode = synth::parse_mode(a.mode);
  if (mode == synth::Mode::kEdit) throw InvalidRequest("use the edit command for edits");
  std::ifstream in(a.text);
  if (!in) throw InvalidInput("cannot read text file: " + a.text);
  std::optional<corpus::CorpusStore> store;
  std::vector<synth::ParagraphLine> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    synth::ParagraphLine pl;
    if (line[0] == '@') {
      if (a.data.empty()) throw InvalidRequest("line '" + line + "' refers to a recording; pass --data");
      if (!store) store = corpus::CorpusStore::load(a.data);
      const auto& u = store->get(line.substr(1));
      pl.id = u.utterance_id;
      pl.text = u.text;
      pl.speech = u;
    } else {
      pl.id = "line" + std::to_string(lines.size());
      pl.text = line;
    }
    lines.push_back(std::move(pl));
  }
  if (lines.empty()) throw InvalidInput("no sentences in " + a.text);

  synth::SynthOptions opts{run.cfg.train.acoustic_context, run.cfg.train.max_frames, run.cfg.synth.edit_margin};
  const synth::Synthesizer synthesizer(*run.ckpt.model, *run.embedder, run.lexicon, opts);
  const auto results = synthesizer.read_paragraph(lines, mode);
  fs::create_directories(a.out);
  for (const auto& r : results) {
    write_outputs(a.out, r.id, r.mel, r.f0, run.cfg, !a.no_wav);
    std::cout << r.id << ": " << r.mel.rows() << " frames\n";
  }
}

struct EditArgs {
  ModelArgs model;
  std::string data, utt, span, replace, out;
  bool no_wav = false;
};

context::Span parse_span(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument("colon");
    std::size_t used = 0;
    const auto a = std::stoul(s.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument("begin");
    const auto b = std::stoul(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument("end");
    return {a, b};
  } catch (const std::logic_error&) {
    throw InvalidRequest("--span expects FIRST:LAST word indices, got '" + s + "'");
  }
}

void run_edit(const EditArgs& a) {
  auto run = load_run(a.model);
  const auto store = corpus::CorpusStore::load(a.data);
  if (!store.contains(a.utt)) throw InvalidRequest("unknown utterance " + a.utt);
  synth::EditRequest req;
  req.base = store.get(a.utt);
  for (const auto* u : store.paragraph(req.base.paragraph_id)) {
    if (u->utterance_id == a.utt) req.base_index = req.paragraph.size();
    req.paragraph.push_back(*u);
  }
  req.words = parse_span(a.span);
  req.replacement = a.replace;
  synth::SynthOptions opts{run.cfg.train.acoustic_context, run.cfg.train.max_frames, run.cfg.synth.edit_margin};
  const synth::Synthesizer synthesizer(*run.ckpt.model, *run.embedder, run.lexicon, opts);
  const auto res = synthesizer.edit(req);
  fs::create_directories(a.out);
  const std::string id = a.utt + "_edit";
  write_outputs(a.out, id, res.mel, res.f0, run.cfg, !a.no_wav);
  nlohmann::ordered_json j{{"utterance_id", a.utt},
                           {"text", res.text},
                           {"phonemes", res.phonemes},
                           {"durations", res.durations},
                           {"generated", {res.generated.begin, res.generated.end}},
                           {"band", {res.band.begin, res.band.end}},
                           {"unchanged", res.unchanged}};
  write_text(fs::path(a.out) / (id + ".json"), j.dump(2) + "\n");
  std::cout << id << ": " << req.base.frames() << " -> " << res.mel.rows() << " frames\n";
}

// ---- evaluate ----

struct EvalArgs {
  std::string pred, ref, f0_source = "auto", out;
  ConfigFlags cfg;
};

void run_evaluate(const EvalArgs& a) {
  const auto cfg = a.cfg.build();
  eval::PredF0Source src;
  if (a.f0_source == "auto") {
    src = eval::PredF0Source::kAuto;
  } else if (a.f0_source == "native") {
    src = eval::PredF0Source::kNative;
  } else if (a.f0_source == "wave") {
    src = eval::PredF0Source::kWave;
  } else {
    throw InvalidRequest("--f0-source must be auto, native or wave");
  }
  const auto report = eval::evaluate_dirs(a.pred, a.ref, src, cfg.audio);
  const auto text = report.to_json();
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
}

int dispatch(int argc, char** argv) {
  CLI::App app{"ctxtts: context-aware masked-reconstruction speech synthesis"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "Ingest a corpus manifest into a feature store");
  c_prep->add_option("--manifest", prep.manifest, "Manifest (JSON Lines)")->required();
  c_prep->add_option("--out", prep.out, "Output directory")->required();
  c_prep->add_option("--lexicon", prep.lexicon, "Lexicon (default: lexicon.txt beside the manifest)");
  prep.cfg.attach(c_prep);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the acoustic model");
  c_train->add_option("--data", tr.data, "Prepared corpus directory")->required();
  c_train->add_option("--out", tr.out, "Run directory")->required();
  c_train->add_option("--max-steps", tr.max_steps, "Override train.max_steps");
  tr.cfg.attach(c_train);

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth", "Synthesize a paragraph, one sentence per line");
  sy.model.attach(c_synth);
  c_synth->add_option("--text", sy.text, "Text file; '@<utterance_id>' lines use a recording")->required();
  c_synth->add_option("--mode", sy.mode, "full | prev | text");
  c_synth->add_option("--out", sy.out, "Output directory")->required();
  c_synth->add_option("--data", sy.data, "Prepared corpus for '@' lines");
  c_synth->add_flag("--no-wav", sy.no_wav, "Skip waveform output");

  EditArgs ed;
  auto* c_edit = app.add_subcommand("edit", "Replace, insert or delete words in a recorded utterance");
  ed.model.attach(c_edit);
  c_edit->add_option("--data", ed.data, "Prepared corpus directory")->required();
  c_edit->add_option("--utt", ed.utt, "Utterance id")->required();
  c_edit->add_option("--span", ed.span, "FIRST:LAST word indices to replace")->required();
  c_edit->add_option("--replace", ed.replace, "Replacement text (empty deletes)");
  c_edit->add_option("--out", ed.out, "Output directory")->required();
  c_edit->add_flag("--no-wav", ed.no_wav, "Skip waveform output");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Objective metrics of predictions against references");
  c_eval->add_option("--pred", ev.pred, "Directory of <id>.mel with <id>.f0 or <id>.wav")->required();
  c_eval->add_option("--ref", ev.ref, "Prepared corpus or directory of <id>.mel/<id>.f0")->required();
  c_eval->add_option("--f0-source", ev.f0_source, "auto | native | wave");
  c_eval->add_option("--out", ev.out, "Report path (default: stdout)");
  ev.cfg.attach(c_eval);

  std::string toy_out;
  toy::ToyCorpusOptions toy_opts;
  auto* c_toy = app.add_subcommand("make-toy-corpus", "Write a small synthetic corpus");
  c_toy->group("");
  c_toy->add_option("--out", toy_out, "Output directory")->required();
  c_toy->add_option("--seed", toy_opts.seed, "Generator seed");
  c_toy->add_option("--paragraphs", toy_opts.paragraphs, "Paragraph count");
  c_toy->add_option("--sentences", toy_opts.sentences, "Sentences per paragraph");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*c_prep) run_prepare(prep);
  if (*c_train) run_train(tr);
  if (*c_synth) run_synth(sy);
  if (*c_edit) run_edit(ed);
  if (*c_eval) run_evaluate(ev);
  if (*c_toy) {
    const auto n = toy::write_toy_corpus(toy_out, audio::AudioConfig{}, toy_opts);
    std::cout << "wrote " << n << " utterances to " << toy_out << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> copy = args;
  std::vector<char*> argv;
  for (auto& s : copy) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(copy.size()), argv.data());
}

}  // namespace ctxtts::cli
