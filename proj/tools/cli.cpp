// Copyright 2026 The fundus-qc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "httplib.h"

#include "fqc/checkpoint.hpp"
#include "fqc/errors.hpp"
#include "fqc/service.hpp"
#include "fqc/synth.hpp"
#include "fqc/trainer.hpp"
#include "fqc/triage.hpp"

namespace fqc::cli {
namespace {

std::optional<BandThresholds> parse_thresholds(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) return std::nullopt;
  try {
    std::size_t used_lo = 0, used_hi = 0;
    BandThresholds t{std::stod(text.substr(0, comma), &used_lo),
                     std::stod(text.substr(comma + 1), &used_hi)};
    if (used_lo != comma || used_hi != text.size() - comma - 1) return std::nullopt;
    t.validate();
    return t;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void add_thresholds(CLI::App* cmd, std::string& target) {
  cmd->add_option("--thresholds", target, "Band thresholds reject_below,accept_at_or_above")
      ->check([](const std::string& v) -> std::string {
        return parse_thresholds(v) ? "" : "expected lo,hi with lo < hi";
      });
}

BandThresholds thresholds_or_default(const std::string& text) {
  return text.empty() ? BandThresholds{} : *parse_thresholds(text);
}

ArchitectureSpec arch_named(const std::string& name) {
  if (name == "default") return build_default_arch();
  return build_reduced_arch(std::stoul(name.substr(name.find('-') + 1)));
}

std::string text_file(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return {bytes.begin(), bytes.end()};
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  write_file_bytes(p, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::filesystem::path manifest_root(const std::filesystem::path& manifest) {
  return manifest.has_parent_path() ? manifest.parent_path() : std::filesystem::path(".");
}

// ------------------------------------------------------------------ commands

struct GenerateArgs {
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::size_t total = 800;
  std::optional<std::size_t> accept, reject, ambiguous;
  std::size_t side = 256;
  double train_fraction = 0.5;
};

void generate(const GenerateArgs& a, std::ostream& out, std::ostream& err) {
  auto counts = default_class_counts(a.total);
  if (a.reject) counts.reject = *a.reject;
  if (a.ambiguous) counts.ambiguous = *a.ambiguous;
  if (counts.reject + counts.ambiguous > a.total && !a.accept) {
    throw ConfigError("reject and ambiguous counts exceed --total");
  }
  counts.accept = a.accept ? *a.accept : a.total - counts.reject - counts.ambiguous;
  SynthOptions o;
  o.side = a.side;
  auto m = build_synth_dataset(counts.accept, counts.reject, a.seed, a.out, o);
  m = make_ambiguous_variants(m, counts.ambiguous, a.seed, a.out, o);
  auto split = split_dataset(m, a.train_fraction, a.seed);
  for (const auto& w : split.warnings) err << "warning: " << w << "\n";
  save_manifest(split.manifest, a.out / "manifest.json");
  std::size_t train = 0, test = 0;
  for (const auto& e : split.manifest.entries) {
    train += e.split == Split::kTrain;
    test += e.split == Split::kTest;
  }
  out << nlohmann::json{{"manifest", (a.out / "manifest.json").string()},
                        {"accept", counts.accept},
                        {"reject", counts.reject},
                        {"ambiguous", counts.ambiguous},
                        {"train", train},
                        {"test", test}}
             .dump()
      << "\n";
}

struct TrainArgs {
  std::filesystem::path manifest, out, resume;
  std::string arch = "default";
  TrainConfig cfg;
  bool no_shuffle = false;
};

void train_cmd(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = a.cfg;
  cfg.shuffle_each_epoch = !a.no_shuffle;
  cfg.validate();
  TrainOptions options;
  options.out_dir = a.out;
  ArchitectureSpec arch = arch_named(a.arch);
  if (!a.resume.empty()) {
    options.resume = load_checkpoint(a.resume);
    arch = options.resume->arch;
    if (std::filesystem::exists(a.out / "history.jsonl")) {
      options.prior_history = parse_history_jsonl(text_file(a.out / "history.jsonl"));
    }
  }
  const auto manifest = load_manifest(a.manifest);
  const auto examples =
      load_examples(manifest, manifest_root(a.manifest), Split::kTrain, arch.input.height);
  options.on_epoch = [&](const EpochRecord& r) { out << to_json(r).dump() << "\n" << std::flush; };
  train(arch, examples, cfg, options);
  out << nlohmann::json{{"checkpoint", (a.out / checkpoint_name(cfg.epochs)).string()}}.dump()
      << "\n";
}

struct EvalArgs {
  std::filesystem::path manifest, model, out, roc;
  std::string thresholds, split = "test";
};

void eval_cmd(const EvalArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint(a.model);
  const auto manifest = load_manifest(a.manifest);
  std::optional<Split> split;
  if (a.split != "all") split = parse_split(a.split);
  const auto examples =
      load_examples(manifest, manifest_root(a.manifest), split, ck.arch.input.height, true);
  const auto scores = score_examples(ck.arch, ck.params, examples);
  const auto report = eval_report(scores, examples.consensus, thresholds_or_default(a.thresholds));
  write_text(a.out, to_json(report).dump(2) + "\n");
  if (!a.roc.empty()) write_text(a.roc, roc_csv(report.roc_points));
  nlohmann::json means = nlohmann::json::object();
  for (const auto& [name, s] : report.categories) means[name] = s.mean;
  out << nlohmann::json{{"auc", report.auc}, {"accuracy", report.accuracy}, {"means", means}}.dump()
      << "\n";
}

struct InferArgs {
  std::filesystem::path model, image;
  std::string thresholds;
  bool no_recapture_on_ambiguous = false;
};

void infer_cmd(const InferArgs& a, std::ostream& out) {
  const auto model_bytes = read_file_bytes(a.model);
  const auto ck = decode_checkpoint(model_bytes);
  const auto r = score_image_bytes(read_file_bytes(a.image), ck, sha256_hex(model_bytes),
                                   thresholds_or_default(a.thresholds),
                                   !a.no_recapture_on_ambiguous);
  out << to_json(r).dump() << "\n";
}

struct ServeArgs {
  std::filesystem::path data_dir;
  std::string host = "0.0.0.0";
  int port = 8080;
  std::string thresholds;
  bool no_recapture_on_ambiguous = false;
};

void serve_cmd(const ServeArgs& a, std::ostream& out) {
  if (a.data_dir.empty()) throw ConfigError("no data directory: pass --data-dir or set FQC_DATA_DIR");
  QcService service(
      {a.data_dir, thresholds_or_default(a.thresholds), !a.no_recapture_on_ambiguous});
  httplib::Server server;
  service.mount(server);
  if (std::filesystem::is_directory(a.data_dir / "ui")) {
    server.set_mount_point("/ui", (a.data_dir / "ui").string());
  }
  if (!server.bind_to_port(a.host, a.port)) {
    throw Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  }
  out << "listening on " << a.host << ":" << a.port << "\n" << std::flush;
  server.listen_after_bind();
}

struct ExportArgs {
  std::filesystem::path data_dir, manifest, grades, out;
};

void export_cmd(const ExportArgs& a, std::ostream& out, std::ostream& err) {
  const auto manifest_path = a.manifest.empty() ? a.data_dir / "manifest.json" : a.manifest;
  const auto grades_path = a.grades.empty() ? a.data_dir / "grades.jsonl" : a.grades;
  auto m = load_manifest(manifest_path);
  std::vector<GradeRecord> all;
  for (const auto& e : m.entries) all.insert(all.end(), e.grades.begin(), e.grades.end());
  const auto stored = GradeStore(grades_path).load();
  all.insert(all.end(), stored.begin(), stored.end());
  for (const auto& g : stored) {
    if (!m.find(g.image_id)) throw ConsistencyError("grade for unknown image " + g.image_id);
  }
  m.apply_grades(all);
  // New disagreement can make a training image ambiguous; it moves to test.
  for (auto& entry : m.entries) {
    if (entry.consensus == Consensus::kAmbiguous && entry.split == Split::kTrain) {
      entry.split = Split::kTest;
      err << "warning: " << entry.image_id << " is now ambiguous and moves to the test split\n";
    }
  }
  save_manifest(m, a.out);
  std::map<std::string, std::size_t> tally;
  for (const auto& e : m.entries) ++tally[to_string(e.consensus)];
  out << nlohmann::json{{"manifest", a.out.string()}, {"grades", all.size()}, {"consensus", tally}}
             .dump()
      << "\n";
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Fundus image quality triage", "fqc");
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset and its manifest");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("--total", gen.total, "Image count, split 96/4 accept/reject plus 2% ambiguous");
  g->add_option("--accept", gen.accept, "Override the accept count (default: the rest of --total)");
  g->add_option("--reject", gen.reject, "Override the reject count");
  g->add_option("--ambiguous", gen.ambiguous, "Override the ambiguous count");
  g->add_option("--side", gen.side, "Image side in pixels")->check(CLI::Range(32, 4096));
  g->add_option("--train-fraction", gen.train_fraction)->check(CLI::Range(0.0, 1.0));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on the manifest's train split");
  t->add_option("--manifest", tr.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Directory for epoch_<N>.fqc and history.jsonl")->required();
  t->add_option("--arch", tr.arch, "Architecture")
      ->check(CLI::IsMember({"default", "reduced-2", "reduced-4", "reduced-8"}));
  t->add_option("--seed", tr.cfg.seed, "Random seed");
  t->add_option("--epochs", tr.cfg.epochs);
  t->add_option("--lr-start", tr.cfg.lr_start);
  t->add_option("--lr-end", tr.cfg.lr_end);
  t->add_option("--batch-size", tr.cfg.batch_size);
  t->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "Epochs between checkpoints (0: last only)");
  t->add_flag("--no-shuffle", tr.no_shuffle, "Keep manifest order in every epoch");
  t->add_option("--resume", tr.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a split and write an evaluation report");
  e->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
  e->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Report JSON")->required();
  e->add_option("--roc", ev.roc, "Also write the ROC points as CSV");
  e->add_option("--split", ev.split)->check(CLI::IsMember({"test", "train", "all"}));
  add_thresholds(e, ev.thresholds);

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Score one image");
  i->add_option("--model", in.model)->required()->check(CLI::ExistingFile);
  i->add_option("--image", in.image)->required()->check(CLI::ExistingFile);
  i->add_flag("--no-recapture-on-ambiguous", in.no_recapture_on_ambiguous);
  add_thresholds(i, in.thresholds);

  ServeArgs sv;
  sv.data_dir = env_or("FQC_DATA_DIR", "");
  auto* s = app.add_subcommand("serve", "Run the HTTP service");
  s->add_option("--data-dir", sv.data_dir, "Defaults to $FQC_DATA_DIR");
  s->add_option("--host", sv.host);
  s->add_option("--port", sv.port, "Defaults to $FQC_PORT or 8080")->check(CLI::Range(0, 65535));
  s->add_flag("--no-recapture-on-ambiguous", sv.no_recapture_on_ambiguous);
  add_thresholds(s, sv.thresholds);

  ExportArgs ex;
  ex.data_dir = env_or("FQC_DATA_DIR", ".");
  auto* grades = app.add_subcommand("grades", "Grade store utilities");
  grades->require_subcommand(1);
  auto* x = grades->add_subcommand("export", "Write a manifest with the stored grades applied");
  x->add_option("--data-dir", ex.data_dir, "Defaults to $FQC_DATA_DIR");
  x->add_option("--manifest", ex.manifest, "Defaults to <data-dir>/manifest.json");
  x->add_option("--grades", ex.grades, "Defaults to <data-dir>/grades.jsonl");
  x->add_option("--out", ex.out)->required();

  std::vector<const char*> argv{"fqc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    const std::string port = env_or("FQC_PORT", "");
    if (!port.empty()) sv.port = std::stoi(port);
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) return app.exit(ex, out, err);
    // Help for the innermost subcommand that was recognized.
    const CLI::App* context = &app;
    while (!context->get_subcommands().empty()) context = context->get_subcommands().front();
    err << "error: " << ex.what() << "\n\n" << context->help();
    return 2;
  } catch (const std::invalid_argument&) {
    err << "FQC_PORT must be a number\n";
    return 2;
  }

  try {
    if (*g) generate(gen, out, err);
    if (*t) train_cmd(tr, out);
    if (*e) eval_cmd(ev, out);
    if (*i) infer_cmd(in, out);
    if (*s) serve_cmd(sv, out);
    if (*x) export_cmd(ex, out, err);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace fqc::cli
