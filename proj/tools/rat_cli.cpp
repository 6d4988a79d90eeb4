// Command-line front end for training, decoding and running experiment specs.
#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "rat/experiment.hpp"
#include "rat/metrics.hpp"
#include "rat/model_io.hpp"

namespace fs = std::filesystem;
using namespace rat;

namespace {

struct Common {
  std::string spec;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t workers = 1;
};

ExperimentSpec load(const Common& c) {
  ExperimentSpec spec = load_spec(c.spec);
  if (c.seed_set) spec.seeds = {c.seed};
  return spec;
}

fs::path out_dir(const Common& c, const ExperimentSpec& spec) {
  return c.out.empty() ? default_output_dir(spec) : fs::path(c.out);
}

const RelaxSetting& pick_setting(const ExperimentSpec& spec, const std::string& name) {
  if (name.empty()) return spec.settings.front();
  for (const auto& s : spec.settings)
    if (s.name == name) return s;
  throw std::invalid_argument("no setting named '" + name + "' in spec");
}

const std::vector<Example>& pick_split(const SequenceData& d, const std::string& split) {
  if (split == "dev") return d.dev;
  if (split == "test") return d.test;
  if (split == "train") return d.train;
  throw std::invalid_argument("unknown split '" + split + "'");
}

int cmd_train(const Common& c, const std::string& setting_name) {
  const auto spec = load(c);
  const auto dir = out_dir(c, spec);
  fs::create_directories(dir);
  const auto& setting = pick_setting(spec, setting_name);
  const auto seed = spec.seeds.front();
  TrainConfig tc = spec.train;
  tc.seed = seed;
  std::ofstream log(dir / "metrics.jsonl");
  if (spec.image_task()) {
    const auto data = make_image_data(spec.task);
    auto cfg = apply_setting(spec.classifier, setting);
    cfg.height = spec.task.height;
    cfg.width = spec.task.width;
    cfg.in_channels = spec.task.channels;
    cfg.classes = spec.task.classes;
    WindowClassifier model(cfg, seed);
    const auto r = train(model, data.train, data.dev, tc, &log);
    checkpoint_save(model, dir / "model.ratn");
    std::cout << "dev accuracy " << r.final_eval_acc << " after " << r.steps_run << " steps\n";
  } else {
    const auto data = make_sequence_data(spec.task);
    auto cfg = apply_setting(spec.model, setting);
    cfg.vocab_size = data.target_vocab;
    cfg.src_vocab_size = data.source_vocab == data.target_vocab ? 0 : data.source_vocab;
    cfg.max_len = std::max(cfg.max_len, data.max_length + 2);
    Seq2Seq model(cfg, seed);
    const std::size_t n_eval = std::min(spec.eval_examples, data.dev.size());
    const auto r = train(model, data.train, std::span<const Example>(data.dev.data(), n_eval), tc, &log);
    checkpoint_save(model, dir / "model.ratn");
    std::cout << "dev sequence accuracy " << r.final_eval_acc << " after " << r.steps_run
              << " steps\n";
  }
  std::cout << "wrote " << (dir / "model.ratn").string() << "\n";
  return 0;
}

int cmd_decode(const Common& c, const std::string& checkpoint, const std::string& split,
               const std::string& lm_name, double lambda) {
  const auto spec = load(c);
  if (spec.image_task()) throw std::invalid_argument("decode applies to sequence tasks");
  const auto data = make_sequence_data(spec.task);
  const Seq2Seq model = checkpoint_load(checkpoint);
  std::optional<BigramLm> lm;
  if (lm_name != "none") {
    const double k = spec.lm ? spec.lm->k : LmSpec{}.k;
    lm = bigram_lm_train(lm_name == "extended" ? data.extended_text : data.in_domain_text,
                         data.target_vocab, k);
  }
  BeamOptions opts;
  opts.beam = spec.decode.beam;
  opts.eos_margin = spec.decode.eos_margin;
  opts.length_normalize = spec.decode.length_normalize;
  opts.max_len = std::min(model.config().max_len, data.max_length + 2);
  opts.lm = lm ? &*lm : nullptr;
  opts.lambda = lm ? lambda : 0.0;

  std::ofstream file;
  if (!c.out.empty()) file.open(c.out);
  std::ostream& out = c.out.empty() ? std::cout : file;
  RngStream unused(0, "decode");
  const auto& examples = pick_split(data, split);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    NoGradGuard no_grad;
    const auto h = model.encode(examples[i].source, unused, Phase::Eval);
    const auto best = beam_search(model, h, opts).front();
    out << decode_record(split + "-" + std::to_string(i), best, opts.lambda).dump() << '\n';
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& split) {
  const auto spec = load(c);
  const Json cfg_json = Json::parse(std::ifstream(config_sidecar(checkpoint)));
  const std::string hash = config_hash(cfg_json);
  std::ofstream file;
  if (!c.out.empty()) file.open(c.out);
  std::ostream& out = c.out.empty() ? std::cout : file;
  if (spec.image_task()) {
    const auto data = make_image_data(spec.task);
    const auto model = classifier_checkpoint_load(checkpoint);
    const auto& set = split == "dev" ? data.dev : split == "train" ? data.train : data.test;
    out << metric_report("accuracy", classification_accuracy(model, set), set.size(), hash).dump()
        << '\n';
    return 0;
  }
  const auto data = make_sequence_data(spec.task);
  const Seq2Seq model = checkpoint_load(checkpoint);
  const auto& examples = pick_split(data, split);
  std::vector<TokenSequence> sources, refs;
  for (const auto& ex : examples) {
    sources.push_back(ex.source);
    refs.push_back(ex.target);
  }
  auto hyps = greedy_decode_batch(model, sources, std::min(model.config().max_len, data.max_length + 2));
  for (auto& h : hyps)
    if (!h.empty() && h.back() == kEos) h.pop_back();
  out << metric_report("wer", wer(refs, hyps), refs.size(), hash).dump() << '\n';
  out << metric_report("bleu", corpus_bleu(refs, hyps), refs.size(), hash).dump() << '\n';
  return 0;
}

int cmd_experiment(const Common& c) {
  const auto spec = load(c);
  const auto dir = out_dir(c, spec);
  const auto rows = run_experiment(spec, dir, c.workers);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  std::cout << "wrote " << rows.size() << " rows to " << (dir / "results.jsonl").string();
  if (failed) std::cout << " (" << failed << " failed cells)";
  std::cout << "\n";
  std::ifstream summary(dir / "summary.md");
  std::cout << summary.rdbuf();
  return failed ? 1 : 0;
}

int cmd_sweep(const Common& c) {
  const auto spec = load(c);
  const auto dir = out_dir(c, spec);
  const auto points = gamma_sweep(spec, dir, c.workers);
  std::cout << "wrote " << points.size() << " sweep points under " << dir.string() << "\n";
  return 0;
}

int cmd_report(const std::string& results, const std::string& metric, const std::string& out) {
  const auto cells = ilm_suppression_report(read_results(results), metric);
  const auto text = format_ilm_report(cells, metric);
  if (out.empty()) std::cout << text;
  else std::ofstream(out) << text;
  return 0;
}

void add_common(CLI::App* app, Common& c, bool needs_spec = true) {
  auto* spec = app->add_option("--spec", c.spec, "Experiment spec (JSON)");
  if (needs_spec) spec->required()->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output path (defaults under $RATN_OUTPUT_ROOT)");
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "Override the seed list");
  app->add_option("--workers", c.workers, "Parallel worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relaxed-attention transformer toolkit"};
  app.require_subcommand(1);
  Common common;
  std::string setting, checkpoint, split = "test", lm = "none", metric = "wer", results;
  double lambda = 0.0;

  auto* train_cmd = app.add_subcommand("train", "Train one model from a spec");
  add_common(train_cmd, common);
  train_cmd->add_option("--setting", setting, "Setting name (default: first)");

  auto* decode_cmd = app.add_subcommand("decode", "Beam-search decode a split to JSON lines");
  add_common(decode_cmd, common);
  decode_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  decode_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  decode_cmd->add_option("--lm", lm)->check(CLI::IsMember({"none", "in_domain", "extended"}));
  decode_cmd->add_option("--lambda", lambda)->check(CLI::NonNegativeNumber);

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a split");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));

  auto* exp_cmd = app.add_subcommand("experiment", "Run every setting × seed cell of a spec");
  add_common(exp_cmd, common);

  auto* sweep_cmd = app.add_subcommand("sweep-gamma", "Sweep the relaxation coefficient");
  add_common(sweep_cmd, common);

  auto* report_cmd = app.add_subcommand("report-ilm", "Tabulate LM-induced improvements");
  report_cmd->add_option("--results", results, "results.jsonl")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--metric", metric);
  report_cmd->add_option("--out", common.out);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(common, setting);
    if (*decode_cmd) return cmd_decode(common, checkpoint, split, lm, lambda);
    if (*eval_cmd) return cmd_eval(common, checkpoint, split);
    if (*exp_cmd) return cmd_experiment(common);
    if (*sweep_cmd) return cmd_sweep(common);
    if (*report_cmd) return cmd_report(results, metric, common.out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
