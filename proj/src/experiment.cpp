#include "rat/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "rat/metrics.hpp"
#include "rat/model_io.hpp"

namespace rat {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Spec (de)serialization

namespace {

std::string default_setting_name(const RelaxSetting& s) {
  if (s.site == "none") return "baseline";
  std::ostringstream os;
  os << s.site << ':' << to_string(s.relax.mode) << ':' << s.relax.gamma0;
  if (s.relax.fuzzy) os << ":fuzzy" << s.relax.sigma2;
  return os.str();
}

RelaxSetting setting_from_json(const Json& j) {
  check_keys(j, {"name", "site", "gamma", "sigma2", "mode", "fuzzy"}, "relaxation setting");
  RelaxSetting s;
  s.site = j.value("site", std::string("none"));
  Json relax = Json::object();
  for (const char* key : {"gamma", "sigma2", "mode", "fuzzy"})
    if (j.contains(key)) relax[key] = j.at(key);
  s.relax = relaxation_from_json(relax);
  s.name = j.contains("name") ? j.at("name").get<std::string>() : default_setting_name(s);
  return s;
}

}  // namespace

Json to_json(const RelaxSetting& s) {
  Json j = to_json(s.relax);
  j["name"] = s.name;
  j["site"] = s.site;
  return j;
}

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
  if (settings.empty()) throw std::invalid_argument("experiment needs at least one setting");
  std::set<std::string> names;
  for (const auto& s : settings) {
    if (!names.insert(s.name).second)
      throw std::invalid_argument("duplicate setting name '" + s.name + "'");
    const bool ok = s.site == "none" || (image_task() ? s.site == "window"
                                                      : s.site == "self" || s.site == "cross");
    if (!ok)
      throw std::invalid_argument("site '" + s.site + "' does not apply to task " +
                                  to_string(task.kind));
    s.relax.validate();
  }
  if (lm) {
    if (image_task()) throw std::invalid_argument("language models do not apply to image tasks");
    if (lm->lambdas.empty()) throw std::invalid_argument("LM λ grid is empty");
    for (double l : lm->lambdas)
      if (!(l >= 0.0)) throw std::invalid_argument("LM weights must be non-negative");
    if (!(lm->k > 0.0)) throw std::invalid_argument("LM smoothing k must be positive");
    for (const auto& c : lm->corpora)
      if (c != "in_domain" && c != "extended")
        throw std::invalid_argument("unknown LM corpus '" + c + "'");
  }
  if (decode.beam < 1) throw std::invalid_argument("beam size must be at least 1");
  train.validate();
}

Json to_json(const ExperimentSpec& spec) {
  Json settings = Json::array();
  for (const auto& s : spec.settings) settings.push_back(to_json(s));
  Json lm = nullptr;
  if (spec.lm) lm = {{"k", spec.lm->k}, {"lambdas", spec.lm->lambdas}, {"corpora", spec.lm->corpora}};
  return {{"name", spec.name},
          {"task", to_json(spec.task)},
          {"model", to_json(spec.model)},
          {"classifier", to_json(spec.classifier)},
          {"train", to_json(spec.train)},
          {"settings", settings},
          {"lm", lm},
          {"decode",
           {{"beam", spec.decode.beam},
            {"eos_margin", spec.decode.eos_margin},
            {"length_normalize", spec.decode.length_normalize}}},
          {"sweep",
           {{"sites", spec.sweep.sites},
            {"self", spec.sweep.self},
            {"cross", spec.sweep.cross},
            {"window", spec.sweep.window},
            {"mode", to_string(spec.sweep.mode)}}},
          {"seeds", spec.seeds},
          {"output_dir", spec.output_dir},
          {"eval_examples", spec.eval_examples},
          {"save_checkpoints", spec.save_checkpoints}};
}

ExperimentSpec spec_from_json(const Json& j) {
  check_keys(j,
             {"name", "task", "model", "classifier", "train", "settings", "lm", "decode", "sweep",
              "seeds", "output_dir", "eval_examples", "save_checkpoints"},
             "experiment spec");
  ExperimentSpec spec;
  spec.name = j.value("name", spec.name);
  if (j.contains("task")) spec.task = task_spec_from_json(j.at("task"));
  if (j.contains("model")) spec.model = model_config_from_json(j.at("model"));
  if (j.contains("classifier")) spec.classifier = classifier_config_from_json(j.at("classifier"));
  if (j.contains("train")) spec.train = train_config_from_json(j.at("train"));
  if (j.contains("settings")) {
    spec.settings.clear();
    for (const auto& s : j.at("settings")) spec.settings.push_back(setting_from_json(s));
  }
  if (j.contains("lm") && !j.at("lm").is_null()) {
    const auto& l = j.at("lm");
    check_keys(l, {"k", "lambdas", "corpora"}, "lm");
    LmSpec lm;
    lm.k = l.value("k", lm.k);
    if (l.contains("lambdas")) lm.lambdas = l.at("lambdas").get<std::vector<double>>();
    if (l.contains("corpora")) lm.corpora = l.at("corpora").get<std::vector<std::string>>();
    spec.lm = lm;
  }
  if (j.contains("decode")) {
    const auto& d = j.at("decode");
    check_keys(d, {"beam", "eos_margin", "length_normalize"}, "decode");
    spec.decode.beam = d.value("beam", spec.decode.beam);
    spec.decode.eos_margin = d.value("eos_margin", spec.decode.eos_margin);
    spec.decode.length_normalize = d.value("length_normalize", spec.decode.length_normalize);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, {"sites", "self", "cross", "window", "mode"}, "sweep");
    if (s.contains("sites")) spec.sweep.sites = s.at("sites").get<std::vector<std::string>>();
    if (s.contains("self")) spec.sweep.self = s.at("self").get<std::vector<double>>();
    if (s.contains("cross")) spec.sweep.cross = s.at("cross").get<std::vector<double>>();
    if (s.contains("window")) spec.sweep.window = s.at("window").get<std::vector<double>>();
    if (s.contains("mode")) spec.sweep.mode = relax_mode_from_string(s.at("mode").get<std::string>());
  }
  if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  spec.output_dir = j.value("output_dir", spec.output_dir);
  spec.eval_examples = j.value("eval_examples", spec.eval_examples);
  spec.save_checkpoints = j.value("save_checkpoints", spec.save_checkpoints);
  spec.validate();
  return spec;
}

ExperimentSpec load_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read spec " + path.string());
  try {
    return spec_from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

fs::path default_output_dir(const ExperimentSpec& spec) {
  if (!spec.output_dir.empty()) return spec.output_dir;
  const char* root = std::getenv("RATN_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / spec.name;
}

// ---------------------------------------------------------------------------
// Result rows

Json to_json(const ResultRow& r) {
  Json j{{"setting", r.setting}, {"seed", r.seed},     {"lm", r.lm},
         {"lambda", r.lambda},   {"metric", r.metric}, {"value", r.value},
         {"split", "test"},      {"status", r.status}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

ResultRow result_row_from_json(const Json& j) {
  ResultRow r;
  r.setting = j.at("setting").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.lm = j.value("lm", r.lm);
  r.lambda = j.value("lambda", 0.0);
  r.metric = j.value("metric", std::string());
  r.value = j.value("value", 0.0);
  r.status = j.value("status", r.status);
  r.error = j.value("error", std::string());
  return r;
}

std::vector<ResultRow> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read results " + path.string());
  std::vector<ResultRow> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(result_row_from_json(Json::parse(line)));
  return rows;
}

bool higher_is_better(const std::string& metric) { return metric == "bleu" || metric == "accuracy"; }

ModelConfig apply_setting(ModelConfig config, const RelaxSetting& setting) {
  if (setting.site == "self") config.relax_self = setting.relax;
  else if (setting.site == "cross") config.relax_cross = setting.relax;
  else if (setting.site != "none")
    throw std::invalid_argument("site '" + setting.site + "' does not apply to sequence models");
  return config;
}

WindowClassifierConfig apply_setting(WindowClassifierConfig config, const RelaxSetting& setting) {
  if (setting.site == "window") config.relax = setting.relax;
  else if (setting.site != "none")
    throw std::invalid_argument("site '" + setting.site + "' does not apply to image models");
  return config;
}

// ---------------------------------------------------------------------------
// Cells

namespace {

std::vector<TokenSequence> decode_split(const Seq2Seq& model, const std::vector<EncoderOutput>& hs,
                                        const DecodeSpec& d, std::size_t max_len,
                                        const LmScorer* lm, double lambda) {
  BeamOptions opts;
  opts.beam = d.beam;
  opts.eos_margin = d.eos_margin;
  opts.length_normalize = d.length_normalize;
  opts.max_len = max_len;
  opts.lm = lm;
  opts.lambda = lambda;
  std::vector<TokenSequence> out;
  out.reserve(hs.size());
  for (const auto& h : hs) {
    auto best = beam_search(model, h, opts).front().tokens;
    if (!best.empty() && best.back() == kEos) best.pop_back();
    out.push_back(std::move(best));
  }
  return out;
}

std::vector<EncoderOutput> encode_split(const Seq2Seq& model, const std::vector<Example>& split) {
  NoGradGuard no_grad;
  RngStream unused(0, "eval");
  std::vector<EncoderOutput> hs;
  hs.reserve(split.size());
  for (const auto& ex : split) hs.push_back(model.encode(ex.source, unused, Phase::Eval));
  return hs;
}

std::vector<std::pair<std::string, double>> sequence_metrics(const std::vector<Example>& split,
                                                             const std::vector<TokenSequence>& hyps) {
  std::vector<TokenSequence> refs;
  for (const auto& ex : split) refs.push_back(ex.target);
  return {{"bleu", corpus_bleu(refs, hyps)}, {"wer", wer(refs, hyps)}};
}

std::ofstream open_log(const fs::path& dir, const std::string& stem) {
  if (dir.empty()) return {};
  fs::create_directories(dir);
  return std::ofstream(dir / (stem + ".metrics.jsonl"));
}

std::string cell_stem(const RelaxSetting& setting, std::uint64_t seed) {
  std::string s = setting.name;
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_') c = '_';
  return s + "__seed" + std::to_string(seed);
}

std::vector<ResultRow> run_sequence_cell(const ExperimentSpec& spec, const RelaxSetting& setting,
                                         std::uint64_t seed, const CellOptions& options) {
  std::optional<SequenceData> own;
  if (!options.sequences) own = make_sequence_data(spec.task);
  const SequenceData& data = options.sequences ? *options.sequences : *own;

  ModelConfig config = apply_setting(spec.model, setting);
  config.vocab_size = data.target_vocab;
  config.src_vocab_size = data.source_vocab == data.target_vocab ? 0 : data.source_vocab;
  const std::size_t decode_len = data.max_length + 2;
  config.max_len = std::max(config.max_len, decode_len);
  Seq2Seq model(config, seed);

  TrainConfig tc = spec.train;
  tc.seed = seed;
  const std::size_t n_eval = std::min(spec.eval_examples, data.dev.size());
  const std::span<const Example> eval_set(data.dev.data(), n_eval);
  const auto stem = cell_stem(setting, seed);
  auto log = open_log(options.log_dir, stem);
  train(model, data.train, eval_set, tc, log.is_open() ? &log : nullptr);
  if (spec.save_checkpoints && !options.log_dir.empty())
    checkpoint_save(model, options.log_dir / (stem + ".ratn"));

  const auto dev_h = encode_split(model, data.dev);
  const auto test_h = encode_split(model, data.test);

  std::vector<ResultRow> rows;
  auto emit = [&](const std::string& lm, double lambda, const std::vector<TokenSequence>& hyps) {
    for (const auto& [metric, value] : sequence_metrics(data.test, hyps))
      rows.push_back({setting.name, seed, lm, lambda, metric, value, "ok", ""});
  };
  emit("none", 0.0, decode_split(model, test_h, spec.decode, decode_len, nullptr, 0.0));

  if (spec.lm && options.with_lm) {
    auto lambdas = spec.lm->lambdas;
    std::sort(lambdas.begin(), lambdas.end());
    for (const auto& corpus : spec.lm->corpora) {
      const auto& text = corpus == "in_domain" ? data.in_domain_text : data.extended_text;
      const BigramLm lm = bigram_lm_train(text, data.target_vocab, spec.lm->k);
      double best_lambda = lambdas.front();
      double best_wer = std::numeric_limits<double>::infinity();
      for (double lambda : lambdas) {
        const auto hyps = decode_split(model, dev_h, spec.decode, decode_len, &lm, lambda);
        std::vector<TokenSequence> refs;
        for (const auto& ex : data.dev) refs.push_back(ex.target);
        const double w = wer(refs, hyps);
        if (w < best_wer) best_wer = w, best_lambda = lambda;
      }
      emit(corpus, best_lambda,
           decode_split(model, test_h, spec.decode, decode_len, &lm, best_lambda));
    }
  }
  return rows;
}

std::vector<ResultRow> run_image_cell(const ExperimentSpec& spec, const RelaxSetting& setting,
                                      std::uint64_t seed, const CellOptions& options) {
  std::optional<ImageTaskData> own;
  if (!options.images) own = make_image_data(spec.task);
  const ImageTaskData& data = options.images ? *options.images : *own;

  WindowClassifierConfig config = apply_setting(spec.classifier, setting);
  config.height = spec.task.height;
  config.width = spec.task.width;
  config.in_channels = spec.task.channels;
  config.classes = spec.task.classes;
  WindowClassifier model(config, seed);

  TrainConfig tc = spec.train;
  tc.seed = seed;
  const auto stem = cell_stem(setting, seed);
  auto log = open_log(options.log_dir, stem);
  train(model, data.train, data.dev, tc, log.is_open() ? &log : nullptr);
  if (spec.save_checkpoints && !options.log_dir.empty())
    checkpoint_save(model, options.log_dir / (stem + ".ratn"));

  const double acc = classification_accuracy(model, data.test);
  return {{setting.name, seed, "none", 0.0, "accuracy", acc, "ok", ""},
          {setting.name, seed, "none", 0.0, "error_rate", 1.0 - acc, "ok", ""}};
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

void write_rows(const fs::path& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rows) out << to_json(r).dump() << '\n';
}

bool row_less(const ResultRow& a, const ResultRow& b) {
  return std::tie(a.setting, a.seed, a.lm, a.metric) < std::tie(b.setting, b.seed, b.lm, b.metric);
}

}  // namespace

std::vector<ResultRow> run_cell(const ExperimentSpec& spec, const RelaxSetting& setting,
                                std::uint64_t seed, const CellOptions& options) {
  return spec.image_task() ? run_image_cell(spec, setting, seed, options)
                           : run_sequence_cell(spec, setting, seed, options);
}

std::vector<ResultRow> run_experiment(const ExperimentSpec& spec, const fs::path& out_dir,
                                      std::size_t workers) {
  spec.validate();
  fs::create_directories(out_dir / "shards");
  {
    std::ofstream out(out_dir / "spec.json");
    out << to_json(spec).dump(2) << '\n';
  }

  std::optional<SequenceData> seq;
  std::optional<ImageTaskData> img;
  if (spec.image_task()) img = make_image_data(spec.task);
  else seq = make_sequence_data(spec.task);
  CellOptions options;
  options.sequences = seq ? &*seq : nullptr;
  options.images = img ? &*img : nullptr;
  options.log_dir = out_dir / "cells";

  struct Cell {
    const RelaxSetting* setting;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& s : spec.settings)
    for (auto seed : spec.seeds) cells.push_back({&s, seed});

  std::vector<std::vector<ResultRow>> shards(cells.size());
  parallel_for(cells.size(), workers, [&](std::size_t i) {
    const auto& c = cells[i];
    try {
      shards[i] = run_cell(spec, *c.setting, c.seed, options);
    } catch (const std::exception& e) {
      ResultRow failed;
      failed.setting = c.setting->name;
      failed.seed = c.seed;
      failed.status = "failed";
      failed.error = e.what();
      shards[i] = {failed};
    }
    write_rows(out_dir / "shards" / (cell_stem(*c.setting, c.seed) + ".jsonl"), shards[i]);
  });

  std::vector<ResultRow> rows;
  for (auto& s : shards) rows.insert(rows.end(), s.begin(), s.end());
  std::sort(rows.begin(), rows.end(), row_less);
  write_rows(out_dir / "results.jsonl", rows);

  // Mean and sample standard deviation across seeds.
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : rows)
    if (r.status == "ok") groups[{r.setting, r.lm, r.metric}].push_back(r.value);
  std::ofstream summary(out_dir / "summary.jsonl");
  std::ofstream table(out_dir / "summary.md");
  table << "# " << spec.name << "\n\n"
        << "Test-split results, mean ± std over " << spec.seeds.size()
        << " seed(s). LM weights were selected on the dev split.\n\n"
        << "| setting | lm | metric | mean | std | n |\n|---|---|---|---|---|---|\n";
  for (const auto& [key, values] : groups) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    const auto& [setting, lm, metric] = key;
    summary << Json{{"setting", setting}, {"lm", lm}, {"metric", metric}, {"mean", mean},
                    {"std", sd}, {"n", values.size()}}.dump()
            << '\n';
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f | %.4f", mean, sd);
    table << "| " << setting << " | " << lm << " | " << metric << " | " << buf << " | "
          << values.size() << " |\n";
  }
  return rows;
}

// ---------------------------------------------------------------------------
// ILM report

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<IlmCell> ilm_suppression_report(const std::vector<ResultRow>& rows,
                                            const std::string& metric) {
  // setting → seed → lm → value
  std::map<std::string, std::map<std::uint64_t, std::map<std::string, double>>> table;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (r.status != "ok" || r.metric != metric) continue;
    if (!table.count(r.setting)) order.push_back(r.setting);
    table[r.setting][r.seed][r.lm] = r.value;
  }
  if (table.empty()) throw std::invalid_argument("no '" + metric + "' rows to report");
  const double sign = higher_is_better(metric) ? -1.0 : 1.0;

  std::vector<IlmCell> out;
  for (const auto& setting : order) {
    const auto& seeds = table.at(setting);
    for (const char* lm : {"none", "in_domain", "extended"}) {
      IlmCell cell{setting, lm, 0.0, 0.0, {}};
      std::vector<double> values;
      for (const auto& [seed, by_lm] : seeds) {
        const auto base = by_lm.find("none");
        const auto with = by_lm.find(lm);
        if (base == by_lm.end() || with == by_lm.end())
          throw std::invalid_argument("missing cell: setting '" + setting + "', seed " +
                                      std::to_string(seed) + ", lm " + lm);
        values.push_back(with->second);
        cell.improvements.push_back(sign * (base->second - with->second));
      }
      cell.median_value = median(values);
      cell.median_improvement = median(cell.improvements);
      out.push_back(std::move(cell));
    }
  }
  return out;
}

std::string format_ilm_report(const std::vector<IlmCell>& cells, const std::string& metric) {
  std::ostringstream os;
  os << "LM-induced improvement in " << metric << " (median over seeds; value, then improvement "
     << "over no LM)\n\n"
     << "| approach | no LM | in-domain LM | extended LM |\n|---|---|---|---|\n";
  std::string current;
  char buf[64];
  for (const auto& c : cells) {
    if (c.setting != current) {
      if (!current.empty()) os << "\n";
      current = c.setting;
      os << "| " << c.setting;
    }
    if (c.lm == "none") std::snprintf(buf, sizeof buf, " | %.4f", c.median_value);
    else std::snprintf(buf, sizeof buf, " | %.4f (%+.4f)", c.median_value, c.median_improvement);
    os << buf;
    if (c.lm == "extended") os << " |";
  }
  os << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// γ sweep

std::vector<SweepPoint> gamma_sweep(const ExperimentSpec& spec, const fs::path& out_dir,
                                    std::size_t workers) {
  spec.validate();
  auto sites = spec.sweep.sites;
  if (sites.empty()) sites = spec.image_task() ? std::vector<std::string>{"window"}
                                               : std::vector<std::string>{"self", "cross"};
  std::optional<SequenceData> seq;
  std::optional<ImageTaskData> img;
  if (spec.image_task()) img = make_image_data(spec.task);
  else seq = make_sequence_data(spec.task);
  CellOptions options;
  options.sequences = seq ? &*seq : nullptr;
  options.images = img ? &*img : nullptr;
  options.with_lm = false;

  struct Job {
    RelaxSetting setting;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& site : sites) {
    std::vector<double> grid = site == "self"    ? spec.sweep.self
                               : site == "cross" ? spec.sweep.cross
                               : site == "window"
                                   ? spec.sweep.window
                                   : throw std::invalid_argument("unknown sweep site '" + site + "'");
    grid.push_back(0.0);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (double g : grid)
      for (auto seed : spec.seeds) {
        RelaxSetting s;
        s.site = site;
        s.relax.gamma0 = g;
        s.relax.mode = spec.sweep.mode;
        s.name = default_setting_name(s);
        jobs.push_back({s, seed});
      }
  }

  const std::string metric = spec.primary_metric();
  std::vector<SweepPoint> points(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const auto rows = run_cell(spec, jobs[i].setting, jobs[i].seed, options);
    SweepPoint p{jobs[i].setting.site, jobs[i].setting.relax.gamma0, jobs[i].seed, metric, 0.0};
    for (const auto& r : rows)
      if (r.lm == "none" && r.metric == metric) p.value = r.value;
    points[i] = p;
  });

  fs::create_directories(out_dir);
  for (const auto& site : sites) {
    std::ofstream csv(out_dir / ("gamma_sweep_" + site + ".csv"));
    csv << "site,gamma,seed,metric,value\n";
    char buf[128];
    for (const auto& p : points) {
      if (p.site != site) continue;
      std::snprintf(buf, sizeof buf, "%s,%.17g,%llu,%s,%.17g\n", p.site.c_str(), p.gamma,
                    static_cast<unsigned long long>(p.seed), p.metric.c_str(), p.value);
      csv << buf;
    }
  }
  return points;
}

}  // namespace rat
