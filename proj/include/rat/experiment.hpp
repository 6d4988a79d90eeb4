#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rat/config.hpp"
#include "rat/decoding.hpp"
#include "rat/tasks.hpp"

namespace rat {

// One relaxation setting of the grid. site is "none", "self", "cross" or
// "window"; "none" leaves the model config untouched.
struct RelaxSetting {
  std::string name = "baseline";
  std::string site = "none";
  RelaxationConfig relax;
};

struct LmSpec {
  double k = 0.1;
  std::vector<double> lambdas{0.05, 0.1, 0.15, 0.2};
  std::vector<std::string> corpora{"in_domain", "extended"};
};

struct DecodeSpec {
  std::size_t beam = 4;
  double eos_margin = 0.0;
  bool length_normalize = true;
};

struct SweepSpec {
  std::vector<std::string> sites;  // empty → self and cross, or window for images
  std::vector<double> self{0.0001, 0.001, 0.01, 0.05, 0.1};
  std::vector<double> cross{0.1, 0.15, 0.2, 0.25, 0.3};
  std::vector<double> window{0.005, 0.01, 0.05, 0.1, 0.15, 0.2};
  RelaxMode mode = RelaxMode::TrainOnly;
};

struct ExperimentSpec {
  std::string name = "experiment";
  TaskSpec task;
  ModelConfig model;
  WindowClassifierConfig classifier;
  TrainConfig train;
  std::vector<RelaxSetting> settings{RelaxSetting{}};
  std::optional<LmSpec> lm;
  DecodeSpec decode;
  SweepSpec sweep;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir;
  std::size_t eval_examples = 200;  // dev examples used for in-training accuracy
  bool save_checkpoints = false;

  bool image_task() const { return task.kind == TaskKind::WindowClassify; }
  // wer for sequence tasks, error_rate for images; lower is better for both.
  std::string primary_metric() const { return image_task() ? "error_rate" : "wer"; }
  void validate() const;
};

Json to_json(const RelaxSetting& s);
Json to_json(const ExperimentSpec& spec);
ExperimentSpec spec_from_json(const Json& j);
ExperimentSpec load_spec(const std::filesystem::path& path);

struct ResultRow {
  std::string setting;
  std::uint64_t seed = 0;
  std::string lm = "none";  // none | in_domain | extended
  double lambda = 0.0;      // λ selected on dev; 0 without LM
  std::string metric;
  double value = 0.0;
  std::string status = "ok";
  std::string error;
};

Json to_json(const ResultRow& r);
ResultRow result_row_from_json(const Json& j);
std::vector<ResultRow> read_results(const std::filesystem::path& path);

// Larger is better for bleu and accuracy; smaller for everything else.
bool higher_is_better(const std::string& metric);

ModelConfig apply_setting(ModelConfig config, const RelaxSetting& setting);
WindowClassifierConfig apply_setting(WindowClassifierConfig config, const RelaxSetting& setting);

struct CellOptions {
  const SequenceData* sequences = nullptr;  // shared data; regenerated when null
  const ImageTaskData* images = nullptr;
  bool with_lm = true;
  std::filesystem::path log_dir;  // metrics log and checkpoint; empty → none
};

// Trains one (setting, seed) cell and evaluates it on the test split. Rows
// come out per (LM option × metric); λ for each LM is picked on dev.
std::vector<ResultRow> run_cell(const ExperimentSpec& spec, const RelaxSetting& setting,
                                std::uint64_t seed, const CellOptions& options = {});

// Runs every (setting × seed) cell on `workers` threads. Writes
// results.jsonl, summary.jsonl, summary.md, spec.json and per-cell shards
// under out_dir. A failing cell yields one status "failed" row.
std::vector<ResultRow> run_experiment(const ExperimentSpec& spec,
                                      const std::filesystem::path& out_dir,
                                      std::size_t workers = 1);

struct IlmCell {
  std::string setting;
  std::string lm;
  double median_value = 0.0;
  double median_improvement = 0.0;
  std::vector<double> improvements;  // per seed, in seed order
};

// Improvement of each LM option over the no-LM decode of the same cell,
// sign-adjusted so positive is better. Throws if a cell lacks a row.
std::vector<IlmCell> ilm_suppression_report(const std::vector<ResultRow>& rows,
                                            const std::string& metric = "wer");
std::string format_ilm_report(const std::vector<IlmCell>& cells, const std::string& metric);

struct SweepPoint {
  std::string site;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

// Trains every γ of the grid ({0} added if absent) per site and seed without
// LM and writes gamma_sweep_<site>.csv (|grid| × |seeds| rows each).
std::vector<SweepPoint> gamma_sweep(const ExperimentSpec& spec,
                                    const std::filesystem::path& out_dir,
                                    std::size_t workers = 1);

// Default output directory: $RATN_OUTPUT_ROOT/<name>, else runs/<name>.
std::filesystem::path default_output_dir(const ExperimentSpec& spec);

}  // namespace rat
