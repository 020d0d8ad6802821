#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "models.hpp"
#include "trainer.hpp"

namespace csfda::eval {

// Argmax-match rate in percent; ties break to the lowest class index.
double accuracy(const Mat& scores, const std::vector<int>& labels);
double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels);

// H = 2 * A_s * A_t / (A_s + A_t); defined as 0 when both arguments are 0.
double harmonic_mean(double a_s, double a_t);

// ---- Unification metrics ---------------------------------------------------

// method -> setting -> score (percent). Every method must cover the same
// setting set; a missing cell is an error.
using ScoreTable = std::map<std::string, std::map<std::string, double>>;

struct UnificationRow {
  double h_all = 0.0;  // mean over settings
  double h_wrg = 0.0;  // max over settings of (best - score) / best, x100
  std::map<std::string, double> h_loso;  // omitted setting -> mean of rest
};

std::map<std::string, UnificationRow> unification_metrics(
    const ScoreTable& table);

// ---- Scenario evaluation ---------------------------------------------------

struct OpenSetOptions {
  // Reject as unknown when the max softmax probability falls below this.
  double threshold = 0.5;
};

// Scores keyed by record name. Keys per setting:
//   closed:      "closed"
//   generalized: "generalized" (= H) plus "generalized_source",
//                "generalized_target"
//   partial:     "partial"
//   open:        "open" (= known-class accuracy under rejection; the
//                paper's reported metric is unspecified, so the companions
//                "open_overall", "open_unknown_recall" and "open_hos" are
//                always emitted and labeled)
//   sf-oodg:     "sf-oodg" (= mean) plus "sf-oodg_variantK"
struct ScenarioScores {
  data::Setting setting = data::Setting::Closed;
  std::map<std::string, double> records;
  OpenSetOptions open_options;
};

ScenarioScores evaluate_scenario(const models::TargetModel& model,
                                 const data::Scenario& scenario,
                                 const OpenSetOptions& open = {});

// ---- Continual protocol ----------------------------------------------------

struct ContinualConfig {
  double test_ratio = 0.1;  // held-out split per domain
  std::uint64_t split_seed = 7;
  int hidden_width = 64;  // hidden layer of the freshly built source model
};

struct ContinualReport {
  std::vector<std::string> domain_names;
  // grid(step, domain): accuracy of the model after adaptation step `step`
  // (step 0 = the source-trained model) on the domain's test split.
  Mat grid;
  // Average accuracy drop per domain versus its first-seen step; the final
  // domain has no later steps (NaN).
  Vec drops;
};

// Trains on domains[0] (its train split, supervised), then adapts along the
// sequence; every intermediate model is evaluated on every domain's held-out
// test split. The same frozen encoder serves all adaptation steps.
ContinualReport continual_protocol(const std::vector<data::LabeledSet>& domains,
                                   const models::VilEncoder& enc,
                                   const train::AdaptationConfig& cfg,
                                   const ContinualConfig& protocol = {});

// ---- Pseudo-label dynamics -------------------------------------------------

struct DynamicsSeries {
  std::vector<double> pseudo_label_accuracy;  // one entry per epoch record
  std::vector<double> model_accuracy;
};

DynamicsSeries pseudo_label_dynamics(const train::RunHistory& history);

// ---- Results files ---------------------------------------------------------
//
// Versioned structured text: a header line, optional "meta<TAB>key<TAB>value"
// lines, then one "score<TAB>method<TAB>setting<TAB>value" record per line.

struct ResultsFile {
  std::map<std::string, std::string> metadata;
  ScoreTable scores;
};

std::string results_to_string(const ResultsFile& rf);
ResultsFile results_from_string(const std::string& text,
                                const std::string& origin = "<string>");
void save_results(const ResultsFile& rf, const std::string& path);
ResultsFile load_results(const std::string& path);
// Later files override earlier ones on method/setting collisions.
ResultsFile merge_results(const std::vector<ResultsFile>& files);

// Rendered unification table (one row per method) and its plot-ready CSV.
std::string render_unification_table(const ScoreTable& table);
std::string unification_csv(const ScoreTable& table);

}  // namespace csfda::eval
