#include "evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "objectives.hpp"
#include "rng.hpp"

namespace csfda::eval {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

int argmax_row(const Mat& scores, Eigen::Index i) {
  int best = 0;
  for (Eigen::Index c = 1; c < scores.cols(); ++c)
    if (scores(i, c) > scores(i, best)) best = static_cast<int>(c);
  return best;
}

}  // namespace

double accuracy(const Mat& scores, const std::vector<int>& labels) {
  require(static_cast<std::size_t>(scores.rows()) == labels.size(),
          "accuracy: prediction/label length mismatch");
  require(scores.rows() >= 1, "accuracy: empty input");
  int hits = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    hits += argmax_row(scores, i) == labels[static_cast<std::size_t>(i)];
  return 100.0 * hits / static_cast<double>(scores.rows());
}

double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels) {
  require(predictions.size() == labels.size(),
          "accuracy: prediction/label length mismatch");
  require(!predictions.empty(), "accuracy: empty input");
  int hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    hits += predictions[i] == labels[i];
  return 100.0 * hits / static_cast<double>(predictions.size());
}

double harmonic_mean(double a_s, double a_t) {
  require(a_s >= 0.0 && a_t >= 0.0 && a_s <= 100.0 && a_t <= 100.0,
          "harmonic_mean arguments must be percentages");
  if (a_s == 0.0 && a_t == 0.0) return 0.0;
  return 2.0 * a_s * a_t / (a_s + a_t);
}

std::map<std::string, UnificationRow> unification_metrics(
    const ScoreTable& table) {
  require(!table.empty(), "unification_metrics: empty table");

  // Settings are defined by the first method; every method must match.
  const auto& first = table.begin()->second;
  require(!first.empty(), "unification_metrics: no settings");
  for (const auto& [method, scores] : table) {
    require(scores.size() == first.size(),
            "method '" + method + "' is missing settings");
    for (const auto& [setting, score] : first)
      require(scores.count(setting) == 1,
              "method '" + method + "' is missing setting '" + setting + "'");
  }

  std::map<std::string, double> best;
  for (const auto& [setting, unused] : first) {
    double b = -std::numeric_limits<double>::infinity();
    for (const auto& [method, scores] : table)
      b = std::max(b, scores.at(setting));
    require(b > 0.0, "per-setting best must be positive for H_wrg");
    best[setting] = b;
  }

  std::map<std::string, UnificationRow> out;
  const auto count = static_cast<double>(first.size());
  for (const auto& [method, scores] : table) {
    UnificationRow row;
    double total = 0.0;
    for (const auto& [setting, score] : scores) {
      total += score;
      row.h_wrg = std::max(
          row.h_wrg, 100.0 * (best.at(setting) - score) / best.at(setting));
    }
    row.h_all = total / count;
    for (const auto& [omitted, score] : scores)
      row.h_loso[omitted] = (total - score) / (count - 1.0);
    out[method] = row;
  }
  return out;
}

namespace {

ScenarioScores evaluate_open(const models::TargetModel& model,
                             const data::Scenario& scenario,
                             const OpenSetOptions& open) {
  const auto& target = scenario.target();
  const Mat probs =
      obj::softmax_rows(model.logits(target.features).values);
  const int unknown = -1;
  int known_total = 0, known_hit = 0;
  int unknown_total = 0, unknown_rejected = 0;
  int overall_hit = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int label = target.labels[static_cast<std::size_t>(i)];
    const bool is_unknown = label >= scenario.known_classes;
    int pred = argmax_row(probs, i);
    if (probs(i, pred) < open.threshold) pred = unknown;
    if (is_unknown) {
      ++unknown_total;
      if (pred == unknown) {
        ++unknown_rejected;
        ++overall_hit;
      }
    } else {
      ++known_total;
      if (pred == label) {
        ++known_hit;
        ++overall_hit;
      }
    }
  }
  require(known_total > 0, "open-set evaluation without known-class samples");

  ScenarioScores s;
  s.setting = data::Setting::Open;
  s.open_options = open;
  const double known_acc = 100.0 * known_hit / known_total;
  const double unknown_recall =
      unknown_total ? 100.0 * unknown_rejected / unknown_total : 0.0;
  s.records["open"] = known_acc;
  s.records["open_overall"] =
      100.0 * overall_hit / static_cast<double>(probs.rows());
  s.records["open_unknown_recall"] = unknown_recall;
  s.records["open_hos"] = (known_acc == 0.0 && unknown_recall == 0.0)
                              ? 0.0
                              : harmonic_mean(known_acc, unknown_recall);
  return s;
}

}  // namespace

ScenarioScores evaluate_scenario(const models::TargetModel& model,
                                 const data::Scenario& scenario,
                                 const OpenSetOptions& open) {
  ScenarioScores s;
  s.setting = scenario.setting;
  s.open_options = open;
  switch (scenario.setting) {
    case data::Setting::Closed: {
      const auto& t = scenario.target();
      s.records["closed"] =
          accuracy(model.logits(t.features).values, t.labels);
      break;
    }
    case data::Setting::Partial: {
      const auto& t = scenario.target();
      s.records["partial"] =
          accuracy(model.logits(t.features).values, t.labels);
      break;
    }
    case data::Setting::Generalized: {
      require(scenario.source_test.has_value(),
              "generalized scenario lacks a source test split");
      const auto& st = *scenario.source_test;
      const auto& t = scenario.target();
      const double a_s =
          accuracy(model.logits(st.features).values, st.labels);
      const double a_t = accuracy(model.logits(t.features).values, t.labels);
      s.records["generalized_source"] = a_s;
      s.records["generalized_target"] = a_t;
      s.records["generalized"] = harmonic_mean(a_s, a_t);
      break;
    }
    case data::Setting::Open:
      return evaluate_open(model, scenario, open);
    case data::Setting::SfOodg: {
      double total = 0.0;
      for (std::size_t v = 0; v < scenario.targets.size(); ++v) {
        const auto& t = scenario.targets[v];
        const double acc =
            accuracy(model.logits(t.features).values, t.labels);
        s.records["sf-oodg_variant" + std::to_string(v)] = acc;
        total += acc;
      }
      s.records["sf-oodg"] =
          total / static_cast<double>(scenario.targets.size());
      break;
    }
  }
  return s;
}

ContinualReport continual_protocol(
    const std::vector<data::LabeledSet>& domains,
    const models::VilEncoder& enc, const train::AdaptationConfig& cfg,
    const ContinualConfig& protocol) {
  require(domains.size() >= 2, "continual protocol needs >= 2 domains");
  const auto K = domains.size();

  std::vector<data::LabeledSet> train_splits, test_splits;
  ContinualReport report;
  for (std::size_t k = 0; k < K; ++k) {
    auto [train_part, test_part] =
        data::split_set(domains[k], 1.0 - protocol.test_ratio,
                        derive_seed(protocol.split_seed, std::to_string(k)));
    train_splits.push_back(std::move(train_part));
    test_splits.push_back(std::move(test_part));
    report.domain_names.push_back(domains[k].domain.empty()
                                      ? "domain" + std::to_string(k)
                                      : domains[k].domain);
  }

  report.grid = Mat(K, K);
  auto evaluate_row = [&](std::size_t step, const models::TargetModel& m) {
    for (std::size_t d = 0; d < K; ++d)
      report.grid(static_cast<Eigen::Index>(step),
                  static_cast<Eigen::Index>(d)) =
          accuracy(m.logits(test_splits[d].features).values,
                   test_splits[d].labels);
  };

  models::TargetModel init = models::make_target_model(
      domains[0].dim(), protocol.hidden_width, enc.num_classes(), cfg.seed);
  models::TargetModel current =
      train::train_source(init, train_splits[0], cfg);
  evaluate_row(0, current);

  for (std::size_t step = 1; step < K; ++step) {
    train::AdaptationConfig step_cfg = cfg;
    step_cfg.seed = derive_seed(cfg.seed, "continual-" + std::to_string(step));
    const auto history =
        train::adapt(current, train_splits[step], enc, step_cfg);
    current = history.final_model;
    evaluate_row(step, current);
  }

  report.drops = Vec::Constant(static_cast<Eigen::Index>(K),
                               std::numeric_limits<double>::quiet_NaN());
  for (std::size_t d = 0; d + 1 < K; ++d) {
    const auto first_seen = static_cast<Eigen::Index>(d);
    double total = 0.0;
    int count = 0;
    for (std::size_t r = d + 1; r < K; ++r) {
      total += report.grid(first_seen, static_cast<Eigen::Index>(d)) -
               report.grid(static_cast<Eigen::Index>(r),
                           static_cast<Eigen::Index>(d));
      ++count;
    }
    report.drops[static_cast<Eigen::Index>(d)] = total / count;
  }
  return report;
}

DynamicsSeries pseudo_label_dynamics(const train::RunHistory& history) {
  require(!history.epochs.empty(), "history has no epoch records");
  DynamicsSeries out;
  for (const auto& rec : history.epochs) {
    out.pseudo_label_accuracy.push_back(rec.pseudo_label_accuracy);
    out.model_accuracy.push_back(rec.target_accuracy);
  }
  return out;
}

// ---- Results files ---------------------------------------------------------

namespace {

constexpr const char* kResultsMagic = "causal-sfda-results";
constexpr int kResultsVersion = 1;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == '\t') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string results_to_string(const ResultsFile& rf) {
  std::ostringstream out;
  out << kResultsMagic << "\tversion=" << kResultsVersion << '\n';
  for (const auto& [key, value] : rf.metadata)
    out << "meta\t" << key << '\t' << value << '\n';
  for (const auto& [method, scores] : rf.scores)
    for (const auto& [setting, score] : scores)
      out << "score\t" << method << '\t' << setting << '\t'
          << format_double(score) << '\n';
  return out.str();
}

ResultsFile results_from_string(const std::string& text,
                                const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw ValidationError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };

  if (!std::getline(in, line)) {
    line_no = 1;
    fail("empty results file");
  }
  ++line_no;
  {
    const auto fields = split_tabs(line);
    if (fields.size() < 2 || fields[0] != kResultsMagic)
      fail("not a results file (bad magic)");
    if (fields[1] != "version=" + std::to_string(kResultsVersion))
      fail("unsupported results version '" + fields[1] + "'");
  }

  ResultsFile rf;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields[0] == "meta") {
      if (fields.size() != 3) fail("meta line needs key and value");
      rf.metadata[fields[1]] = fields[2];
    } else if (fields[0] == "score") {
      if (fields.size() != 4) fail("score line needs method, setting, value");
      try {
        std::size_t used = 0;
        const double v = std::stod(fields[3], &used);
        if (used != fields[3].size()) throw std::invalid_argument("trailing");
        rf.scores[fields[1]][fields[2]] = v;
      } catch (const std::exception&) {
        fail("bad score value '" + fields[3] + "'");
      }
    } else {
      fail("unknown record type '" + fields[0] + "'");
    }
  }
  if (rf.scores.empty()) fail("results file has no score records");
  return rf;
}

void save_results(const ResultsFile& rf, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  out << results_to_string(rf);
  if (!out) throw RuntimeError("short write to '" + path + "'");
}

ResultsFile load_results(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("results file '" + path + "' does not exist");
  std::ostringstream buf;
  buf << in.rdbuf();
  return results_from_string(buf.str(), path);
}

ResultsFile merge_results(const std::vector<ResultsFile>& files) {
  require(!files.empty(), "nothing to merge");
  ResultsFile out;
  for (const auto& rf : files) {
    for (const auto& [k, v] : rf.metadata) out.metadata[k] = v;
    for (const auto& [method, scores] : rf.scores)
      for (const auto& [setting, score] : scores)
        out.scores[method][setting] = score;
  }
  return out;
}

std::string render_unification_table(const ScoreTable& table) {
  const auto metrics = unification_metrics(table);
  const auto& settings = table.begin()->second;

  std::ostringstream out;
  out << "method";
  for (const auto& [setting, unused] : settings) out << '\t' << setting;
  out << "\tH_all\tH_wrg";
  for (const auto& [setting, unused] : settings)
    out << "\tH_loso(w/o " << setting << ')';
  out << '\n';

  for (const auto& [method, scores] : table) {
    const auto& row = metrics.at(method);
    out << method;
    for (const auto& [setting, score] : scores)
      out << '\t' << format_score(score);
    out << '\t' << format_score(row.h_all);
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", row.h_wrg);
      out << '\t' << buf;
    }
    for (const auto& [setting, loso] : row.h_loso)
      out << '\t' << format_score(loso);
    out << '\n';
  }
  return out.str();
}

std::string unification_csv(const ScoreTable& table) {
  const auto metrics = unification_metrics(table);
  std::ostringstream out;
  out << "method,metric,setting,value\n";
  for (const auto& [method, scores] : table) {
    for (const auto& [setting, score] : scores)
      out << method << ",score," << setting << ',' << format_double(score)
          << '\n';
    const auto& row = metrics.at(method);
    out << method << ",H_all,," << format_double(row.h_all) << '\n';
    out << method << ",H_wrg,," << format_double(row.h_wrg) << '\n';
    for (const auto& [setting, loso] : row.h_loso)
      out << method << ",H_loso," << setting << ',' << format_double(loso)
          << '\n';
  }
  return out.str();
}

}  // namespace csfda::eval
