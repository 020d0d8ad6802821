#include "causalsfda.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "core/common.hpp"
#include "core/config.hpp"
#include "core/driver.hpp"
#include "core/evaluation.hpp"
#include "core/mi_oracle.hpp"
#include "core/verify.hpp"

namespace {

thread_local std::string g_last_error = "no error";

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// Every API entry funnels through here: exceptions become status codes and
// the thread-local message.
template <typename Fn>
csf_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const csfda::ValidationError& e) {
    g_last_error = e.what();
    return CSF_ERROR_INVALID;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return CSF_ERROR_INVALID;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CSF_ERROR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return CSF_ERROR_RUNTIME;
  }
}

csf_status require_arg(bool ok, const char* message) {
  if (ok) return CSF_OK;
  g_last_error = message;
  return CSF_ERROR_INVALID;
}

}  // namespace

struct csf_results {
  csfda::eval::ResultsFile file;
};

extern "C" {

const char* csf_last_error(void) { return g_last_error.c_str(); }

const char* csf_version(void) { return "causalsfda 1.0.0"; }

void csf_string_free(char* s) { delete[] s; }

csf_status csf_entropy(const double* probs, size_t n, double* out_nats) {
  if (auto st = require_arg(probs && out_nats && n > 0,
                            "csf_entropy: null argument or empty input"))
    return st;
  return guarded([&] {
    csfda::Vec p(static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) p[static_cast<Eigen::Index>(i)] = probs[i];
    *out_nats = csfda::mi::entropy(csfda::mi::DiscreteDist{p});
    return CSF_OK;
  });
}

csf_status csf_mutual_information(const double* joint_row_major, size_t rows,
                                  size_t cols, double* out_nats) {
  if (auto st = require_arg(joint_row_major && out_nats && rows > 0 && cols > 0,
                            "csf_mutual_information: null or empty input"))
    return st;
  return guarded([&] {
    csfda::Mat table(static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
    for (size_t a = 0; a < rows; ++a)
      for (size_t b = 0; b < cols; ++b)
        table(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            joint_row_major[a * cols + b];
    *out_nats =
        csfda::mi::mutual_information(csfda::mi::DiscreteJoint{table});
    return CSF_OK;
  });
}

namespace {

csf_status run_sweep(bool lemma, uint64_t seed, int32_t trials,
                     const char* dump_csv, csf_sweep_summary* out) {
  if (auto st = require_arg(out != nullptr, "sweep: null output"))
    return st;
  return guarded([&]() -> csf_status {
    csfda::verify::VerifyOptions opts;
    if (seed != 0) opts.seed = seed;
    const int n = trials > 0 ? trials : 1000;
    const auto report = lemma ? csfda::mi::lemma1_sweep(opts.seed, n)
                              : csfda::mi::theorem1_sweep(opts.seed, n);
    if (dump_csv && *dump_csv) {
      std::ofstream file(dump_csv, std::ios::binary);
      if (!file)
        throw csfda::RuntimeError(std::string("cannot open '") + dump_csv +
                                  "' for writing");
      file << "trial,lhs_nats,rhs_nats,holds\n";
      int t = 0;
      for (const auto& trial : report.trials) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%d\n", t, trial.lhs,
                      trial.rhs, trial.holds ? 1 : 0);
        file << buf;
        ++t;
      }
    }
    out->trials = report.total();
    out->passed = report.passed;
    if (!report.all_passed()) {
      g_last_error = lemma ? "lemma 1 sweep has failing trials"
                           : "theorem 1 sweep has failing trials";
      return CSF_ERROR_VERIFY;
    }
    return CSF_OK;
  });
}

}  // namespace

csf_status csf_lemma1_sweep(uint64_t seed, int32_t trials,
                            const char* dump_csv_or_null,
                            csf_sweep_summary* out) {
  return run_sweep(true, seed, trials, dump_csv_or_null, out);
}

csf_status csf_theorem1_sweep(uint64_t seed, int32_t trials,
                              const char* dump_csv_or_null,
                              csf_sweep_summary* out) {
  return run_sweep(false, seed, trials, dump_csv_or_null, out);
}

csf_status csf_verify(const csf_verify_options* opts_or_null,
                      char** out_report, int32_t* out_all_passed) {
  return guarded([&]() -> csf_status {
    csfda::verify::VerifyOptions opts;
    if (opts_or_null) {
      if (opts_or_null->trials > 0) opts.trials = opts_or_null->trials;
      if (opts_or_null->grad_samples > 0)
        opts.grad_samples = opts_or_null->grad_samples;
      if (opts_or_null->seed != 0) opts.seed = opts_or_null->seed;
      opts.inject_vmi_grad_sign_flip =
          opts_or_null->inject_vmi_grad_sign_flip != 0;
      if (opts_or_null->dump_csv) opts.dump_csv_path = opts_or_null->dump_csv;
    }
    const auto report = csfda::verify::run_verification(opts);
    if (out_report) *out_report = dup_string(csfda::verify::render_report(report));
    if (out_all_passed) *out_all_passed = report.all_passed() ? 1 : 0;
    if (!report.all_passed()) {
      g_last_error = "verification found failing cases";
      return CSF_ERROR_VERIFY;
    }
    return CSF_OK;
  });
}

csf_status csf_synth_scenario(const csf_synth_options* opts,
                              const char* out_dir,
                              char** out_descriptor_path) {
  if (auto st = require_arg(opts && out_dir && *out_dir,
                            "csf_synth_scenario: null options or out_dir"))
    return st;
  return guarded([&]() -> csf_status {
    csfda::driver::SynthOptions s;
    if (opts->classes > 0) s.spec.classes = opts->classes;
    if (opts->ambient_dim > 0) s.spec.ambient_dim = opts->ambient_dim;
    if (opts->samples_per_class > 0)
      s.spec.samples_per_class = opts->samples_per_class;
    if (opts->radius > 0) s.spec.radius = opts->radius;
    if (opts->cluster_std > 0) s.spec.cluster_std = opts->cluster_std;
    if (!std::isnan(opts->rotation)) s.spec.rotation = opts->rotation;
    if (opts->scale != 0) s.spec.scale = opts->scale;
    if (!std::isnan(opts->noise)) s.spec.noise = opts->noise;
    if (opts->outlier_classes > 0)
      s.spec.outlier_classes = opts->outlier_classes;
    s.seed = opts->seed ? opts->seed : 2024;

    s.scenario.setting = csfda::data::setting_from_name(
        opts->setting && *opts->setting ? opts->setting : "closed");
    if (opts->source_train_ratio > 0)
      s.scenario.source_train_ratio = opts->source_train_ratio;
    if (opts->target_classes && *opts->target_classes) {
      std::string list(opts->target_classes);
      std::string cur;
      for (char ch : list + ",") {
        if (ch == ',') {
          if (!cur.empty()) s.scenario.target_classes.push_back(std::stoi(cur));
          cur.clear();
        } else {
          cur += ch;
        }
      }
    }
    // Open-set needs unknown classes in the target: the source keeps the
    // base classes, the outliers stay target-only.
    if (s.scenario.setting == csfda::data::Setting::Open) {
      if (s.spec.outlier_classes == 0) s.spec.outlier_classes = 2;
      for (int c = 0; c < s.spec.classes; ++c)
        s.scenario.source_classes.push_back(c);
    }

    const std::string path = csfda::driver::run_synth(s, out_dir);
    if (out_descriptor_path) *out_descriptor_path = dup_string(path);
    return CSF_OK;
  });
}

csf_status csf_run_adapt(const char* config_path, const char* out_dir_or_null,
                         const char* seed_override_or_null,
                         csf_adapt_summary* out_summary_or_null) {
  if (auto st = require_arg(config_path && *config_path,
                            "csf_run_adapt: null config path"))
    return st;
  return guarded([&]() -> csf_status {
    auto cfg = csfda::config::load_config(config_path);
    if (out_dir_or_null && *out_dir_or_null) cfg.out_dir = out_dir_or_null;
    if (seed_override_or_null && *seed_override_or_null) {
      cfg.seed = std::stoull(seed_override_or_null);
      cfg.adapt.seed = cfg.seed;
    }
    // The scenario path is relative to the config file's directory.
    if (!cfg.scenario_path.empty()) {
      const std::filesystem::path p(cfg.scenario_path);
      if (!p.is_absolute())
        cfg.scenario_path =
            (std::filesystem::path(config_path).parent_path() / p).string();
    }
    const auto outcome = csfda::driver::run_adapt(cfg);
    if (out_summary_or_null) {
      out_summary_or_null->final_target_accuracy =
          outcome.final_target_accuracy;
      out_summary_or_null->final_pseudo_label_accuracy =
          outcome.final_pseudo_accuracy;
      out_summary_or_null->wall_seconds = outcome.wall_seconds;
    }
    return CSF_OK;
  });
}

csf_status csf_evaluate_run(const char* run_dir, const char* method_name,
                            double open_threshold, const char* results_path) {
  if (auto st = require_arg(run_dir && *run_dir && results_path &&
                                *results_path,
                            "csf_evaluate_run: null run_dir or results_path"))
    return st;
  return guarded([&] {
    csfda::driver::EvalOptions opts;
    opts.run_dir = run_dir;
    if (method_name && *method_name) opts.method_name = method_name;
    opts.open_threshold = open_threshold;
    csfda::driver::run_eval(opts, results_path);
    return CSF_OK;
  });
}

csf_status csf_run_continual(const csf_continual_options* opts,
                             const char* csv_path_or_null, char** out_table) {
  if (auto st = require_arg(opts && opts->rotations && *opts->rotations,
                            "csf_run_continual: missing rotations"))
    return st;
  return guarded([&]() -> csf_status {
    csfda::driver::ContinualOptions c;
    {
      std::string cur;
      for (char ch : std::string(opts->rotations) + ",") {
        if (ch == ',') {
          if (!cur.empty()) c.rotations.push_back(std::stod(cur));
          cur.clear();
        } else {
          cur += ch;
        }
      }
    }
    if (opts->classes > 0) c.base.classes = opts->classes;
    if (opts->ambient_dim > 0) c.base.ambient_dim = opts->ambient_dim;
    if (opts->samples_per_class > 0)
      c.base.samples_per_class = opts->samples_per_class;
    if (opts->epochs > 0) c.adapt.epochs = opts->epochs;
    if (!std::isnan(opts->anchor_rotation))
      c.anchor_rotation = opts->anchor_rotation;
    if (opts->seed) c.seed = opts->seed;

    const auto report = csfda::driver::run_continual(c);
    if (out_table)
      *out_table = dup_string(csfda::driver::render_continual(report));
    if (csv_path_or_null && *csv_path_or_null) {
      std::ofstream csv(csv_path_or_null, std::ios::binary);
      if (!csv)
        throw csfda::RuntimeError(std::string("cannot open '") +
                                  csv_path_or_null + "' for writing");
      csv << csfda::driver::continual_csv(report);
    }
    return CSF_OK;
  });
}

csf_status csf_results_load(const char* path, csf_results** out) {
  if (auto st = require_arg(path && out, "csf_results_load: null argument"))
    return st;
  return guarded([&] {
    auto* handle = new csf_results{csfda::eval::load_results(path)};
    *out = handle;
    return CSF_OK;
  });
}

csf_status csf_results_merge_file(csf_results* results, const char* path) {
  if (auto st = require_arg(results && path,
                            "csf_results_merge_file: null argument"))
    return st;
  return guarded([&] {
    results->file = csfda::eval::merge_results(
        {results->file, csfda::eval::load_results(path)});
    return CSF_OK;
  });
}

csf_status csf_results_render_table(const csf_results* results,
                                    char** out_text) {
  if (auto st = require_arg(results && out_text,
                            "csf_results_render_table: null argument"))
    return st;
  return guarded([&] {
    *out_text =
        dup_string(csfda::eval::render_unification_table(results->file.scores));
    return CSF_OK;
  });
}

csf_status csf_results_unification_csv(const csf_results* results,
                                       char** out_csv) {
  if (auto st = require_arg(results && out_csv,
                            "csf_results_unification_csv: null argument"))
    return st;
  return guarded([&] {
    *out_csv = dup_string(csfda::eval::unification_csv(results->file.scores));
    return CSF_OK;
  });
}

csf_status csf_results_metric(const csf_results* results, const char* method,
                              const char* metric, double* out_value) {
  if (auto st = require_arg(results && method && metric && out_value,
                            "csf_results_metric: null argument"))
    return st;
  return guarded([&]() -> csf_status {
    const std::string m(metric);
    const auto& scores = results->file.scores;
    csfda::require(scores.count(method) == 1,
                   std::string("unknown method '") + method + "'");
    if (m.rfind("score:", 0) == 0) {
      const std::string setting = m.substr(6);
      csfda::require(scores.at(method).count(setting) == 1,
                     "unknown setting '" + setting + "'");
      *out_value = scores.at(method).at(setting);
      return CSF_OK;
    }
    const auto metrics = csfda::eval::unification_metrics(scores);
    const auto& row = metrics.at(method);
    if (m == "H_all") {
      *out_value = row.h_all;
    } else if (m == "H_wrg") {
      *out_value = row.h_wrg;
    } else if (m.rfind("H_loso:", 0) == 0) {
      const std::string setting = m.substr(7);
      csfda::require(row.h_loso.count(setting) == 1,
                     "unknown setting '" + setting + "'");
      *out_value = row.h_loso.at(setting);
    } else {
      throw csfda::ValidationError("unknown metric '" + m + "'");
    }
    return CSF_OK;
  });
}

void csf_results_free(csf_results* results) { delete results; }

}  // extern "C"
