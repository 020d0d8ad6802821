// Command-line front end for the causalsfda shared library. Everything here
// goes through the public C API in causalsfda.h; exit codes are 0 (success),
// 1 (runtime or verification failure) and 2 (input or configuration error).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "causalsfda.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int exit_code_for(csf_status status) {
  switch (status) {
    case CSF_OK:
      return kExitOk;
    case CSF_ERROR_INVALID:
      return kExitUsage;
    case CSF_ERROR_RUNTIME:
    case CSF_ERROR_VERIFY:
      return kExitRuntime;
  }
  return kExitRuntime;
}

int fail(csf_status status) {
  std::fprintf(stderr, "error: %s\n", csf_last_error());
  return exit_code_for(status);
}

struct OwnedString {
  char* value = nullptr;
  ~OwnedString() { csf_string_free(value); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causalsfda — source-free domain adaptation toolkit"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic scenario (manifests + descriptor)");
  std::string synth_out = "scenario";
  std::string synth_setting = "closed";
  std::string synth_target_classes;
  std::uint64_t synth_seed = 2024;
  int synth_classes = 5, synth_dim = 16, synth_samples = 100, synth_outliers = 0;
  double synth_rotation = 1.5707963267948966;
  double synth_scale = 1.0, synth_noise = 0.0, synth_radius = 1.0;
  double synth_cluster_std = 0.15, synth_ratio = 0.9;
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--setting", synth_setting,
                    "closed|open|partial|generalized|sf-oodg");
  synth->add_option("--seed", synth_seed, "Generation seed");
  synth->add_option("--classes", synth_classes, "Known class count");
  synth->add_option("--dim", synth_dim, "Ambient feature dimension");
  synth->add_option("--samples", synth_samples, "Samples per class");
  synth->add_option("--rotation", synth_rotation,
                    "Domain rotation in radians");
  synth->add_option("--scale", synth_scale, "Anisotropic in-plane scale");
  synth->add_option("--noise", synth_noise, "Additive noise level");
  synth->add_option("--radius", synth_radius, "Class circle radius");
  synth->add_option("--cluster-std", synth_cluster_std,
                    "Per-class Gaussian std");
  synth->add_option("--outlier-classes", synth_outliers,
                    "Unknown classes outside the circle (open-set)");
  synth->add_option("--target-classes", synth_target_classes,
                    "Comma-separated target class subset (partial-set)");
  synth->add_option("--train-ratio", synth_ratio,
                    "Source train fraction (generalized)");

  // ---- adapt ----
  auto* adapt = app.add_subcommand(
      "adapt", "Run source pre-training plus the adaptation loop");
  std::string adapt_config;
  std::string adapt_out;
  std::string adapt_seed;
  adapt->add_option("--config", adapt_config, "Run configuration file")
      ->required();
  adapt->add_option("--out", adapt_out, "Override the output run directory");
  adapt->add_option("--seed", adapt_seed, "Override the config seed");

  // ---- verify ----
  auto* verify = app.add_subcommand(
      "verify", "Run the information-inequality sweeps and gradient checks");
  int verify_trials = 1000;
  int verify_grad_samples = 50;
  std::uint64_t verify_seed = 0;
  std::string verify_dump;
  bool verify_flip = false;
  verify->add_option("--trials", verify_trials, "Sweep trials per suite");
  verify->add_option("--grad-samples", verify_grad_samples,
                     "Random inputs per gradient check");
  verify->add_option("--seed", verify_seed, "Sweep seed (0 = default)");
  verify->add_option("--dump", verify_dump, "Write per-trial lhs/rhs CSV");
  verify
      ->add_flag("--inject-vmi-grad-flip", verify_flip,
                 "Test hook: flip the VMI gradient (verification must fail)")
      ->group("");  // hidden

  // ---- eval ----
  auto* eval = app.add_subcommand(
      "eval", "Evaluate a run directory under its scenario protocol");
  std::string eval_run, eval_results = "results.txt", eval_method = "CausalDA";
  double eval_threshold = 0.5;
  eval->add_option("--run", eval_run, "Run directory from adapt")->required();
  eval->add_option("--results", eval_results, "Results file to merge into");
  eval->add_option("--method", eval_method, "Method name for the records");
  eval->add_option("--open-threshold", eval_threshold,
                   "Unknown-rejection probability threshold");

  // ---- continual ----
  auto* continual = app.add_subcommand(
      "continual", "Sequence protocol over synthetic domains");
  std::string cont_rotations = "0,0.26,0.52,0.79";
  std::string cont_csv;
  int cont_samples = 100, cont_epochs = 15, cont_classes = 5;
  std::uint64_t cont_seed = 2024;
  double cont_anchor = std::nan("");
  continual->add_option("--rotations", cont_rotations,
                        "Comma-separated domain rotations (radians)");
  continual->add_option("--samples", cont_samples, "Samples per class");
  continual->add_option("--epochs", cont_epochs, "Adaptation epochs per step");
  continual->add_option("--classes", cont_classes, "Class count");
  continual->add_option("--seed", cont_seed, "Run seed");
  continual->add_option("--anchor-rotation", cont_anchor,
                        "Encoder exposure angle (default mid-sequence)");
  continual->add_option("--csv", cont_csv, "Write the grid as CSV here");

  // ---- report ----
  auto* report = app.add_subcommand(
      "report", "Print the unification table from results files");
  std::vector<std::string> report_files;
  std::string report_csv;
  report->add_option("files", report_files, "Results files (merged in order)")
      ->required();
  report->add_option("--csv", report_csv, "Also write plot-ready CSV here");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    csf_synth_options opts{};
    opts.classes = synth_classes;
    opts.ambient_dim = synth_dim;
    opts.samples_per_class = synth_samples;
    opts.radius = synth_radius;
    opts.cluster_std = synth_cluster_std;
    opts.rotation = synth_rotation;
    opts.scale = synth_scale;
    opts.noise = synth_noise;
    opts.outlier_classes = synth_outliers;
    opts.setting = synth_setting.c_str();
    opts.target_classes =
        synth_target_classes.empty() ? nullptr : synth_target_classes.c_str();
    opts.source_train_ratio = synth_ratio;
    opts.seed = synth_seed;

    OwnedString descriptor;
    const csf_status st =
        csf_synth_scenario(&opts, synth_out.c_str(), &descriptor.value);
    if (st != CSF_OK) return fail(st);
    std::printf("scenario: %s\n", descriptor.value);
    std::printf("setting: %s  classes: %d  samples/class: %d  seed: %llu\n",
                synth_setting.c_str(), synth_classes, synth_samples,
                static_cast<unsigned long long>(synth_seed));
    return kExitOk;
  }

  if (adapt->parsed()) {
    csf_adapt_summary summary{};
    const csf_status st = csf_run_adapt(
        adapt_config.c_str(), adapt_out.empty() ? nullptr : adapt_out.c_str(),
        adapt_seed.empty() ? nullptr : adapt_seed.c_str(), &summary);
    if (st != CSF_OK) return fail(st);
    std::printf("final target accuracy: %.2f\n",
                summary.final_target_accuracy);
    std::printf("final pseudo-label accuracy: %.2f\n",
                summary.final_pseudo_label_accuracy);
    std::printf("wall seconds: %.2f\n", summary.wall_seconds);
    return kExitOk;
  }

  if (verify->parsed()) {
    csf_verify_options opts{};
    opts.trials = verify_trials;
    opts.grad_samples = verify_grad_samples;
    opts.seed = verify_seed;
    opts.inject_vmi_grad_sign_flip = verify_flip ? 1 : 0;
    opts.dump_csv = verify_dump.empty() ? nullptr : verify_dump.c_str();

    OwnedString report_text;
    int32_t all_passed = 0;
    const csf_status st = csf_verify(&opts, &report_text.value, &all_passed);
    if (report_text.value) std::fputs(report_text.value, stdout);
    if (st == CSF_ERROR_VERIFY) {
      std::fprintf(stderr, "verification FAILED\n");
      return kExitRuntime;
    }
    if (st != CSF_OK) return fail(st);
    return all_passed ? kExitOk : kExitRuntime;
  }

  if (eval->parsed()) {
    const csf_status st = csf_evaluate_run(eval_run.c_str(),
                                           eval_method.c_str(), eval_threshold,
                                           eval_results.c_str());
    if (st != CSF_OK) return fail(st);

    csf_results* results = nullptr;
    if (csf_results_load(eval_results.c_str(), &results) == CSF_OK) {
      double value = 0.0;
      for (const char* setting :
           {"closed", "generalized", "generalized_source",
            "generalized_target", "partial", "open", "open_overall",
            "open_unknown_recall", "open_hos", "sf-oodg"}) {
        const std::string metric = std::string("score:") + setting;
        if (csf_results_metric(results, eval_method.c_str(), metric.c_str(),
                               &value) == CSF_OK)
          std::printf("%s\t%s\t%.2f\n", eval_method.c_str(), setting,
                      value);
      }
      csf_results_free(results);
    }
    std::printf("scores merged into %s\n", eval_results.c_str());
    return kExitOk;
  }

  if (continual->parsed()) {
    csf_continual_options opts{};
    opts.rotations = cont_rotations.c_str();
    opts.classes = cont_classes;
    opts.samples_per_class = cont_samples;
    opts.epochs = cont_epochs;
    opts.anchor_rotation = cont_anchor;
    opts.seed = cont_seed;

    OwnedString table;
    const csf_status st = csf_run_continual(
        &opts, cont_csv.empty() ? nullptr : cont_csv.c_str(), &table.value);
    if (st != CSF_OK) return fail(st);
    std::fputs(table.value, stdout);
    if (!cont_csv.empty()) std::printf("csv: %s\n", cont_csv.c_str());
    return kExitOk;
  }

  if (report->parsed()) {
    csf_results* results = nullptr;
    csf_status st = csf_results_load(report_files.front().c_str(), &results);
    if (st != CSF_OK) return fail(st);
    for (std::size_t i = 1; i < report_files.size(); ++i) {
      st = csf_results_merge_file(results, report_files[i].c_str());
      if (st != CSF_OK) {
        csf_results_free(results);
        return fail(st);
      }
    }
    OwnedString table;
    st = csf_results_render_table(results, &table.value);
    if (st != CSF_OK) {
      csf_results_free(results);
      return fail(st);
    }
    std::fputs(table.value, stdout);
    if (!report_csv.empty()) {
      OwnedString csv;
      st = csf_results_unification_csv(results, &csv.value);
      if (st != CSF_OK) {
        csf_results_free(results);
        return fail(st);
      }
      std::FILE* f = std::fopen(report_csv.c_str(), "wb");
      if (!f) {
        std::fprintf(stderr, "error: cannot write '%s'\n", report_csv.c_str());
        csf_results_free(results);
        return kExitRuntime;
      }
      std::fputs(csv.value, f);
      std::fclose(f);
      std::printf("csv: %s\n", report_csv.c_str());
    }
    csf_results_free(results);
    return kExitOk;
  }

  return kExitUsage;
}
