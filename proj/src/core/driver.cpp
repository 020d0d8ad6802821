#include "driver.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "models.hpp"
#include "rng.hpp"
#include "trainer.hpp"

namespace csfda::driver {

namespace fs = std::filesystem;

namespace {

constexpr const char* kDescriptorHeader = "causal-sfda-scenario\tversion=1";

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

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

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw RuntimeError("short write to '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("file '" + path + "' does not exist");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string resolve_relative(const std::string& base_file,
                             const std::string& path) {
  const fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_file).parent_path() / p).string();
}

}  // namespace

std::string ScenarioDescriptor::to_text() const {
  std::ostringstream out;
  out << kDescriptorHeader << '\n';
  out << "setting\t" << data::setting_name(setting) << '\n';
  out << "known_classes\t" << known_classes << '\n';
  out << "seed\t" << seed << '\n';
  out << "source_manifest\t" << source_manifest << '\n';
  if (!source_test_manifest.empty())
    out << "source_test_manifest\t" << source_test_manifest << '\n';
  for (const auto& t : target_manifests) out << "target_manifest\t" << t << '\n';
  out << "synthetic\tclasses=" << synthetic.classes
      << "\tdim=" << synthetic.ambient_dim
      << "\tradius=" << format_double(synthetic.radius)
      << "\tcluster_std=" << format_double(synthetic.cluster_std)
      << "\toutliers=" << synthetic.outlier_classes
      << "\toutlier_radius=" << format_double(synthetic.outlier_radius_factor)
      << "\trotation=" << format_double(synthetic.rotation)
      << "\tscale=" << format_double(synthetic.scale)
      << "\tnoise=" << format_double(synthetic.noise)
      << "\tsamples=" << synthetic.samples_per_class << '\n';
  return out.str();
}

ScenarioDescriptor descriptor_from_string(const std::string& text,
                                          const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw ValidationError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };

  if (!std::getline(in, line)) {
    line_no = 1;
    fail("empty scenario descriptor");
  }
  ++line_no;
  if (line != kDescriptorHeader) fail("not a scenario descriptor");

  ScenarioDescriptor d;
  bool have_setting = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    const std::string& key = fields[0];
    if (key == "setting" && fields.size() == 2) {
      d.setting = data::setting_from_name(fields[1]);
      have_setting = true;
    } else if (key == "known_classes" && fields.size() == 2) {
      d.known_classes = std::stoi(fields[1]);
    } else if (key == "seed" && fields.size() == 2) {
      d.seed = std::stoull(fields[1]);
    } else if (key == "source_manifest" && fields.size() == 2) {
      d.source_manifest = fields[1];
    } else if (key == "source_test_manifest" && fields.size() == 2) {
      d.source_test_manifest = fields[1];
    } else if (key == "target_manifest" && fields.size() == 2) {
      d.target_manifests.push_back(fields[1]);
    } else if (key == "synthetic") {
      for (std::size_t f = 1; f < fields.size(); ++f) {
        const auto eq = fields[f].find('=');
        if (eq == std::string::npos) fail("bad synthetic field " + fields[f]);
        const std::string k = fields[f].substr(0, eq);
        const std::string v = fields[f].substr(eq + 1);
        try {
          if (k == "classes") d.synthetic.classes = std::stoi(v);
          else if (k == "dim") d.synthetic.ambient_dim = std::stoi(v);
          else if (k == "radius") d.synthetic.radius = std::stod(v);
          else if (k == "cluster_std") d.synthetic.cluster_std = std::stod(v);
          else if (k == "outliers") d.synthetic.outlier_classes = std::stoi(v);
          else if (k == "outlier_radius")
            d.synthetic.outlier_radius_factor = std::stod(v);
          else if (k == "rotation") d.synthetic.rotation = std::stod(v);
          else if (k == "scale") d.synthetic.scale = std::stod(v);
          else if (k == "noise") d.synthetic.noise = std::stod(v);
          else if (k == "samples") d.synthetic.samples_per_class = std::stoi(v);
          else fail("unknown synthetic field '" + k + "'");
        } catch (const ValidationError&) {
          throw;
        } catch (const std::exception&) {
          fail("bad value for synthetic field '" + k + "'");
        }
      }
    } else {
      fail("unknown descriptor line '" + line + "'");
    }
  }
  if (!have_setting) fail("descriptor missing setting");
  if (d.source_manifest.empty()) fail("descriptor missing source manifest");
  if (d.target_manifests.empty()) fail("descriptor missing target manifest");
  return d;
}

void save_descriptor(const ScenarioDescriptor& d, const std::string& path) {
  write_text_file(path, d.to_text());
}

ScenarioDescriptor load_descriptor(const std::string& path) {
  return descriptor_from_string(read_text_file(path), path);
}

data::Scenario materialize(const ScenarioDescriptor& d,
                           const std::string& descriptor_path) {
  data::Scenario sc;
  sc.setting = d.setting;
  sc.known_classes = d.known_classes;
  sc.source_train =
      data::load_manifest(resolve_relative(descriptor_path, d.source_manifest));
  if (!d.source_test_manifest.empty())
    sc.source_test = data::load_manifest(
        resolve_relative(descriptor_path, d.source_test_manifest));
  for (const auto& t : d.target_manifests)
    sc.targets.push_back(
        data::load_manifest(resolve_relative(descriptor_path, t)));
  return sc;
}

std::string run_synth(const SynthOptions& opts, const std::string& out_dir) {
  fs::create_directories(out_dir);

  auto pair = data::generate_domain_pair(opts.spec, opts.seed);
  data::Scenario scenario = data::build_scenario(pair, opts.scenario, opts.seed);

  ScenarioDescriptor d;
  d.setting = scenario.setting;
  d.known_classes = scenario.known_classes;
  d.synthetic = opts.spec;
  d.seed = opts.seed;

  const fs::path dir(out_dir);
  d.source_manifest = "source.tsv";
  data::write_manifest(scenario.source_train, (dir / d.source_manifest).string());
  if (scenario.source_test) {
    d.source_test_manifest = "source_test.tsv";
    data::write_manifest(*scenario.source_test,
                         (dir / d.source_test_manifest).string());
  }
  for (std::size_t t = 0; t < scenario.targets.size(); ++t) {
    const std::string name = scenario.targets.size() == 1
                                 ? "target.tsv"
                                 : "target" + std::to_string(t) + ".tsv";
    d.target_manifests.push_back(name);
    data::write_manifest(scenario.targets[t], (dir / name).string());
  }

  const std::string descriptor_path = (dir / "scenario.txt").string();
  save_descriptor(d, descriptor_path);
  return descriptor_path;
}

namespace {

// The toy encoder plays the role of the pretrained ViL model: it is built
// from the scenario's canonical geometry, anchored by default at the
// scenario's domain rotation.
models::ToyVilEncoder build_encoder(const ScenarioDescriptor& d,
                                    const config::RunConfig& cfg,
                                    const std::vector<std::string>& classes) {
  models::ToyVilSpec vil = cfg.encoder;
  vil.anchor_rotation = cfg.anchor_rotation_override.value_or(
      d.synthetic.rotation);
  const Mat means = data::canonical_class_means(d.synthetic, d.seed);
  const Mat basis = data::shift_plane_basis(d.synthetic, d.seed);
  require(static_cast<int>(classes.size()) <= means.rows(),
          "scenario classes exceed the synthetic geometry");
  return models::ToyVilEncoder(means.topRows(
                                   static_cast<Eigen::Index>(classes.size())),
                               basis, classes, vil, d.seed);
}

}  // namespace

AdaptOutcome run_adapt(const config::RunConfig& cfg) {
  require(!cfg.scenario_path.empty(), "config has no scenario descriptor");
  const ScenarioDescriptor d = load_descriptor(cfg.scenario_path);
  const data::Scenario scenario = materialize(d, cfg.scenario_path);

  const auto& source = scenario.source_train;
  // Adaptation sees target labels only through the audit (for logging); for
  // sf-oodg one model adapts on the first variant and is judged on all.
  const auto& target = scenario.targets.front();

  train::AdaptationConfig acfg = cfg.adapt;
  acfg.seed = cfg.seed;

  models::ToyVilEncoder enc = build_encoder(d, cfg, source.class_names);

  models::TargetModel source_model = [&] {
    if (!cfg.source_checkpoint.empty()) {
      const auto ck = train::load_checkpoint(cfg.source_checkpoint);
      return ck.model;
    }
    const auto init = models::make_target_model(
        source.dim(), cfg.model_hidden,
        static_cast<int>(source.class_names.size()), cfg.seed);
    return train::train_source(init, source, acfg);
  }();

  const auto history = train::adapt(source_model, target, enc, acfg);

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);

  config::RunConfig snapshot = cfg;
  snapshot.scenario_path =
      fs::absolute(fs::path(cfg.scenario_path)).lexically_normal().string();
  write_text_file((dir / "config.txt").string(), snapshot.to_text());
  write_text_file((dir / "losses.csv").string(), train::losses_csv(history));
  write_text_file((dir / "metrics.csv").string(), train::metrics_csv(history));

  const train::Checkpoint final_ck{history.final_model, history.final_prompt,
                                   history.final_sigma, source.class_names,
                                   cfg.seed};
  train::save_checkpoint(final_ck, (dir / "checkpoint.txt").string());
  // The pre-adaptation source model is retained for generalized evaluation.
  const train::Checkpoint source_ck{
      source_model,
      models::init_prompt(acfg.prompt_template, acfg.prompt_tokens,
                          enc.embed_dim(), cfg.seed),
      obj::DiagCovariance::ones(enc.num_classes()), source.class_names,
      cfg.seed};
  train::save_checkpoint(source_ck, (dir / "source_checkpoint.txt").string());

  {
    std::ostringstream audit;
    audit << "label_reads_optimization\t"
          << history.label_audit.optimization_reads << '\n'
          << "label_reads_logging\t" << history.label_audit.logging_reads
          << '\n'
          << "vil_hash_before\t" << history.vil_hash_before << '\n'
          << "vil_hash_after\t" << history.vil_hash_after << '\n'
          << "skipped_steps\t" << history.skipped_steps << '\n';
    write_text_file((dir / "audit.txt").string(), audit.str());
  }
  {
    std::ostringstream summary;
    summary << "wall_seconds\t" << history.wall_seconds << '\n'
            << "final_target_accuracy\t"
            << history.epochs.back().target_accuracy << '\n'
            << "final_pseudo_label_accuracy\t"
            << history.epochs.back().pseudo_label_accuracy << '\n'
            << "target_model_parameters\t"
            << history.final_model.param_count() << '\n';
    write_text_file((dir / "summary.txt").string(), summary.str());
  }

  AdaptOutcome outcome;
  outcome.run_dir = cfg.out_dir;
  outcome.final_target_accuracy = history.epochs.back().target_accuracy;
  outcome.final_pseudo_accuracy =
      history.epochs.back().pseudo_label_accuracy;
  outcome.wall_seconds = history.wall_seconds;
  return outcome;
}

eval::ContinualReport run_continual(const ContinualOptions& opts) {
  require(opts.rotations.size() >= 2, "continual needs >= 2 rotations");

  std::vector<data::LabeledSet> domains;
  for (std::size_t k = 0; k < opts.rotations.size(); ++k) {
    data::SyntheticDomainSpec spec = opts.base;
    spec.rotation = opts.rotations[k];
    auto domain = data::generate_domain_variant(
        spec, opts.seed, "dom" + std::to_string(k));
    char name[32];
    std::snprintf(name, sizeof(name), "rot%.3g", opts.rotations[k]);
    domain.domain = name;
    domains.push_back(std::move(domain));
  }

  const Mat means = data::canonical_class_means(opts.base, opts.seed);
  const Mat basis = data::shift_plane_basis(opts.base, opts.seed);
  models::ToyVilSpec vil;
  vil.anchor_rotation =
      std::isnan(opts.anchor_rotation)
          ? (opts.rotations.front() + opts.rotations.back()) / 2.0
          : opts.anchor_rotation;
  models::ToyVilEncoder enc(means, basis, domains.front().class_names, vil,
                            opts.seed);

  train::AdaptationConfig cfg = opts.adapt;
  cfg.seed = opts.seed;
  eval::ContinualConfig protocol = opts.protocol;
  protocol.hidden_width = opts.hidden;
  protocol.split_seed = derive_seed(opts.seed, "continual-split");
  return eval::continual_protocol(domains, enc, cfg, protocol);
}

std::string render_continual(const eval::ContinualReport& report) {
  std::ostringstream out;
  out << "step\tadapted_to";
  for (const auto& name : report.domain_names) out << '\t' << name;
  out << '\n';
  for (Eigen::Index r = 0; r < report.grid.rows(); ++r) {
    out << r << '\t'
        << (r == 0 ? report.domain_names[0] + " (source)"
                   : report.domain_names[static_cast<std::size_t>(r)]);
    for (Eigen::Index d = 0; d < report.grid.cols(); ++d) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.1f", report.grid(r, d));
      out << '\t' << buf;
    }
    out << '\n';
  }
  out << "drop";
  for (Eigen::Index d = 0; d < report.drops.size(); ++d) {
    if (std::isnan(report.drops[d])) {
      out << "\t--";
    } else {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.1f", report.drops[d]);
      out << '\t' << buf;
    }
  }
  out << '\n';
  return out.str();
}

std::string continual_csv(const eval::ContinualReport& report) {
  std::ostringstream out;
  out << "step,domain,accuracy\n";
  for (Eigen::Index r = 0; r < report.grid.rows(); ++r)
    for (Eigen::Index d = 0; d < report.grid.cols(); ++d)
      out << r << ',' << report.domain_names[static_cast<std::size_t>(d)]
          << ',' << format_double(report.grid(r, d)) << '\n';
  for (Eigen::Index d = 0; d < report.drops.size(); ++d)
    if (!std::isnan(report.drops[d]))
      out << "drop," << report.domain_names[static_cast<std::size_t>(d)]
          << ',' << format_double(report.drops[d]) << '\n';
  return out.str();
}

eval::ScenarioScores run_eval(const EvalOptions& opts,
                              const std::string& results_out) {
  const fs::path dir(opts.run_dir);
  const auto cfg = config::load_config((dir / "config.txt").string());
  const std::string scenario_path =
      opts.scenario_path.empty() ? cfg.scenario_path : opts.scenario_path;
  const ScenarioDescriptor d = load_descriptor(scenario_path);
  const data::Scenario scenario = materialize(d, scenario_path);

  const auto ck = train::load_checkpoint((dir / "checkpoint.txt").string());
  eval::OpenSetOptions open;
  open.threshold = opts.open_threshold;
  auto scores = eval::evaluate_scenario(ck.model, scenario, open);

  eval::ResultsFile rf;
  if (fs::exists(results_out)) rf = eval::load_results(results_out);
  rf.metadata["open_threshold"] = format_double(opts.open_threshold);
  for (const auto& [setting_key, score] : scores.records)
    rf.scores[opts.method_name][setting_key] = score;
  eval::save_results(rf, results_out);
  return scores;
}

}  // namespace csfda::driver
