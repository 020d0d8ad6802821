#include "config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace csfda::config {

namespace {

constexpr const char* kHeader = "causal-sfda-config v1";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

struct Schema {
  // section -> key -> accessor, iterated in declaration order for to_text.
  std::vector<std::pair<std::string,
                        std::vector<std::pair<std::string, Field>>>>
      sections;

  Field* find(const std::string& section, const std::string& key) {
    for (auto& [name, fields] : sections) {
      if (name != section) continue;
      for (auto& [k, f] : fields)
        if (k == key) return &f;
    }
    return nullptr;
  }
  bool has_section(const std::string& section) const {
    for (const auto& [name, fields] : sections)
      if (name == section) return true;
    return false;
  }
};

Field double_field(double* p) {
  return {[p](const std::string& v) { *p = std::stod(v); },
          [p] { return format_double(*p); }};
}

Field int_field(int* p) {
  return {[p](const std::string& v) { *p = std::stoi(v); },
          [p] { return std::to_string(*p); }};
}

Field u64_field(std::uint64_t* p) {
  return {[p](const std::string& v) { *p = std::stoull(v); },
          [p] { return std::to_string(*p); }};
}

Field string_field(std::string* p) {
  return {[p](const std::string& v) { *p = v; }, [p] { return *p; }};
}

Field bool_field(bool* p) {
  return {[p](const std::string& v) {
            if (v == "true" || v == "1")
              *p = true;
            else if (v == "false" || v == "0")
              *p = false;
            else
              throw ValidationError("expected true/false, got '" + v + "'");
          },
          [p] { return *p ? "true" : "false"; }};
}

Field optional_double_field(std::optional<double>* p) {
  return {[p](const std::string& v) {
            if (v.empty())
              p->reset();
            else
              *p = std::stod(v);
          },
          [p] { return p->has_value() ? format_double(**p) : ""; }};
}

Schema make_schema(RunConfig& c) {
  Schema s;
  s.sections.push_back(
      {"run",
       {{"seed", u64_field(&c.seed)},
        {"out", string_field(&c.out_dir)}}});
  s.sections.push_back(
      {"scenario", {{"descriptor", string_field(&c.scenario_path)}}});
  s.sections.push_back(
      {"source",
       {{"epochs", int_field(&c.adapt.source_epochs)},
        {"lr", double_field(&c.adapt.source_lr)},
        {"checkpoint", string_field(&c.source_checkpoint)}}});
  s.sections.push_back({"model", {{"hidden", int_field(&c.model_hidden)}}});
  s.sections.push_back(
      {"encoder",
       {{"embed_dim", int_field(&c.encoder.embed_dim)},
        {"temperature", double_field(&c.encoder.temperature)},
        {"anchor_rotation",
         optional_double_field(&c.anchor_rotation_override)},
        {"anchor_noise", double_field(&c.encoder.anchor_noise)},
        {"anchor_bias", double_field(&c.encoder.anchor_bias)}}});
  s.sections.push_back(
      {"adapt",
       {{"alpha", double_field(&c.adapt.alpha)},
        {"sigma_w", double_field(&c.adapt.sigma_w)},
        {"tau", double_field(&c.adapt.tau)},
        {"lr_model", double_field(&c.adapt.lr_model)},
        {"lr_prompt", double_field(&c.adapt.lr_prompt)},
        {"lr_sigma", double_field(&c.adapt.lr_sigma)},
        {"momentum", double_field(&c.adapt.momentum)},
        {"cosine_decay", bool_field(&c.adapt.cosine_decay)},
        {"batch", int_field(&c.adapt.batch_size)},
        {"epochs", int_field(&c.adapt.epochs)},
        {"sign_pmi", double_field(&c.adapt.ec_signs.pmi)},
        {"sign_vmi", double_field(&c.adapt.ec_signs.vmi)},
        {"prompt_template", string_field(&c.adapt.prompt_template)},
        {"prompt_tokens", int_field(&c.adapt.prompt_tokens)}}});
  s.sections.push_back(
      {"eval", {{"open_threshold", double_field(&c.open_threshold)}}});
  return s;
}

}  // namespace

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  Schema schema = make_schema(copy);
  std::ostringstream out;
  out << kHeader << '\n';
  for (const auto& [section, fields] : schema.sections) {
    out << '\n' << '[' << section << "]\n";
    for (const auto& [key, field] : fields)
      out << key << " = " << field.get() << '\n';
  }
  return out.str();
}

RunConfig parse_config_text(const std::string& text,
                            const std::string& origin) {
  RunConfig cfg;
  Schema schema = make_schema(cfg);

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw ValidationError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };

  if (!std::getline(in, line)) {
    line_no = 1;
    fail("empty config");
  }
  ++line_no;
  if (trim(line) != kHeader)
    fail("missing or unsupported header (expected '" + std::string(kHeader) +
         "')");

  std::string section;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail("malformed section header '" + t + "'");
      section = t.substr(1, t.size() - 2);
      if (!schema.has_section(section))
        fail("unknown section '" + section + "'");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail("expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty()) fail("key '" + key + "' outside any section");
    Field* field = schema.find(section, key);
    if (!field) fail("unknown key '" + key + "' in section [" + section + "]");
    try {
      field->set(value);
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception&) {
      fail("bad value '" + value + "' for key '" + key + "'");
    }
  }

  if (const char* env = std::getenv("CAUSAL_SFDA_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ValidationError("CAUSAL_SFDA_SEED is not an integer: '" +
                            std::string(env) + "'");
    }
  }
  cfg.adapt.seed = cfg.seed;
  cfg.adapt.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("config '" + path + "' does not exist");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

}  // namespace csfda::config
