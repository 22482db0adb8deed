// SPDX-License-Identifier: Apache-2.0
#include "gsc/harness/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "gsc/harness/dataset.hpp"

namespace gsc::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

}  // namespace

IniDocument IniDocument::parse(const std::string& text) {
  IniDocument doc;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      doc.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (doc.has(section, key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + section + "." + key);
    doc.sections_[section][key] = trim(line.substr(eq + 1));
  }
  return doc;
}

bool IniDocument::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) != 0;
}

const std::string& IniDocument::get(const std::string& section, const std::string& key) const {
  if (!has(section, key)) throw ConfigError("missing key " + section + "." + key);
  return sections_.at(section).at(key);
}

void IniDocument::set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section][key] = value;
}

double parse_number(const std::string& text) {
  const std::string t = trim(text);
  const auto slash = t.find('/');
  try {
    std::size_t used = 0;
    if (slash != std::string::npos) {
      const std::string a = trim(t.substr(0, slash)), b = trim(t.substr(slash + 1));
      const double num = std::stod(a, &used);
      if (used != a.size()) throw std::invalid_argument(t);
      const double den = std::stod(b, &used);
      if (used != b.size() || den == 0.0) throw std::invalid_argument(t);
      return num / den;
    }
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("not a number: '" + text + "'");
  }
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number(item));
  return out;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  if (std::strtod(buf, nullptr) == v) return buf;
  if (std::isfinite(v)) {
    for (int d = 2; d <= 64; ++d) {
      const double n = std::round(v * d);
      if (n / d == v && std::abs(n) < 1e12) {
        std::snprintf(buf, sizeof buf, "%.0f/%d", n, d);
        return buf;
      }
    }
  }
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_number(v[i]);
  return out;
}

std::size_t parse_size(const std::string& text) {
  const double v = parse_number(text);
  if (v < 0 || v != std::floor(v) || v > 1e15) throw ConfigError("not a non-negative integer: '" + text + "'");
  return static_cast<std::size_t>(v);
}

std::uint64_t parse_u64(const std::string& text) {
  try {
    std::size_t used = 0;
    const std::string t = trim(text);
    if (!t.empty() && t.front() == '-') throw std::invalid_argument(t);
    const unsigned long long v = std::stoull(t, &used, 0);
    if (used != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("not an unsigned integer: '" + text + "'");
  }
}

bool parse_bool(const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("not a boolean: '" + text + "'");
}

std::string format_bool(bool b) { return b ? "true" : "false"; }

struct Binding {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define GSC_SIZE(sec, name, field)                                                     \
  Binding {                                                                            \
    sec, name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_size(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }              \
  }
#define GSC_REAL(sec, name, field)                                                       \
  Binding {                                                                              \
    sec, name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_number(v); }, \
        [](const ExperimentConfig& c) { return format_number(c.field); }                 \
  }
#define GSC_BOOL(sec, name, field)                                                     \
  Binding {                                                                            \
    sec, name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_bool(v); }, \
        [](const ExperimentConfig& c) { return format_bool(c.field); }                 \
  }
#define GSC_LIST(sec, name, field)                                                     \
  Binding {                                                                            \
    sec, name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_list(v); }, \
        [](const ExperimentConfig& c) { return format_list(c.field); }                 \
  }

std::vector<std::vector<double>> parse_groups(const std::string& text) {
  std::vector<std::vector<double>> out;
  for (const auto& g : split(text, '|')) out.push_back(parse_list(g));
  return out;
}

std::string format_groups(const std::vector<std::vector<double>>& groups) {
  std::string out;
  for (std::size_t g = 0; g < groups.size(); ++g) out += (g ? " | " : "") + format_list(groups[g]);
  return out;
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table{
      Binding{"run", "id", [](ExperimentConfig& c, const std::string& v) { c.run_id = v; },
              [](const ExperimentConfig& c) { return c.run_id; }},
      Binding{"run", "seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64(v); },
              [](const ExperimentConfig& c) { return std::to_string(c.seed); }},

      GSC_SIZE("data", "image_size", data.image_size),
      GSC_SIZE("data", "train_count", data.train_count),
      Binding{"data", "subjects", [](ExperimentConfig& c, const std::string& v) { c.data.subjects = split(v, ';'); },
              [](const ExperimentConfig& c) {
                std::string out;
                for (std::size_t i = 0; i < c.data.subjects.size(); ++i) out += (i ? "; " : "") + c.data.subjects[i];
                return out;
              }},

      GSC_SIZE("codec", "latent_channels", codec.latent_channels),
      GSC_SIZE("codec", "width", codec.width),
      GSC_SIZE("codec", "epochs", codec_train.epochs),
      GSC_SIZE("codec", "batch_size", codec_train.batch_size),
      GSC_REAL("codec", "lr", codec_train.lr),
      GSC_REAL("codec", "recon_weight", codec_train.recon_weight),
      GSC_REAL("codec", "kl_weight", codec_train.kl_weight),
      GSC_REAL("codec", "disc_weight", codec_train.disc_weight),
      GSC_BOOL("codec", "use_discriminator", codec_train.use_discriminator),

      GSC_SIZE("diffusion", "T", diffusion.T),
      GSC_SIZE("diffusion", "T_B", diffusion.T_B),
      GSC_REAL("diffusion", "beta_start", diffusion.beta_start),
      GSC_REAL("diffusion", "beta_end", diffusion.beta_end),
      GSC_SIZE("diffusion", "cloud_channels", diffusion.cloud_channels),
      GSC_SIZE("diffusion", "edge_channels", diffusion.edge_channels),
      GSC_SIZE("diffusion", "embed_dim", diffusion.embed_dim),
      GSC_SIZE("diffusion", "time_dim", diffusion.time_dim),
      GSC_SIZE("diffusion", "attn_dim", diffusion.attn_dim),
      GSC_BOOL("diffusion", "lora_all_convs", diffusion.lora_all_convs),
      GSC_SIZE("diffusion", "epochs", diffusion.epochs),
      GSC_SIZE("diffusion", "batch_size", diffusion.batch_size),
      GSC_REAL("diffusion", "lr", diffusion.lr),

      GSC_SIZE("channel", "J", channel.J),
      GSC_SIZE("channel", "M", channel.M),
      GSC_REAL("channel", "subcarrier_spacing_hz", channel.subcarrier_spacing_hz),
      GSC_REAL("channel", "avg_gain_power", channel.avg_gain_power),
      Binding{"channel", "covariance",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "rational") c.channel.variant = channel::CovarianceVariant::kRational;
                else if (v == "as_written") c.channel.variant = channel::CovarianceVariant::kAsWritten;
                else throw ConfigError("covariance must be rational or as_written, got '" + v + "'");
              },
              [](const ExperimentConfig& c) {
                return std::string(c.channel.variant == channel::CovarianceVariant::kRational ? "rational"
                                                                                              : "as_written");
              }},
      GSC_LIST("channel", "snr_db", channel.snr_db_set),
      GSC_LIST("channel", "delay_spread_ns", channel.delay_spread_ns_set),

      GSC_SIZE("jscc", "hidden", jscc.codec.hidden),
      GSC_SIZE("jscc", "feature_channels", jscc.codec.feature_channels),
      GSC_LIST("jscc", "rates", jscc.rates),
      Binding{"jscc", "objective",
              [](ExperimentConfig& c, const std::string& v) {
                try {
                  c.jscc.objective.variant = jscc::parse_objective(v);
                } catch (const std::invalid_argument& e) {
                  throw ConfigError(e.what());
                }
              },
              [](const ExperimentConfig& c) { return std::string(jscc::objective_name(c.jscc.objective.variant)); }},
      GSC_REAL("jscc", "eta_cml", jscc.objective.eta_cml),
      GSC_REAL("jscc", "kld_weight", jscc.objective.kld_weight),
      GSC_REAL("jscc", "kld_temperature", jscc.objective.kld_temperature),
      GSC_REAL("jscc", "anneal_start", jscc.objective.anneal_start),
      GSC_REAL("jscc", "anneal_final", jscc.objective.anneal_final),
      GSC_SIZE("jscc", "epochs", jscc.epochs),
      GSC_SIZE("jscc", "batch_size", jscc.batch_size),
      GSC_REAL("jscc", "lr", jscc.lr),

      GSC_SIZE("gka", "n_cg", gka.n_cg),
      GSC_SIZE("gka", "n_test", gka.n_test),
      GSC_SIZE("gka", "metaword_epochs", gka.metaword_epochs),
      GSC_REAL("gka", "metaword_lr", gka.metaword_lr),
      GSC_REAL("gka", "metaword_variance", gka.metaword_variance),
      GSC_SIZE("gka", "lora_rank", gka.lora_rank),
      GSC_SIZE("gka", "lora_epochs", gka.lora_epochs),
      GSC_REAL("gka", "lora_lr", gka.lora_lr),
      GSC_SIZE("gka", "batch_size", gka.batch_size),
      Binding{"gka", "mode",
              [](ExperimentConfig& c, const std::string& v) {
                try {
                  c.gka.mode = deka::parse_gka_mode(v);
                } catch (const std::invalid_argument& e) {
                  throw ConfigError(e.what());
                }
              },
              [](const ExperimentConfig& c) { return std::string(deka::gka_mode_name(c.gka.mode)); }},

      Binding{"tka", "rate_mode",
              [](ExperimentConfig& c, const std::string& v) {
                try {
                  c.tka.rate_mode = deka::parse_rate_mode(v);
                } catch (const std::invalid_argument& e) {
                  throw ConfigError(e.what());
                }
              },
              [](const ExperimentConfig& c) { return std::string(deka::rate_mode_name(c.tka.rate_mode)); }},
      GSC_SIZE("tka", "n_eg", tka.n_eg),
      GSC_SIZE("tka", "n_eg_test", tka.n_eg_test),
      GSC_SIZE("tka", "rate_epochs", tka.rate_epochs),
      GSC_REAL("tka", "rate_lr", tka.rate_lr),
      GSC_SIZE("tka", "snr_epochs", tka.snr_epochs),
      GSC_REAL("tka", "snr_lr", tka.snr_lr),
      GSC_SIZE("tka", "batch_size", tka.batch_size),
      GSC_REAL("tka", "gamma0_db", tka.gamma0_db),
      GSC_REAL("tka", "omega0_ns", tka.omega0_ns),
      Binding{"tka", "groups", [](ExperimentConfig& c, const std::string& v) { c.tka.groups = parse_groups(v); },
              [](const ExperimentConfig& c) { return format_groups(c.tka.groups); }},
      Binding{"tka", "group_trained",
              [](ExperimentConfig& c, const std::string& v) {
                c.tka.group_trained.clear();
                for (const auto& item : split(v, ',')) c.tka.group_trained.push_back(parse_bool(item));
              },
              [](const ExperimentConfig& c) {
                std::string out;
                for (std::size_t i = 0; i < c.tka.group_trained.size(); ++i) {
                  out += (i ? ", " : "") + format_bool(c.tka.group_trained[i]);
                }
                return out;
              }},
      Binding{"tka", "group_ranks",
              [](ExperimentConfig& c, const std::string& v) {
                c.tka.group_ranks.clear();
                for (const auto& item : split(v, ',')) c.tka.group_ranks.push_back(parse_size(item));
              },
              [](const ExperimentConfig& c) {
                std::string out;
                for (std::size_t i = 0; i < c.tka.group_ranks.size(); ++i) {
                  out += (i ? ", " : "") + std::to_string(c.tka.group_ranks[i]);
                }
                return out;
              }},

      GSC_SIZE("eval", "trials", eval.trials),
      Binding{"eval", "probe_seed", [](ExperimentConfig& c, const std::string& v) { c.eval.probe_seed = parse_u64(v); },
              [](const ExperimentConfig& c) { return std::to_string(c.eval.probe_seed); }},
  };
  return table;
}

#undef GSC_SIZE
#undef GSC_REAL
#undef GSC_BOOL
#undef GSC_LIST

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  const IniDocument doc = IniDocument::parse(text);
  ExperimentConfig c;
  std::map<std::string, std::map<std::string, bool>> known;
  for (const auto& b : bindings()) {
    known[b.section][b.key] = true;
    if (!doc.has(b.section, b.key)) continue;
    try {
      b.set(c, doc.get(b.section, b.key));
    } catch (const ConfigError& e) {
      throw ConfigError(b.section + "." + b.key + ": " + e.what());
    }
  }
  c.codec.image_size = c.data.image_size;
  for (const auto& [section, keys] : doc.sections()) {
    if (!known.count(section)) throw ConfigError("unknown section [" + section + "]");
    for (const auto& [key, value] : keys) {
      if (!known[section].count(key)) throw ConfigError("unknown key " + section + "." + key);
    }
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string to_text(const ExperimentConfig& config) {
  std::string out, section;
  for (const auto& b : bindings()) {
    if (b.section != section) {
      if (!section.empty()) out += "\n";
      section = b.section;
      out += "[" + section + "]\n";
    }
    out += b.key + " = " + b.get(config) + "\n";
  }
  return out;
}

void validate(const ExperimentConfig& c) {
  require(!c.run_id.empty() && c.run_id.find_first_of(",\n\r\"") == std::string::npos, "run.id",
          "must be nonempty without commas, quotes or newlines");
  require(c.data.image_size >= 8 && c.data.image_size % 8 == 0, "data.image_size", "must be a multiple of 8");
  require(c.data.train_count >= 1, "data.train_count", "must be at least 1");
  require(!c.data.subjects.empty(), "data.subjects", "needs at least one subject");
  for (const auto& s : c.data.subjects) {
    try {
      parse_subject(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("data.subjects: ") + e.what());
    }
  }
  require(c.codec.latent_channels >= 1, "codec.latent_channels", "must be at least 1");
  require(c.codec.width >= 1, "codec.width", "must be at least 1");
  require(c.codec_train.batch_size >= 1, "codec.batch_size", "must be at least 1");
  require(c.codec_train.lr > 0, "codec.lr", "must be positive");

  require(c.diffusion.T >= 1, "diffusion.T", "must be at least 1");
  require(c.diffusion.T_B >= 1 && c.diffusion.T_B <= c.diffusion.T, "diffusion.T_B", "must lie in [1, T]");
  require(c.diffusion.beta_start > 0 && c.diffusion.beta_end < 1 && c.diffusion.beta_start <= c.diffusion.beta_end,
          "diffusion.beta_start", "need 0 < beta_start <= beta_end < 1");
  require(c.diffusion.cloud_channels >= 1 && c.diffusion.edge_channels >= 1, "diffusion.cloud_channels",
          "channel counts must be positive");
  require(c.diffusion.embed_dim >= 2 && c.diffusion.time_dim % 2 == 0 && c.diffusion.time_dim >= 2,
          "diffusion.time_dim", "must be even and positive");
  require(c.diffusion.attn_dim >= 1, "diffusion.attn_dim", "must be at least 1");
  require(c.diffusion.batch_size >= 1, "diffusion.batch_size", "must be at least 1");
  require(c.diffusion.lr > 0, "diffusion.lr", "must be positive");

  require(c.channel.J >= 1, "channel.J", "must be at least 1");
  require(c.channel.M >= 4, "channel.M", "must be at least 4");
  try {
    channel::make_qam(c.channel.M);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("channel.M: ") + e.what());
  }
  require(c.channel.subcarrier_spacing_hz > 0, "channel.subcarrier_spacing_hz", "must be positive");
  require(c.channel.avg_gain_power > 0, "channel.avg_gain_power", "must be positive");
  require(!c.channel.snr_db_set.empty(), "channel.snr_db", "needs at least one SNR");
  require(!c.channel.delay_spread_ns_set.empty(), "channel.delay_spread_ns", "needs at least one delay spread");
  for (double w : c.channel.delay_spread_ns_set) require(w > 0, "channel.delay_spread_ns", "must be positive");

  require(c.jscc.codec.hidden >= 1, "jscc.hidden", "must be at least 1");
  require(c.jscc.codec.feature_channels >= 2 && c.jscc.codec.feature_channels % 2 == 0, "jscc.feature_channels",
          "must be even");
  require(!c.jscc.rates.empty(), "jscc.rates", "needs at least one rate");
  try {
    c.rate_plan();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("jscc.rates: ") + e.what());
  }
  require(c.jscc.objective.eta_cml >= 0, "jscc.eta_cml", "must be non-negative");
  require(c.jscc.objective.kld_temperature > 0, "jscc.kld_temperature", "must be positive");
  require(c.jscc.objective.anneal_start > 0 && c.jscc.objective.anneal_final > 0, "jscc.anneal_start",
          "temperatures must be positive");
  require(c.jscc.batch_size >= 1, "jscc.batch_size", "must be at least 1");
  require(c.jscc.lr > 0, "jscc.lr", "must be positive");

  try {
    c.gka.validate();
    c.tka.validate(c.channel.snr_db_set);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(std::string("tka.groups: ") + e.what());
  }
  require(c.gka.n_test >= 1, "gka.n_test", "must be at least 1");
  require(c.tka.n_eg >= 1 && c.tka.n_eg_test >= 1, "tka.n_eg", "latent counts must be positive");
  require(c.tka.omega0_ns > 0, "tka.omega0_ns", "must be positive");
  require(c.eval.trials >= 1, "eval.trials", "must be at least 1");
}

jscc::RatePlan ExperimentConfig::rate_plan() const {
  const std::size_t latent = data.image_size / 4;
  const std::size_t Z = codec.latent_channels * latent * latent;
  const std::size_t positions = (latent / 2) * (latent / 2);
  return jscc::RatePlan(Z, positions, jscc.rates);
}

genmodel::DiffusionSchedule ExperimentConfig::schedule() const {
  return genmodel::DiffusionSchedule::linear(diffusion.T, diffusion.beta_start, diffusion.beta_end);
}

channel::ChannelCondition ExperimentConfig::base_condition() const {
  channel::ChannelCondition c;
  c.snr_db = tka.gamma0_db;
  c.delay_spread_s = tka.omega0_ns * 1e-9;
  c.J = channel.J;
  c.subcarrier_spacing_hz = channel.subcarrier_spacing_hz;
  c.avg_gain_power = channel.avg_gain_power;
  c.variant = channel.variant;
  return c;
}

deka::TransmissionSetup ExperimentConfig::transmission_setup() const {
  return {base_condition(), channel::make_qam(channel.M), jscc.objective, channel.snr_db_set,
          channel.delay_spread_ns_set};
}

jscc::JsccConfig ExperimentConfig::jscc_config() const {
  jscc::JsccConfig j = jscc.codec;
  j.latent_channels = codec.latent_channels;
  j.latent_size = data.image_size / 4;
  return j;
}

genmodel::PredictorConfig ExperimentConfig::predictor_config(bool cloud, std::size_t vocab_size) const {
  genmodel::PredictorConfig p;
  p.latent_channels = codec.latent_channels;
  p.latent_size = data.image_size / 4;
  p.base_channels = cloud ? diffusion.cloud_channels : diffusion.edge_channels;
  p.embed_dim = diffusion.embed_dim;
  p.time_dim = diffusion.time_dim;
  p.attn_dim = diffusion.attn_dim;
  p.vocab_size = vocab_size;
  p.lora_all_convs = diffusion.lora_all_convs;
  return p;
}

}  // namespace gsc::harness
