// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsc/channel.hpp"
#include "gsc/deka.hpp"
#include "gsc/genmodel.hpp"
#include "gsc/jscc.hpp"

namespace gsc::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Line-oriented "key = value" text with [section] headers; '#' starts a comment.
class IniDocument {
 public:
  static IniDocument parse(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& value);
  const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct DataConfig {
  std::size_t image_size = 32;
  std::size_t train_count = 600;  // images per style
  std::vector<std::string> subjects{"red striped figure light", "blue dotted critter sky", "yellow plain tower dark"};
};

struct DiffusionConfig {
  std::size_t T = 1000;
  std::size_t T_B = 20;
  double beta_start = 8.5e-4;
  double beta_end = 0.012;
  std::size_t cloud_channels = 32;
  std::size_t edge_channels = 16;
  std::size_t embed_dim = 32;
  std::size_t time_dim = 32;
  std::size_t attn_dim = 32;
  bool lora_all_convs = false;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-3;
};

struct ChannelConfig {
  std::size_t J = 120;
  std::size_t M = 64;
  double subcarrier_spacing_hz = 30e3;
  double avg_gain_power = 1.0;
  channel::CovarianceVariant variant = channel::CovarianceVariant::kRational;
  std::vector<double> snr_db_set{0, 5, 10, 15, 20, 25};
  std::vector<double> delay_spread_ns_set{30, 100, 300, 1000};
};

struct JsccSection {
  jscc::JsccConfig codec;
  std::vector<double> rates{16.0 / 2, 16.0 / 3, 16.0 / 4, 16.0 / 5, 16.0 / 6};
  jscc::ObjectiveConfig objective;
  std::size_t epochs = 100;
  std::size_t batch_size = 20;
  double lr = 1e-4;
};

struct EvalConfig {
  std::size_t trials = 200;
  std::uint64_t probe_seed = 7;
};

struct ExperimentConfig {
  std::string run_id = "desk";
  std::uint64_t seed = 1;
  DataConfig data;
  genmodel::LatentCodecConfig codec;
  genmodel::CodecTrainConfig codec_train;
  DiffusionConfig diffusion;
  ChannelConfig channel;
  JsccSection jscc;
  deka::GkaConfig gka;
  deka::TkaConfig tka;
  EvalConfig eval;

  jscc::RatePlan rate_plan() const;
  genmodel::DiffusionSchedule schedule() const;
  // Condition at (gamma0, omega0).
  channel::ChannelCondition base_condition() const;
  deka::TransmissionSetup transmission_setup() const;
  jscc::JsccConfig jscc_config() const;
  genmodel::PredictorConfig predictor_config(bool cloud, std::size_t vocab_size) const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);
// Throws ConfigError naming the offending key.
void validate(const ExperimentConfig& config);

// "16/3" style fractions or plain decimals.
double parse_number(const std::string& text);
// Comma-separated numbers.
std::vector<double> parse_list(const std::string& text);
// %.15g when exact, else an exact "n/d" with d <= 64, else %.17g.
std::string format_number(double v);

}  // namespace gsc::harness
