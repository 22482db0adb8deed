// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsc/deka.hpp"
#include "gsc/genmodel.hpp"
#include "gsc/harness/config.hpp"
#include "gsc/harness/dataset.hpp"
#include "gsc/harness/report.hpp"
#include "gsc/jscc.hpp"

namespace gsc::harness {

// Failure inside a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageMarker {
  std::string stage;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

// Append-only record of a run directory: config snapshot, root seed and completed stages.
class RunManifest {
 public:
  static constexpr const char* kFile = "manifest.json";

  // Loads out_dir/manifest.json when present, else starts a new manifest for config.
  static RunManifest open(const std::string& out_dir, const ExperimentConfig& config);
  static RunManifest load(const std::string& path);

  void append(StageMarker marker);
  void save() const;
  bool completed(const std::string& stage) const;

  const std::string& run_id() const { return run_id_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& config_text() const { return config_text_; }
  const std::vector<StageMarker>& stages() const { return stages_; }

 private:
  std::string path_;
  std::string run_id_;
  std::uint64_t seed_ = 0;
  std::string config_text_;
  std::vector<StageMarker> stages_;
};

// ---------------------------------------------------------------------------
// Model construction and artifact I/O

struct Datasets {
  Tensor cloud_images, edge_images;
  std::vector<std::vector<std::size_t>> cloud_tokens, edge_tokens;
};

genmodel::LatentCodec make_latent_codec(const ExperimentConfig& cfg);
genmodel::NoisePredictor make_predictor(const ExperimentConfig& cfg, bool cloud);
jscc::JsccCodec make_jscc_codec(const ExperimentConfig& cfg);
jscc::Link make_link(const ExperimentConfig& cfg, const jscc::JsccCodec& codec, deka::RateMode mode);

// Token ids of each configured subject.
std::vector<std::vector<std::size_t>> subject_tokens(const ExperimentConfig& cfg);

Datasets load_datasets(const std::string& out_dir, const std::string& stage);
genmodel::LatentCodec load_latent_codec(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& stage);
genmodel::NoisePredictor load_predictor(const ExperimentConfig& cfg, bool cloud, const std::string& out_dir,
                                        const std::string& stage);
jscc::JsccCodec load_jscc_codec(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& stage);
std::vector<deka::GkaResult> load_gka(const ExperimentConfig& cfg, const genmodel::NoisePredictor& edge,
                                      const std::string& out_dir, const std::string& stage);
jscc::Link load_rate_stage(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& stage);
std::vector<std::optional<nn::LoraSet>> load_snr_stage(const ExperimentConfig& cfg, const jscc::Link& link,
                                                       const std::string& out_dir, const std::string& stage);

// S_CG per subject: [n_cg + n_test, 3, H, W], training images first.
std::vector<Tensor> load_cloud_samples(const std::string& out_dir, std::size_t subjects, const std::string& stage);
struct EdgeLatents {
  Tensor train;  // [n_eg, c, h, w]
  Tensor test;   // [n_eg_test, c, h, w]
};
EdgeLatents load_edge_latents(const std::string& out_dir, const std::string& stage);

deka::GenerationModels generation_models(const ExperimentConfig& cfg, const genmodel::NoisePredictor& cloud,
                                         genmodel::NoisePredictor& edge, const genmodel::LatentCodec& codec);
// Posterior means, encoded in chunks.
Tensor encode_means(const genmodel::LatentCodec& codec, const Tensor& images);
// Generation seeds of the edge test images of one subject.
std::vector<std::uint64_t> edge_test_seeds(const ExperimentConfig& cfg, std::size_t subject);

// Binary PPM of images [N, 3, H, W] placed side by side.
void write_ppm(const std::string& path, const Tensor& images);

// ---------------------------------------------------------------------------
// Stages. Each reads its inputs from out_dir, writes checkpoints and <stage>.csv there,
// appends a manifest marker and returns its records.

std::vector<MetricRecord> stage_synth_data(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<MetricRecord> stage_pretrain_latent_codec(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<MetricRecord> stage_train_cloud(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<MetricRecord> stage_train_edge(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<MetricRecord> stage_pretrain_jscc(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<MetricRecord> stage_gka(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<MetricRecord> stage_tka_rate(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<MetricRecord> stage_tka_snr(const ExperimentConfig& cfg, const std::string& out_dir);
std::vector<MetricRecord> stage_eval(const ExperimentConfig& cfg, const std::string& out_dir, bool grid);
std::vector<MetricRecord> stage_transmit_demo(const ExperimentConfig& cfg, const std::string& out_dir);
// SVG charts from the CSV files present in out_dir; returns the written paths.
std::vector<std::string> stage_plot(const std::string& out_dir);

// Alignment stages in order: G-KA, rate stage, SNR stage. on_stage runs after each one.
using StageCallback = std::function<void(const std::string& stage, const std::vector<MetricRecord>& records)>;
std::vector<MetricRecord> run_deka(const ExperimentConfig& cfg, const std::string& out_dir,
                                   const StageCallback& on_stage = {});

// Every stage from synth-data to eval.
std::vector<MetricRecord> run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir,
                                       const StageCallback& on_stage = {});

// CSV files written by the stages, in pipeline order.
std::vector<std::string> stage_names();

}  // namespace gsc::harness
