// SPDX-License-Identifier: Apache-2.0
// Command-line front end: one subcommand per pipeline stage.
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gsc/harness/pipeline.hpp"

namespace {

using gsc::harness::ExperimentConfig;
using gsc::harness::MetricRecord;

void summarize(const std::string& stage, const std::vector<MetricRecord>& records) {
  std::printf("%s: %zu records\n", stage.c_str(), records.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative semantic communication pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  app.add_option("--config", config_path, "INI config file (built-in desk defaults when omitted)")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "root seed overriding [run] seed");
  app.add_option("--out", out_dir, "run directory")->capture_default_str();

  auto* synth = app.add_subcommand("synth-data", "render the procedural cloud and edge datasets");
  auto* codec = app.add_subcommand("pretrain-latent-codec", "train the shared latent encoder and decoder");
  auto* cloud = app.add_subcommand("train-cloud", "train the cloud noise predictor");
  auto* edge = app.add_subcommand("train-edge", "train the edge noise predictor");
  auto* jscc = app.add_subcommand("pretrain-jscc", "pretrain the JSCC codec");
  auto* gka = app.add_subcommand("gka", "generation-level knowledge alignment");
  std::string gka_mode;
  gka->add_option("--mode", gka_mode, "makd|ti|db")->check(CLI::IsMember({"makd", "ti", "db"}));
  auto* rate = app.add_subcommand("tka-rate", "rate stage of transmission-level alignment");
  std::string rate_mode;
  rate->add_option("--mode", rate_mode, "vr-alter|vr-joint|mi-alter|mi-joint")
      ->check(CLI::IsMember({"vr-alter", "vr-joint", "mi-alter", "mi-joint"}));
  auto* snr = app.add_subcommand("tka-snr", "SNR-grouped LoRA stage");
  auto* eval = app.add_subcommand("eval", "Monte-Carlo PSNR and alignment evaluation");
  bool grid = false;
  eval->add_flag("--grid", grid, "also report every delay spread separately");
  auto* demo = app.add_subcommand("transmit-demo", "generate, transmit and decode one image per rate");
  auto* plot = app.add_subcommand("plot", "render SVG charts from the stage CSV files");

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : gsc::harness::load_config(config_path);
    if (*seed_opt) cfg.seed = seed;
    if (!gka_mode.empty()) cfg.gka.mode = gsc::deka::parse_gka_mode(gka_mode);
    if (!rate_mode.empty()) cfg.tka.rate_mode = gsc::deka::parse_rate_mode(rate_mode);
    gsc::harness::validate(cfg);

    namespace h = gsc::harness;
    if (synth->parsed()) summarize("synth-data", h::stage_synth_data(cfg, out_dir));
    if (codec->parsed()) summarize("pretrain-latent-codec", h::stage_pretrain_latent_codec(cfg, out_dir));
    if (cloud->parsed()) summarize("train-cloud", h::stage_train_cloud(cfg, out_dir));
    if (edge->parsed()) summarize("train-edge", h::stage_train_edge(cfg, out_dir));
    if (jscc->parsed()) summarize("pretrain-jscc", h::stage_pretrain_jscc(cfg, out_dir));
    if (gka->parsed()) summarize("gka", h::stage_gka(cfg, out_dir));
    if (rate->parsed()) summarize("tka-rate", h::stage_tka_rate(cfg, out_dir));
    if (snr->parsed()) summarize("tka-snr", h::stage_tka_snr(cfg, out_dir));
    if (eval->parsed()) summarize("eval", h::stage_eval(cfg, out_dir, grid));
    if (demo->parsed()) summarize("transmit-demo", h::stage_transmit_demo(cfg, out_dir));
    if (plot->parsed()) {
      for (const auto& path : h::stage_plot(out_dir)) std::printf("wrote %s\n", path.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
