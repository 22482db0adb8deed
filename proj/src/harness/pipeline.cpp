// SPDX-License-Identifier: Apache-2.0
#include "gsc/harness/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "gsc/harness/checkpoint.hpp"
#include "gsc/metrics.hpp"
#include "gsc/rng.hpp"

namespace gsc::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

RunManifest RunManifest::open(const std::string& out_dir, const ExperimentConfig& config) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / kFile).string();
  if (fs::exists(path)) {
    RunManifest m = load(path);
    if (m.seed_ != config.seed || m.run_id_ != config.run_id) {
      throw std::runtime_error("output directory '" + out_dir + "' belongs to run '" + m.run_id_ + "' with seed " +
                               std::to_string(m.seed_));
    }
    return m;
  }
  RunManifest m;
  m.path_ = path;
  m.run_id_ = config.run_id;
  m.seed_ = config.seed;
  m.config_text_ = to_text(config);
  m.save();
  return m;
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest '" + path + "'");
  json j;
  try {
    f >> j;
    RunManifest m;
    m.path_ = path;
    m.run_id_ = j.at("run_id").get<std::string>();
    m.seed_ = j.at("seed").get<std::uint64_t>();
    m.config_text_ = j.at("config").get<std::string>();
    for (const auto& s : j.at("stages")) {
      m.stages_.push_back({s.at("stage").get<std::string>(), s.at("inputs").get<std::vector<std::string>>(),
                           s.at("outputs").get<std::vector<std::string>>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest '" + path + "': " + e.what());
  }
}

void RunManifest::append(StageMarker marker) {
  stages_.push_back(std::move(marker));
  save();
}

void RunManifest::save() const {
  json j;
  j["run_id"] = run_id_;
  j["seed"] = seed_;
  j["config"] = config_text_;
  j["stages"] = json::array();
  for (const auto& s : stages_) j["stages"].push_back({{"stage", s.stage}, {"inputs", s.inputs}, {"outputs", s.outputs}});
  std::ofstream f(path_, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write manifest '" + path_ + "'");
  f << j.dump(2) << "\n";
}

bool RunManifest::completed(const std::string& stage) const {
  return std::any_of(stages_.begin(), stages_.end(), [&](const StageMarker& m) { return m.stage == stage; });
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

const std::map<std::string, std::string>& producers() {
  static const std::map<std::string, std::string> m{
      {"data.ckpt", "synth-data"},    {"codec.ckpt", "pretrain-latent-codec"},
      {"cloud.ckpt", "train-cloud"},  {"edge.ckpt", "train-edge"},
      {"jscc.ckpt", "pretrain-jscc"}, {"gka.ckpt", "gka"},
      {"scg.ckpt", "gka"},            {"seg.ckpt", "tka-rate"},
      {"tka_rate.ckpt", "tka-rate"},  {"tka_snr.ckpt", "tka-snr"},
  };
  return m;
}

std::string path_of(const std::string& out_dir, const std::string& file) { return (fs::path(out_dir) / file).string(); }

std::vector<CheckpointEntry> read_artifact(const std::string& out_dir, const std::string& file,
                                           const std::string& stage) {
  const std::string path = path_of(out_dir, file);
  if (!fs::exists(path)) {
    auto it = producers().find(file);
    const std::string hint = it == producers().end() ? "" : " (run " + it->second + " first)";
    throw StageError(stage, "missing checkpoint '" + file + "'" + hint);
  }
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw StageError(stage, e.what());
  }
}

void assign_from(const std::vector<CheckpointEntry>& entries, const nn::ParamRefs& params, const std::string& stage,
                 const std::string& file) {
  try {
    assign_entries(entries, params);
  } catch (const CheckpointError& e) {
    throw StageError(stage, file + ": " + e.what());
  }
}

nn::ParamRefs prefixed(nn::ParamRefs params, const std::string& prefix) {
  for (auto& p : params) p.name = prefix + p.name;
  return params;
}

const CheckpointEntry& entry(const std::vector<CheckpointEntry>& entries, const std::string& name,
                             const std::string& stage, const std::string& file) {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw StageError(stage, file + ": checkpoint has no entry '" + name + "'");
}

Tensor entry_tensor(const std::vector<CheckpointEntry>& entries, const std::string& name, const std::string& stage,
                    const std::string& file) {
  const auto& e = entry(entries, name, stage, file);
  return Tensor(e.shape, e.values);
}

CheckpointEntry tensor_entry(const std::string& name, const Tensor& t) { return {name, t.shape(), t.to_vector()}; }

CheckpointEntry scalar_entry(const std::string& name, double v) { return {name, {1}, {v}}; }

CheckpointEntry tokens_entry(const std::string& name, const std::vector<std::vector<std::size_t>>& tokens) {
  const std::size_t L = tokens.empty() ? 0 : tokens.front().size();
  std::vector<double> v;
  for (const auto& t : tokens) {
    if (t.size() != L) throw std::invalid_argument("prompts must share one length");
    for (auto id : t) v.push_back(static_cast<double>(id));
  }
  return {name, {tokens.size(), L}, v};
}

std::vector<std::vector<std::size_t>> entry_tokens(const CheckpointEntry& e) {
  std::vector<std::vector<std::size_t>> out(e.shape.at(0));
  const std::size_t L = e.shape.at(1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < L; ++k) out[i].push_back(static_cast<std::size_t>(e.values[i * L + k]));
  }
  return out;
}

void save_artifact(const std::string& out_dir, const std::string& file, const std::vector<CheckpointEntry>& entries) {
  save_checkpoint(path_of(out_dir, file), entries);
}

struct Recorder {
  const ExperimentConfig& cfg;
  std::string stage;
  std::vector<MetricRecord> records;

  MetricRecord& add(const std::string& metric, double value) {
    MetricRecord r;
    r.run_id = cfg.run_id;
    r.stage = stage;
    r.metric = metric;
    r.value = value;
    r.seed = cfg.seed;
    records.push_back(r);
    return records.back();
  }
  void history(const std::string& metric, const std::vector<double>& values) {
    for (std::size_t e = 0; e < values.size(); ++e) add(metric, values[e]).epoch = static_cast<long>(e);
  }
};

std::vector<MetricRecord> finish(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& stage,
                                 std::vector<MetricRecord> records, std::vector<std::string> inputs,
                                 std::vector<std::string> outputs) {
  export_csv(records, path_of(out_dir, stage + ".csv"));
  outputs.push_back(stage + ".csv");
  RunManifest m = RunManifest::open(out_dir, cfg);
  m.append({stage, std::move(inputs), std::move(outputs)});
  return records;
}

template <typename Fn>
std::vector<MetricRecord> guarded(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace

genmodel::LatentCodec make_latent_codec(const ExperimentConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "init.codec"));
  return genmodel::LatentCodec(cfg.codec, rng);
}

genmodel::NoisePredictor make_predictor(const ExperimentConfig& cfg, bool cloud) {
  Rng rng(derive_seed(cfg.seed, cloud ? "init.cloud" : "init.edge"));
  return genmodel::NoisePredictor(cloud ? "cloud" : "edge", cfg.predictor_config(cloud, prompt_vocab().size()), rng);
}

jscc::JsccCodec make_jscc_codec(const ExperimentConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "init.jscc"));
  return jscc::JsccCodec(cfg.jscc_config(), rng);
}

jscc::Link make_link(const ExperimentConfig& cfg, const jscc::JsccCodec& codec, deka::RateMode mode) {
  Rng rng(derive_seed(cfg.seed, "init.adapters"));
  jscc::JsccCodec copy = codec;
  nn::deep_copy(copy.parameters());
  return jscc::Link(std::move(copy), cfg.rate_plan(), deka::adapter_mode(mode), rng);
}

std::vector<std::vector<std::size_t>> subject_tokens(const ExperimentConfig& cfg) {
  const nn::Vocab vocab = prompt_vocab();
  std::vector<std::vector<std::size_t>> out;
  for (const auto& s : cfg.data.subjects) out.push_back(nn::tokenize(parse_subject(s).prompt(), vocab));
  return out;
}

Datasets load_datasets(const std::string& out_dir, const std::string& stage) {
  const auto e = read_artifact(out_dir, "data.ckpt", stage);
  Datasets d;
  d.cloud_images = entry_tensor(e, "cloud.images", stage, "data.ckpt");
  d.edge_images = entry_tensor(e, "edge.images", stage, "data.ckpt");
  d.cloud_tokens = entry_tokens(entry(e, "cloud.tokens", stage, "data.ckpt"));
  d.edge_tokens = entry_tokens(entry(e, "edge.tokens", stage, "data.ckpt"));
  return d;
}

genmodel::LatentCodec load_latent_codec(const ExperimentConfig& cfg, const std::string& out_dir,
                                        const std::string& stage) {
  auto codec = make_latent_codec(cfg);
  assign_from(read_artifact(out_dir, "codec.ckpt", stage), codec.parameters(), stage, "codec.ckpt");
  return codec;
}

genmodel::NoisePredictor load_predictor(const ExperimentConfig& cfg, bool cloud, const std::string& out_dir,
                                        const std::string& stage) {
  auto model = make_predictor(cfg, cloud);
  const std::string file = cloud ? "cloud.ckpt" : "edge.ckpt";
  assign_from(read_artifact(out_dir, file, stage), model.parameters(), stage, file);
  return model;
}

jscc::JsccCodec load_jscc_codec(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& stage) {
  auto codec = make_jscc_codec(cfg);
  assign_from(read_artifact(out_dir, "jscc.ckpt", stage), codec.parameters(), stage, "jscc.ckpt");
  return codec;
}

std::vector<deka::GkaResult> load_gka(const ExperimentConfig& cfg, const genmodel::NoisePredictor& edge,
                                      const std::string& out_dir, const std::string& stage) {
  const auto e = read_artifact(out_dir, "gka.ckpt", stage);
  const auto mode = static_cast<deka::GkaMode>(static_cast<int>(entry(e, "meta.gka_mode", stage, "gka.ckpt").values[0]));
  const auto rank = static_cast<std::size_t>(entry(e, "meta.lora_rank", stage, "gka.ckpt").values[0]);
  std::vector<deka::GkaResult> out;
  for (std::size_t i = 0; i < cfg.data.subjects.size(); ++i) {
    const std::string pre = "s" + std::to_string(i) + ".";
    deka::GkaResult r;
    r.metaword.embedding = entry_tensor(e, pre + "metaword", stage, "gka.ckpt");
    if (mode != deka::GkaMode::kTiOnly) {
      Rng unused(0);
      r.lora = nn::LoraSet::create(edge.lora_targets(), rank, unused);
      assign_from(e, prefixed(r.lora.parameters(), pre), stage, "gka.ckpt");
    }
    out.push_back(std::move(r));
  }
  return out;
}

jscc::Link load_rate_stage(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& stage) {
  const auto e = read_artifact(out_dir, "tka_rate.ckpt", stage);
  const auto mode =
      static_cast<deka::RateMode>(static_cast<int>(entry(e, "meta.rate_mode", stage, "tka_rate.ckpt").values[0]));
  jscc::Link link = make_link(cfg, make_jscc_codec(cfg), mode);
  assign_from(e, link.parameters(), stage, "tka_rate.ckpt");
  return link;
}

std::vector<std::optional<nn::LoraSet>> load_snr_stage(const ExperimentConfig& cfg, const jscc::Link& link,
                                                       const std::string& out_dir, const std::string& stage) {
  const auto e = read_artifact(out_dir, "tka_snr.ckpt", stage);
  std::vector<std::optional<nn::LoraSet>> out(cfg.tka.groups.size());
  for (std::size_t g = 0; g < out.size(); ++g) {
    if (!cfg.tka.group_trained[g]) continue;
    Rng unused(0);
    nn::LoraSet set = nn::LoraSet::create(link.lora_targets(), cfg.tka.group_ranks[g], unused);
    assign_from(e, prefixed(set.parameters(), "g" + std::to_string(g) + "."), stage, "tka_snr.ckpt");
    out[g] = std::move(set);
  }
  return out;
}

std::vector<Tensor> load_cloud_samples(const std::string& out_dir, std::size_t subjects, const std::string& stage) {
  const auto e = read_artifact(out_dir, "scg.ckpt", stage);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < subjects; ++i) out.push_back(entry_tensor(e, "s" + std::to_string(i) + ".images", stage, "scg.ckpt"));
  return out;
}

EdgeLatents load_edge_latents(const std::string& out_dir, const std::string& stage) {
  const auto e = read_artifact(out_dir, "seg.ckpt", stage);
  return {entry_tensor(e, "train", stage, "seg.ckpt"), entry_tensor(e, "test", stage, "seg.ckpt")};
}

void write_ppm(const std::string& path, const Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw std::invalid_argument("write_ppm expects [N, 3, H, W]");
  const std::size_t N = images.size(0), H = images.size(2), W = images.size(3);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << "P6\n" << N * W << " " << H << "\n255\n";
  const auto d = images.data();
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = std::clamp(d[((n * 3 + c) * H + y) * W + x], 0.0, 1.0);
          f.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Stages

namespace {

void add_align(Recorder& rec, const std::string& set, const metrics::AlignReport& r) {
  rec.add(set + ".visual.mean", r.visual.mean);
  rec.add(set + ".visual.std", r.visual.std);
  rec.add(set + ".semantic.mean", r.semantic.mean);
  rec.add(set + ".semantic.std", r.semantic.std);
  rec.add(set + ".combined.mean", r.combined.mean);
  rec.add(set + ".combined.std", r.combined.std);
}

// Rows j of S_EG belong to subject j mod S.
Tensor edge_latent_set(const ExperimentConfig& cfg, const deka::GenerationModels& models,
                       const std::vector<deka::GkaResult>& gka, const std::vector<std::vector<std::size_t>>& tokens,
                       std::size_t count, const char* stream) {
  const std::size_t S = tokens.size();
  std::vector<Tensor> rows(count);
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<std::size_t> idx;
    std::vector<std::uint64_t> seeds;
    for (std::size_t j = s; j < count; j += S) {
      idx.push_back(j);
      seeds.push_back(derive_seed(cfg.seed, stream, j));
    }
    if (idx.empty()) continue;
    Tensor z = deka::generate_edge_latents(models, gka[s], tokens[s], seeds);
    for (std::size_t k = 0; k < idx.size(); ++k) rows[idx[k]] = slice(z, 0, k, 1);
  }
  return concat(rows, 0);
}

std::size_t reference_rate(const jscc::RatePlan& plan) {
  for (std::size_t p = 0; p < plan.size(); ++p) {
    if (plan.rate(p) == 4.0) return p;
  }
  return 0;
}

}  // namespace

Tensor encode_means(const genmodel::LatentCodec& codec, const Tensor& images) {
  constexpr std::size_t kChunk = 128;
  std::vector<Tensor> parts;
  for (std::size_t s = 0; s < images.size(0); s += kChunk) {
    parts.push_back(codec.encode_mean(slice(images, 0, s, std::min(kChunk, images.size(0) - s))).detach());
  }
  return concat(parts, 0);
}

deka::GenerationModels generation_models(const ExperimentConfig& cfg, const genmodel::NoisePredictor& cloud,
                                         genmodel::NoisePredictor& edge, const genmodel::LatentCodec& codec) {
  return {&cloud, &edge, &codec, cfg.schedule(), cfg.diffusion.T_B};
}

std::vector<std::uint64_t> edge_test_seeds(const ExperimentConfig& cfg, std::size_t subject) {
  return deka::sample_seeds(derive_seed(cfg.seed, "edge.test", subject), "edge.sample", 0, cfg.gka.n_test);
}

std::vector<MetricRecord> stage_synth_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string stage = "synth-data";
  return guarded(stage, [&] {
    fs::create_directories(out_dir);
    Recorder rec{cfg, stage, {}};
    const auto cloud = synth_dataset({}, Style::cloud(), cfg.data.train_count, derive_seed(cfg.seed, "data.cloud"),
                                     cfg.data.image_size);
    const auto edge = synth_dataset({}, Style::edge(), cfg.data.train_count, derive_seed(cfg.seed, "data.edge"),
                                    cfg.data.image_size);
    save_artifact(out_dir, "data.ckpt",
                  {tensor_entry("cloud.images", cloud.images), tokens_entry("cloud.tokens", cloud.tokens),
                   tensor_entry("edge.images", edge.images), tokens_entry("edge.tokens", edge.tokens)});
    rec.add("cloud.count", static_cast<double>(cloud.images.size(0)));
    rec.add("edge.count", static_cast<double>(edge.images.size(0)));
    rec.add("cloud.mean_pixel", mean(cloud.images).item());
    rec.add("edge.mean_pixel", mean(edge.images).item());
    return finish(cfg, out_dir, stage, rec.records, {}, {"data.ckpt"});
  });
}

std::vector<MetricRecord> stage_pretrain_latent_codec(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string stage = "pretrain-latent-codec";
  return guarded(stage, [&] {
    Recorder rec{cfg, stage, {}};
    const Datasets d = load_datasets(out_dir, stage);
    auto codec = make_latent_codec(cfg);
    auto train_cfg = cfg.codec_train;
    train_cfg.seed = derive_seed(cfg.seed, "codec.train");
    rec.history("loss", genmodel::train_latent_codec(codec, concat({d.cloud_images, d.edge_images}, 0), train_cfg));
    rec.add("cloud.recon_psnr", metrics::psnr(d.cloud_images, codec.decode(encode_means(codec, d.cloud_images))));
    rec.add("edge.recon_psnr", metrics::psnr(d.edge_images, codec.decode(encode_means(codec, d.edge_images))));
    save_params(path_of(out_dir, "codec.ckpt"), codec.parameters());
    return finish(cfg, out_dir, stage, rec.records, {"data.ckpt"}, {"codec.ckpt"});
  });
}

namespace {

std::vector<MetricRecord> train_predictor_stage(const ExperimentConfig& cfg, const std::string& out_dir, bool cloud) {
  const std::string stage = cloud ? "train-cloud" : "train-edge";
  return guarded(stage, [&] {
    Recorder rec{cfg, stage, {}};
    const Datasets d = load_datasets(out_dir, stage);
    const auto codec = load_latent_codec(cfg, out_dir, stage);
    auto model = make_predictor(cfg, cloud);
    const Tensor latents = encode_means(codec, cloud ? d.cloud_images : d.edge_images);
    genmodel::DiffusionTrainConfig tc{cfg.diffusion.epochs, cfg.diffusion.batch_size, cfg.diffusion.lr,
                                      derive_seed(cfg.seed, cloud ? "cloud.train" : "edge.train")};
    rec.history("loss", genmodel::train_noise_predictor(model, cfg.schedule(), latents,
                                                        cloud ? d.cloud_tokens : d.edge_tokens, tc,
                                                        genmodel::Trainable::kFull));
    const std::string file = cloud ? "cloud.ckpt" : "edge.ckpt";
    save_params(path_of(out_dir, file), model.parameters());
    return finish(cfg, out_dir, stage, rec.records, {"data.ckpt", "codec.ckpt"}, {file});
  });
}

}  // namespace

std::vector<MetricRecord> stage_train_cloud(const ExperimentConfig& cfg, const std::string& out_dir) {
  return train_predictor_stage(cfg, out_dir, true);
}

std::vector<MetricRecord> stage_train_edge(const ExperimentConfig& cfg, const std::string& out_dir) {
  return train_predictor_stage(cfg, out_dir, false);
}

std::vector<MetricRecord> stage_pretrain_jscc(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string stage = "pretrain-jscc";
  return guarded(stage, [&] {
    Recorder rec{cfg, stage, {}};
    const Datasets d = load_datasets(out_dir, stage);
    const auto codec = load_latent_codec(cfg, out_dir, stage);
    const Tensor latents = encode_means(codec, concat({d.cloud_images, d.edge_images}, 0));
    auto jc = make_jscc_codec(cfg);
    const auto setup = cfg.transmission_setup();
    const jscc::ChannelPool pool(setup.base, {cfg.tka.gamma0_db}, {cfg.tka.omega0_ns * 1e-9});
    jscc::JsccTrainConfig tc{cfg.jscc.epochs, cfg.jscc.batch_size, cfg.jscc.lr, derive_seed(cfg.seed, "jscc.train")};
    rec.history("lmse", jscc::train_codec(jc, latents, cfg.jscc.objective, pool, setup.constellation, tc));
    auto& r = rec.add("eval_lmse", jscc::evaluate_codec(jc, latents, cfg.jscc.objective.variant, pool,
                                                        setup.constellation, derive_seed(cfg.seed, "jscc.eval")));
    r.snr_db = cfg.tka.gamma0_db;
    r.delay_spread_ns = cfg.tka.omega0_ns;
    save_params(path_of(out_dir, "jscc.ckpt"), jc.parameters());
    return finish(cfg, out_dir, stage, rec.records, {"data.ckpt", "codec.ckpt"}, {"jscc.ckpt"});
  });
}

std::vector<MetricRecord> stage_gka(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string stage = "gka";
  return guarded(stage, [&] {
    const auto codec = load_latent_codec(cfg, out_dir, stage);
    const auto cloud = load_predictor(cfg, true, out_dir, stage);
    auto edge = load_predictor(cfg, false, out_dir, stage);
    const auto models = generation_models(cfg, cloud, edge, codec);
    const auto visual = metrics::ProbeExtractor::visual(3, cfg.eval.probe_seed);
    const auto semantic = metrics::ProbeExtractor::semantic(codec);
    const auto tokens = subject_tokens(cfg);
    std::vector<CheckpointEntry> gka_entries{scalar_entry("meta.gka_mode", static_cast<double>(cfg.gka.mode)),
                                             scalar_entry("meta.lora_rank", static_cast<double>(cfg.gka.lora_rank))};
    std::vector<CheckpointEntry> scg_entries;
    std::vector<MetricRecord> records;
    const std::string mode = deka::gka_mode_name(cfg.gka.mode);
    for (std::size_t s = 0; s < tokens.size(); ++s) {
      Recorder rec{cfg, stage + ".s" + std::to_string(s), {}};
      const auto seeds = deka::sample_seeds(derive_seed(cfg.seed, "scg", s), "cloud.sample", 0,
                                            cfg.gka.n_cg + cfg.gka.n_test);
      const Tensor samples = deka::cloud_generate_samples(models, tokens[s], seeds);
      scg_entries.push_back(tensor_entry("s" + std::to_string(s) + ".images", samples));
      const Tensor train = slice(samples, 0, 0, cfg.gka.n_cg);
      const Tensor test = slice(samples, 0, cfg.gka.n_cg, cfg.gka.n_test);
      const auto test_seeds = edge_test_seeds(cfg, s);

      const Tensor base = genmodel::generate_batch(edge, edge.embed_prompt(tokens[s]), test_seeds, cfg.diffusion.T_B,
                                                   cfg.schedule());
      add_align(rec, "lb", metrics::align_eval(codec.decode(base), test, visual, semantic));
      add_align(rec, "ub", metrics::align_eval(train, test, visual, semantic));

      const auto before = nn::snapshot(edge.parameters());
      auto result = deka::run_gka(models, train, tokens[s], cfg.gka, derive_seed(cfg.seed, "gka", s));
      if (nn::snapshot(edge.parameters()) != before) throw std::logic_error("edge base parameters changed during G-KA");
      rec.history("metaword_loss", result.metaword_history);
      rec.history("lora_loss", result.lora_history);
      const Tensor aligned = deka::generate_edge_latents(models, result, tokens[s], test_seeds);
      add_align(rec, mode, metrics::align_eval(codec.decode(aligned), test, visual, semantic));

      const std::string pre = "s" + std::to_string(s) + ".";
      gka_entries.push_back(tensor_entry(pre + "metaword", result.metaword.embedding));
      for (auto& e : to_entries(prefixed(result.lora.parameters(), pre))) gka_entries.push_back(std::move(e));
      records.insert(records.end(), rec.records.begin(), rec.records.end());
    }
    save_artifact(out_dir, "gka.ckpt", gka_entries);
    save_artifact(out_dir, "scg.ckpt", scg_entries);
    return finish(cfg, out_dir, stage, records, {"codec.ckpt", "cloud.ckpt", "edge.ckpt"}, {"gka.ckpt", "scg.ckpt"});
  });
}

std::vector<MetricRecord> stage_tka_rate(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string stage = "tka-rate";
  return guarded(stage, [&] {
    Recorder rec{cfg, stage, {}};
    const auto codec = load_latent_codec(cfg, out_dir, stage);
    const auto cloud = make_predictor(cfg, true);
    auto edge = load_predictor(cfg, false, out_dir, stage);
    const auto gka = load_gka(cfg, edge, out_dir, stage);
    const auto jc = load_jscc_codec(cfg, out_dir, stage);
    const auto models = generation_models(cfg, cloud, edge, codec);
    const auto tokens = subject_tokens(cfg);
    const Tensor train = edge_latent_set(cfg, models, gka, tokens, cfg.tka.n_eg, "seg.train");
    const Tensor test = edge_latent_set(cfg, models, gka, tokens, cfg.tka.n_eg_test, "seg.test");
    save_artifact(out_dir, "seg.ckpt", {tensor_entry("train", train), tensor_entry("test", test)});

    const auto setup = cfg.transmission_setup();
    jscc::Link link = make_link(cfg, jc, cfg.tka.rate_mode);
    const auto result = deka::vgsa_rate_stage(link, train, setup, cfg.tka, derive_seed(cfg.seed, "tka.rate"));
    const jscc::ChannelPool pool(setup.base, {cfg.tka.gamma0_db}, {cfg.tka.omega0_ns * 1e-9});
    for (std::size_t p = 0; p < link.plan().size(); ++p) {
      for (std::size_t e = 0; e < result.history[p].size(); ++e) {
        auto& r = rec.add("lmse", result.history[p][e]);
        r.epoch = static_cast<long>(e);
        r.rate_index = static_cast<long>(p);
        r.snr_db = cfg.tka.gamma0_db;
        r.delay_spread_ns = cfg.tka.omega0_ns;
      }
      auto& r = rec.add("test_lmse", jscc::evaluate_link(link, test, p, pool, setup.constellation,
                                                         derive_seed(cfg.seed, "tka.rate.eval")));
      r.rate_index = static_cast<long>(p);
      r.snr_db = cfg.tka.gamma0_db;
      r.delay_spread_ns = cfg.tka.omega0_ns;
    }
    auto entries = to_entries(link.parameters());
    entries.push_back(scalar_entry("meta.rate_mode", static_cast<double>(cfg.tka.rate_mode)));
    save_artifact(out_dir, "tka_rate.ckpt", entries);
    return finish(cfg, out_dir, stage, rec.records, {"codec.ckpt", "edge.ckpt", "gka.ckpt", "jscc.ckpt"},
                  {"seg.ckpt", "tka_rate.ckpt"});
  });
}

std::vector<MetricRecord> stage_tka_snr(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string stage = "tka-snr";
  return guarded(stage, [&] {
    Recorder rec{cfg, stage, {}};
    const jscc::Link link = load_rate_stage(cfg, out_dir, stage);
    const EdgeLatents seg = load_edge_latents(out_dir, stage);
    const auto setup = cfg.transmission_setup();
    const auto before = nn::snapshot(const_cast<jscc::Link&>(link).parameters());
    auto result = deka::vgsa_snr_stage(link, seg.train, setup, cfg.tka, derive_seed(cfg.seed, "tka.snr"));
    if (nn::snapshot(const_cast<jscc::Link&>(link).parameters()) != before) {
      throw std::logic_error("rate-stage parameters changed during the SNR stage");
    }
    std::vector<CheckpointEntry> entries;
    for (std::size_t g = 0; g < result.lora.size(); ++g) {
      rec.history("group" + std::to_string(g) + ".lmse", result.history[g]);
      if (result.lora[g]) {
        for (auto& e : to_entries(prefixed(result.lora[g]->parameters(), "g" + std::to_string(g) + ".")))
          entries.push_back(std::move(e));
      }
    }
    std::vector<double> spreads_s;
    for (double w : setup.spread_set_ns) spreads_s.push_back(w * 1e-9);
    for (double snr : setup.snr_set) {
      const std::size_t g = deka::group_of(cfg.tka.groups, snr);
      const nn::LoraSet* lora = result.lora[g] ? &*result.lora[g] : nullptr;
      const jscc::ChannelPool pool(setup.base, {snr}, spreads_s);
      for (std::size_t p = 0; p < link.plan().size(); ++p) {
        const std::uint64_t s = derive_seed(cfg.seed, "tka.snr.eval");
        auto& a = rec.add("test_lmse", jscc::evaluate_link(link, seg.test, p, pool, setup.constellation, s, lora));
        a.rate_index = static_cast<long>(p);
        a.snr_db = snr;
        auto& b = rec.add("test_lmse_noadapt", jscc::evaluate_link(link, seg.test, p, pool, setup.constellation, s));
        b.rate_index = static_cast<long>(p);
        b.snr_db = snr;
      }
    }
    save_artifact(out_dir, "tka_snr.ckpt", entries);
    return finish(cfg, out_dir, stage, rec.records, {"tka_rate.ckpt", "seg.ckpt"}, {"tka_snr.ckpt"});
  });
}

std::vector<MetricRecord> stage_eval(const ExperimentConfig& cfg, const std::string& out_dir, bool grid) {
  const std::string stage = "eval";
  return guarded(stage, [&] {
    Recorder rec{cfg, stage, {}};
    const auto codec = load_latent_codec(cfg, out_dir, stage);
    auto edge = load_predictor(cfg, false, out_dir, stage);
    const auto cloud = make_predictor(cfg, true);
    const auto gka = load_gka(cfg, edge, out_dir, stage);
    const auto samples = load_cloud_samples(out_dir, cfg.data.subjects.size(), stage);
    deka::TkaResult tka;
    tka.link = load_rate_stage(cfg, out_dir, stage);
    tka.groups = cfg.tka.groups;
    tka.group_lora = load_snr_stage(cfg, tka.link, out_dir, stage);
    const EdgeLatents seg = load_edge_latents(out_dir, stage);
    const auto setup = cfg.transmission_setup();
    const std::uint64_t psnr_seed = derive_seed(cfg.seed, "eval.psnr");

    for (std::size_t p = 0; p < tka.link.plan().size(); ++p) {
      for (double snr : setup.snr_set) {
        auto add = [&](const char* metric, const nn::LoraSet* lora, const deka::TransmissionSetup& s,
                       std::optional<double> spread) {
          auto& r = rec.add(metric, deka::psnr_monte_carlo(tka.link, lora, codec, seg.test, p, s, snr,
                                                           cfg.eval.trials, psnr_seed));
          r.rate_index = static_cast<long>(p);
          r.snr_db = snr;
          r.delay_spread_ns = spread;
        };
        add("psnr", tka.select(snr), setup, std::nullopt);
        add("psnr_noadapt", nullptr, setup, std::nullopt);
        if (grid) {
          for (double w : setup.spread_set_ns) {
            auto one = setup;
            one.spread_set_ns = {w};
            add("psnr", tka.select(snr), one, w);
          }
        }
      }
    }

    // Alignment of received images at the reference rate.
    const auto models = generation_models(cfg, cloud, edge, codec);
    const auto visual = metrics::ProbeExtractor::visual(3, cfg.eval.probe_seed);
    const auto semantic = metrics::ProbeExtractor::semantic(codec);
    const auto tokens = subject_tokens(cfg);
    const std::size_t p_ref = reference_rate(tka.link.plan());
    for (std::size_t s = 0; s < tokens.size(); ++s) {
      const Tensor test = slice(samples[s], 0, cfg.gka.n_cg, cfg.gka.n_test);
      const Tensor z = deka::generate_edge_latents(models, gka[s], tokens[s], edge_test_seeds(cfg, s));
      for (double snr : setup.snr_set) {
        const Tensor zr = deka::transmit_latents(tka.link, tka.select(snr), z, p_ref, setup, snr, cfg.tka.omega0_ns,
                                                 derive_seed(cfg.seed, "eval.align", s));
        const auto report = metrics::align_eval(codec.decode(zr), test, visual, semantic);
        auto& r = rec.add("s" + std::to_string(s) + ".rx.combined.mean", report.combined.mean);
        r.rate_index = static_cast<long>(p_ref);
        r.snr_db = snr;
        r.delay_spread_ns = cfg.tka.omega0_ns;
      }
    }
    return finish(cfg, out_dir, stage, rec.records,
                  {"codec.ckpt", "edge.ckpt", "gka.ckpt", "scg.ckpt", "tka_rate.ckpt", "tka_snr.ckpt", "seg.ckpt"}, {});
  });
}

std::vector<MetricRecord> stage_transmit_demo(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string stage = "transmit-demo";
  return guarded(stage, [&] {
    Recorder rec{cfg, stage, {}};
    const auto codec = load_latent_codec(cfg, out_dir, stage);
    auto edge = load_predictor(cfg, false, out_dir, stage);
    const auto cloud = make_predictor(cfg, true);
    const auto gka = load_gka(cfg, edge, out_dir, stage);
    deka::TkaResult tka;
    tka.link = load_rate_stage(cfg, out_dir, stage);
    tka.groups = cfg.tka.groups;
    tka.group_lora = load_snr_stage(cfg, tka.link, out_dir, stage);
    deka::GscSystem sys{generation_models(cfg, cloud, edge, codec), &gka.front(), &tka, cfg.transmission_setup()};
    const auto tokens = subject_tokens(cfg);
    std::vector<Tensor> panels;
    const std::uint64_t seed = derive_seed(cfg.seed, "demo.generate");
    for (std::size_t p = 0; p < tka.link.plan().size(); ++p) {
      const auto out = deka::gsc_forward(sys, tokens.front(), seed, p, cfg.tka.gamma0_db, cfg.tka.omega0_ns,
                                         derive_seed(cfg.seed, "demo.channel", p));
      if (p == 0) panels.push_back(out.reference);
      panels.push_back(out.image);
      auto& r = rec.add("psnr", metrics::psnr(out.reference, out.image));
      r.rate_index = static_cast<long>(p);
      r.snr_db = cfg.tka.gamma0_db;
      r.delay_spread_ns = cfg.tka.omega0_ns;
    }
    write_ppm(path_of(out_dir, "demo.ppm"), concat(panels, 0));
    return finish(cfg, out_dir, stage, rec.records,
                  {"codec.ckpt", "edge.ckpt", "gka.ckpt", "tka_rate.ckpt", "tka_snr.ckpt"}, {"demo.ppm"});
  });
}

std::vector<std::string> stage_plot(const std::string& out_dir) {
  struct Chart {
    std::string csv, file;
    PlotRequest request;
  };
  const std::vector<Chart> charts{
      {"eval.csv", "psnr_vs_snr.svg", {PlotRequest::Kind::kLine, "psnr", Field::kSnr, Field::kRateIndex, "PSNR vs SNR"}},
      {"eval.csv", "psnr_noadapt_vs_snr.svg",
       {PlotRequest::Kind::kLine, "psnr_noadapt", Field::kSnr, Field::kRateIndex, "PSNR vs SNR without SNR-group LoRA"}},
      {"tka-rate.csv", "rate_stage_lmse.svg",
       {PlotRequest::Kind::kLine, "lmse", Field::kEpoch, Field::kRateIndex, "Rate stage latent MSE"}},
      {"pretrain-jscc.csv", "jscc_pretrain_lmse.svg",
       {PlotRequest::Kind::kLine, "lmse", Field::kEpoch, Field::kNone, "JSCC pretraining latent MSE"}},
      {"gka.csv", "gka_alignment.svg",
       {PlotRequest::Kind::kBox, "lb.combined.mean,makd.combined.mean,ti.combined.mean,db.combined.mean,ub.combined.mean",
        Field::kNone, Field::kMetric, "Alignment score per subject"}},
  };
  std::vector<std::string> written;
  for (const auto& c : charts) {
    const std::string csv = path_of(out_dir, c.csv);
    if (!fs::exists(csv)) continue;
    const auto records = load_csv(csv);
    const std::string path = path_of(out_dir, c.file);
    try {
      export_svg_plot(records, c.request, path);
      written.push_back(path);
    } catch (const std::invalid_argument&) {
      // No matching records in this run.
    }
  }
  if (written.empty()) throw StageError("plot", "no stage CSV with plottable records in '" + out_dir + "'");
  return written;
}

std::vector<MetricRecord> run_deka(const ExperimentConfig& cfg, const std::string& out_dir,
                                   const StageCallback& on_stage) {
  std::vector<MetricRecord> all;
  auto run = [&](const std::string& name, const std::vector<MetricRecord>& records) {
    all.insert(all.end(), records.begin(), records.end());
    if (on_stage) on_stage(name, records);
  };
  run("gka", stage_gka(cfg, out_dir));
  run("tka-rate", stage_tka_rate(cfg, out_dir));
  run("tka-snr", stage_tka_snr(cfg, out_dir));
  return all;
}

std::vector<MetricRecord> run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir,
                                       const StageCallback& on_stage) {
  std::vector<MetricRecord> all;
  auto run = [&](const std::string& name, const std::vector<MetricRecord>& records) {
    all.insert(all.end(), records.begin(), records.end());
    if (on_stage) on_stage(name, records);
  };
  run("synth-data", stage_synth_data(cfg, out_dir));
  run("pretrain-latent-codec", stage_pretrain_latent_codec(cfg, out_dir));
  run("train-cloud", stage_train_cloud(cfg, out_dir));
  run("train-edge", stage_train_edge(cfg, out_dir));
  run("pretrain-jscc", stage_pretrain_jscc(cfg, out_dir));
  const auto deka_records = run_deka(cfg, out_dir, on_stage);
  all.insert(all.end(), deka_records.begin(), deka_records.end());
  run("eval", stage_eval(cfg, out_dir, false));
  return all;
}

std::vector<std::string> stage_names() {
  return {"synth-data", "pretrain-latent-codec", "train-cloud", "train-edge", "pretrain-jscc", "gka",
          "tka-rate",   "tka-snr",               "eval",        "transmit-demo"};
}

}  // namespace gsc::harness
