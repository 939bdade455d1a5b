#include "posfeat/cli.hpp"

#include "posfeat/config.hpp"
#include "posfeat/desc_train.hpp"
#include "posfeat/det_train.hpp"
#include "posfeat/eval.hpp"
#include "posfeat/image_io.hpp"
#include "posfeat/inference.hpp"
#include "posfeat/synth.hpp"
#include "posfeat/tinynet.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace posfeat {

namespace {

constexpr int kMidChannels = 32;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("write failed: " + path);
}

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--profile", c.profile, "preset: hpatches, aachen, eth");
  cmd->add_option("--threads", c.threads, "worker cap")->check(CLI::PositiveNumber);
}

// flags > file > preset > defaults
TrainConfig resolve_train(const Common& c) {
  TrainConfig cfg;
  if (!c.config.empty()) cfg = apply_json(cfg, read_text(c.config));
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

InferenceConfig resolve_inference(const Common& c) {
  InferenceConfig cfg = inference_profile(c.profile.empty() ? "hpatches" : c.profile);
  if (c.config.empty()) return cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(c.config));
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "nms_size") cfg.nms_size = it->get<int>();
      else if (k == "score_threshold") cfg.score_threshold = it->get<double>();
      else if (k == "max_keypoints") cfg.max_keypoints = it->get<int>();
      else if (k == "ratio") cfg.ratio = it->is_null() ? std::nullopt : std::optional<double>(it->get<double>());
      else throw FormatError("config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return cfg;
}

std::string inference_json(const InferenceConfig& c) {
  nlohmann::ordered_json j;
  j["nms_size"] = c.nms_size;
  j["score_threshold"] = c.score_threshold;
  j["max_keypoints"] = c.max_keypoints;
  j["ratio"] = c.ratio ? nlohmann::ordered_json(*c.ratio) : nlohmann::ordered_json(nullptr);
  return j.dump(2);
}

// Config echo: "<out>.config.json" next to the primary output.
void echo_config(const std::string& out, const std::string& json) { write_text(out + ".config.json", json + "\n"); }

nn::DescriptorNet load_descriptor(const std::string& path, TrainConfig* cfg_out = nullptr) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != "descriptor") throw InputError(path + ": not a descriptor checkpoint");
  nn::DescriptorNet net(ck.config.descriptor_channels, 0);
  nn::assign_parameters(net.stack().parameters(), ck.params);
  if (cfg_out) *cfg_out = ck.config;
  return net;
}

nn::DetectorNet load_detector(const std::string& path, int channels) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != "detector") throw InputError(path + ": not a detector checkpoint");
  if (ck.config.descriptor_channels != channels) throw InputError(path + ": descriptor channel count mismatch");
  nn::DetectorNet net(channels, kMidChannels, 0);
  nn::assign_parameters(net.stack().parameters(), ck.params);
  return net;
}

// --- commands ---------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int count = 20;
  std::string mode = "planar";
  int width = 96, height = 96;
  int first = 0;
};

void cmd_synth(const Common& c, const SynthArgs& a) {
  if (a.count < 1) throw InputError("--count must be positive");
  if (a.width % 16 != 0 || a.height % 16 != 0) throw InputError("image size must be a multiple of 16");
  if (a.mode != "planar" && a.mode != "general") throw InputError("--mode must be planar or general");
  const std::uint64_t seed = c.seed.value_or(0);
  fs::create_directories(a.out);
  for (int k = 0; k < a.count; ++k) {
    const std::uint64_t s = hash_key(seed, static_cast<std::uint64_t>(a.first + k), 0x5c);
    const SynthScene scene = a.mode == "planar" ? make_planar_pair(s, a.width, a.height)
                                                : make_two_view_scene(s, a.width, a.height);
    char name[32];
    std::snprintf(name, sizeof name, "pair_%04d", a.first + k);
    write_scene_bundle((fs::path(a.out) / name).string(), scene);
  }
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["count"] = a.count;
  j["first"] = a.first;
  j["mode"] = a.mode;
  j["width"] = a.width;
  j["height"] = a.height;
  write_text((fs::path(a.out) / "config.json").string(), j.dump(2) + "\n");
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string desc;
  std::optional<int> iterations;
};

void cmd_train_desc(const Common& c, const TrainArgs& a) {
  TrainConfig cfg = resolve_train(c);
  if (a.iterations) cfg.desc_iterations = *a.iterations;
  cfg.validate();
  const auto pairs = read_scene_directory(a.data);
  DescriptorTrainer trainer(cfg, nn::DescriptorNet(cfg.descriptor_channels, cfg.seed));
  const auto records = trainer.train(pairs, cfg.desc_iterations);
  nn::Checkpoint ck{"descriptor", cfg, trainer.net().stack().parameters(), trainer.optimizer().velocity()};
  nn::save_checkpoint(a.out, ck);
  write_text(a.out + ".loss.csv", loss_csv(records));
  echo_config(a.out, to_json_string(cfg));
}

void cmd_train_det(const Common& c, const TrainArgs& a) {
  if (a.desc.empty()) throw InputError("descriptor checkpoint required");
  if (!fs::exists(a.desc)) throw InputError("descriptor checkpoint required: " + a.desc + " not found");
  TrainConfig desc_cfg;
  const nn::DescriptorNet desc = load_descriptor(a.desc, &desc_cfg);
  TrainConfig cfg = resolve_train(c);
  if (a.iterations) cfg.det_iterations = *a.iterations;
  cfg.descriptor_channels = desc_cfg.descriptor_channels;
  cfg.normalize_descriptors = desc_cfg.normalize_descriptors;
  cfg.validate();
  const auto pairs = read_scene_directory(a.data);
  DetectorTrainer trainer(cfg, desc, nn::DetectorNet(cfg.descriptor_channels, kMidChannels, cfg.seed + 1), pairs);
  const auto records = trainer.train(cfg.det_iterations);
  nn::Checkpoint ck{"detector", cfg, trainer.net().stack().parameters(), trainer.optimizer().velocity()};
  nn::save_checkpoint(a.out, ck);
  write_text(a.out + ".reward.csv", reward_csv(records));
  echo_config(a.out, to_json_string(cfg));
}

struct ExtractArgs {
  std::string image, desc, det, out;
  std::optional<int> nms, max_keypoints;
  std::optional<double> score_threshold;
};

void cmd_extract(const Common& c, const ExtractArgs& a) {
  if (a.desc.empty()) throw InputError("descriptor checkpoint required");
  if (a.det.empty()) throw InputError("detector checkpoint required");
  InferenceConfig cfg = resolve_inference(c);
  if (a.nms) cfg.nms_size = *a.nms;
  if (a.max_keypoints) cfg.max_keypoints = *a.max_keypoints;
  if (a.score_threshold) cfg.score_threshold = *a.score_threshold;
  TrainConfig tc;
  const nn::DescriptorNet desc = load_descriptor(a.desc, &tc);
  const nn::DetectorNet det = load_detector(a.det, tc.descriptor_channels);
  const KeypointSet k = extract(read_image(a.image), desc, det, cfg);
  write_pfk1(a.out, k);
  echo_config(a.out, inference_json(cfg));
}

struct MatchArgs {
  std::string feat1, feat2, out;
  std::optional<double> ratio;
};

void cmd_match(const Common& c, const MatchArgs& a) {
  InferenceConfig cfg = resolve_inference(c);
  if (a.ratio) cfg.ratio = *a.ratio;
  const MatchSet m = mutual_nn_match(read_pfk1(a.feat1), read_pfk1(a.feat2), cfg.ratio);
  write_matches_csv(a.out, m);
  echo_config(a.out, inference_json(cfg));
}

struct EvalArgs {
  std::string feat1, feat2, matches, homography, out, curve, pair_id = "pair";
};

void cmd_eval(const Common& c, const EvalArgs& a) {
  const KeypointSet k1 = read_pfk1(a.feat1);
  const KeypointSet k2 = read_pfk1(a.feat2);
  InferenceConfig cfg = resolve_inference(c);
  const MatchSet m = a.matches.empty() ? mutual_nn_match(k1, k2, cfg.ratio) : read_matches_csv(a.matches);
  const Homography h = read_homography(a.homography);
  const std::vector<PairEvaluation> rows{evaluate_pair(a.pair_id, m, k1, k2, h)};
  write_text(a.out, eval_report_csv(rows));
  if (!a.curve.empty()) write_text(a.curve, mma_curve_dat(rows));
  echo_config(a.out, inference_json(cfg));
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"posfeat"};
  argv.reserve(args.size() + 1);
  for (const auto& s : args) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Weakly supervised local features: synthesis, training, extraction, matching, evaluation"};
  app.name("posfeat");
  app.require_subcommand(1);

  Common common;
  SynthArgs synth;
  TrainArgs tdesc, tdet;
  ExtractArgs ext;
  MatchArgs mat;
  EvalArgs ev;

  auto* s = app.add_subcommand("synth", "write synthetic two-view scene bundles");
  add_common(s, common);
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--count", synth.count, "number of pairs");
  s->add_option("--mode", synth.mode, "planar or general");
  s->add_option("--width", synth.width);
  s->add_option("--height", synth.height);
  s->add_option("--first", synth.first, "index of the first pair");

  auto* d = app.add_subcommand("train-desc", "stage 1: descriptor training from poses");
  add_common(d, common);
  d->add_option("--data", tdesc.data, "directory of scene bundles")->required();
  d->add_option("--out", tdesc.out, "output checkpoint")->required();
  d->add_option("--iterations", tdesc.iterations);

  auto* k = app.add_subcommand("train-det", "stage 2: detector training on a frozen descriptor");
  add_common(k, common);
  k->add_option("--data", tdet.data, "directory of scene bundles")->required();
  k->add_option("--desc", tdet.desc, "descriptor checkpoint");
  k->add_option("--out", tdet.out, "output checkpoint")->required();
  k->add_option("--iterations", tdet.iterations);

  auto* e = app.add_subcommand("extract", "keypoints and descriptors of one image");
  add_common(e, common);
  e->add_option("--image", ext.image)->required();
  e->add_option("--desc", ext.desc);
  e->add_option("--det", ext.det);
  e->add_option("--out", ext.out, "PFK1 output")->required();
  e->add_option("--nms", ext.nms);
  e->add_option("--max-keypoints", ext.max_keypoints);
  e->add_option("--score-threshold", ext.score_threshold);

  auto* m = app.add_subcommand("match", "mutual nearest-neighbour matching");
  add_common(m, common);
  m->add_option("--feat1", mat.feat1)->required();
  m->add_option("--feat2", mat.feat2)->required();
  m->add_option("--out", mat.out, "match CSV")->required();
  m->add_option("--ratio", mat.ratio, "Lowe ratio threshold");

  auto* v = app.add_subcommand("eval", "MMA against a ground-truth homography");
  add_common(v, common);
  v->add_option("--feat1", ev.feat1)->required();
  v->add_option("--feat2", ev.feat2)->required();
  v->add_option("--matches", ev.matches, "match CSV; matched on the fly when omitted");
  v->add_option("--homography", ev.homography)->required();
  v->add_option("--out", ev.out, "eval CSV")->required();
  v->add_option("--curve", ev.curve, "MMA curve data file");
  v->add_option("--pair-id", ev.pair_id);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }

  try {
    if (*s) cmd_synth(common, synth);
    else if (*d) cmd_train_desc(common, tdesc);
    else if (*k) cmd_train_det(common, tdet);
    else if (*e) cmd_extract(common, ext);
    else if (*m) cmd_match(common, mat);
    else if (*v) cmd_eval(common, ev);
  } catch (const std::exception& ex) {
    std::string msg = ex.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}

}  // namespace posfeat
