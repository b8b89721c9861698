#include "fda/cli.hpp"

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fda/checkpoint.hpp"
#include "fda/gradsuite.hpp"
#include "fda/infer.hpp"
#include "fda/metrics.hpp"
#include "fda/phantom.hpp"
#include "fda/pipeline.hpp"
#include "fda/sdm.hpp"
#include "fda/train.hpp"

namespace fda::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

nlohmann::ordered_json to_json(const RunManifest& m) {
  return {{"command", m.command},   {"config_hash", m.config_hash},   {"seeds", m.seeds},
          {"inputs", m.inputs},     {"outputs", m.outputs},           {"tool_version", m.tool_version},
          {"wall_time_s", m.wall_time_s}};
}

void write_manifest(const RunManifest& m, const fs::path& path) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << to_json(m).dump(2) << "\n";
    if (!f) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string config_hash(const nlohmann::ordered_json& cfg) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : cfg.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

fs::path sidecar(const fs::path& out) {
  auto p = out;
  p += ".manifest.json";
  return p;
}

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct Context {
  std::ostream& out;
  std::ostream& err;
};

int run_phantom_gen(Context& ctx, const fs::path& spec_path, const fs::path& out_dir) {
  Timer t;
  const auto j = read_json(spec_path);
  const bool nested = j.is_object() && j.contains("phantom");
  const auto spec = phantom::phantom_spec_from_json(nested ? j.at("phantom") : j);
  phantom::validate(spec);
  auto sample = phantom::generate_phantom(spec);
  ojson cfg = {{"phantom", phantom::to_json(spec)}};
  RunManifest m;
  m.seeds["phantom"] = spec.seed;
  if (nested && j.contains("noise")) {
    const auto noise = phantom::noise_spec_from_json(j.at("noise"));
    phantom::validate(noise);
    sample = phantom::corrupt_to_noisy(sample, noise);
    cfg["noise"] = phantom::to_json(noise);
    m.seeds["noise"] = noise.seed;
  }
  phantom::save_sample(sample, out_dir);
  m.command = "phantom gen";
  m.config_hash = config_hash(cfg);
  m.inputs["spec"] = spec_path.string();
  m.outputs["dir"] = out_dir.string();
  m.wall_time_s = t.seconds();
  write_manifest(m, out_dir / "manifest.json");
  ctx.out << "wrote phantom with " << sample.centerline.size() << " branches to " << out_dir.string() << "\n";
  return kOk;
}

int run_sdm(Context& ctx, const fs::path& mask_path, const fs::path& out, bool spacing_aware, bool single_scale) {
  Timer t;
  const MaskVolume mask = load_mask(mask_path);
  sdm::SdmOptions opt;
  opt.spacing_aware = spacing_aware;
  opt.single_scale = single_scale;
  const auto s = sdm::sdm_compute(mask, opt);
  save_volume(sdm::to_volume(s), out);
  RunManifest m;
  m.command = "sdm compute";
  m.config_hash = config_hash({{"spacing_aware", spacing_aware}, {"single_scale", single_scale}});
  m.inputs["mask"] = mask_path.string();
  m.outputs["sdm"] = out.string();
  m.wall_time_s = t.seconds();
  write_manifest(m, sidecar(out));
  ctx.out << "max_in " << s.max_in << " max_out " << s.max_out << "\n";
  return kOk;
}

int run_train(Context& ctx, const fs::path& cfg_path, const fs::path& clean_dir, const fs::path& noisy_dir,
              const fs::path& out_dir) {
  Timer t;
  const auto cfg = train::train_config_from_json(read_json(cfg_path));
  const auto clean = train::load_dataset(clean_dir);
  const auto noisy = train::load_dataset(noisy_dir);
  train::FitHooks hooks;
  hooks.on_step = [&](int64_t step, const train::StepLosses& l) {
    if ((step + 1) % cfg.steps_per_epoch == 0)
      ctx.out << "epoch " << (step + 1) / cfg.steps_per_epoch << " l_seg " << l.l_seg << " l_reg " << l.l_reg
              << "\n";
  };
  const auto res = train::fit(cfg, clean, noisy, out_dir, hooks);
  RunManifest m;
  m.command = "train";
  m.config_hash = config_hash(train::to_json(cfg));
  m.seeds["train"] = cfg.seed;
  m.inputs = {{"config", cfg_path.string()}, {"clean", clean_dir.string()}, {"noisy", noisy_dir.string()}};
  m.outputs = {{"checkpoint", res.final_checkpoint.string()}, {"log", res.log.string()}};
  m.wall_time_s = t.seconds();
  write_manifest(m, out_dir / "manifest.json");
  ctx.out << "final checkpoint " << res.final_checkpoint.string() << "\n";
  return kOk;
}

int run_infer(Context& ctx, const fs::path& ckpt, const fs::path& image_path, const fs::path& out,
              const std::string& prob_out, const std::string& cfg_path, bool normalized, int threads) {
  Timer t;
  infer::InferConfig cfg;
  if (!cfg_path.empty()) cfg = infer::infer_config_from_json(read_json(cfg_path));
  cfg.threads = threads;
  infer::validate(cfg);
  const auto ck = train::load_checkpoint(ckpt);
  ImageVolume image = load_image(image_path);
  if (!normalized) image = clamp_normalize(image);
  const ImageVolume prob = infer::sliding_window_predict(*ck.model, image, cfg);
  const MaskVolume mask = infer::postprocess(prob, cfg);
  save_mask(mask, out);
  RunManifest m;
  m.command = "infer";
  ojson c = infer::to_json(cfg);
  c.erase("threads");
  m.config_hash = config_hash(c);
  m.inputs = {{"checkpoint", ckpt.string()}, {"image", image_path.string()}};
  m.outputs["mask"] = out.string();
  if (!prob_out.empty()) {
    save_image(prob, prob_out);
    m.outputs["prob"] = prob_out;
  }
  m.wall_time_s = t.seconds();
  write_manifest(m, sidecar(out));
  ctx.out << "foreground voxels " << count_foreground(mask) << "\n";
  return kOk;
}

int run_eval(Context& ctx, const fs::path& pred_path, const fs::path& gt_path, const std::string& centerline,
             const std::string& out) {
  Timer t;
  const MaskVolume pred = load_mask(pred_path);
  const MaskVolume gt = load_mask(gt_path);
  std::optional<std::vector<phantom::CenterlineBranch>> cl;
  if (!centerline.empty()) cl = phantom::load_centerline(centerline);
  const auto report = metrics::evaluate(pred, gt, cl);
  const std::string text = metrics::to_json(report).dump(2);
  ctx.out << text << "\n";
  if (!out.empty()) {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + out);
    f << text << "\n";
    RunManifest m;
    m.command = "eval";
    m.config_hash = config_hash(ojson::object());
    m.inputs = {{"pred", pred_path.string()}, {"gt", gt_path.string()}};
    if (!centerline.empty()) m.inputs["centerline"] = centerline;
    m.outputs["report"] = out;
    m.wall_time_s = t.seconds();
    write_manifest(m, sidecar(out));
  }
  return kOk;
}

int run_gradcheck(Context& ctx, int samples, uint64_t seed) {
  GradSuiteOptions opt;
  opt.samples = samples;
  opt.seed = seed;
  const auto rows = run_gradient_suite(opt);
  bool all = true;
  ctx.out << std::left << std::setw(24) << "case" << std::right << std::setw(8) << "coords" << std::setw(8) << "zero"
          << std::setw(14) << "max_rel_f32" << std::setw(14) << "max_rel_f64" << "  result\n";
  for (const auto& r : rows) {
    all = all && r.passed;
    ctx.out << std::left << std::setw(24) << r.name << std::right << std::setw(8) << r.coords << std::setw(8)
            << r.zero_coords << std::setw(14) << std::scientific << std::setprecision(3) << r.max_rel_f32
            << std::setw(14) << r.max_rel_f64 << std::defaultfloat << "  " << (r.passed ? "PASS" : "FAIL");
    if (!r.passed && !r.worst.empty()) ctx.out << "  " << r.worst;
    ctx.out << "\n";
  }
  ctx.out << (all ? "all gradient checks passed" : "gradient checks FAILED") << "\n";
  return all ? kOk : kRuntime;
}

int run_pipeline_cmd(Context& ctx, const std::string& preset, uint64_t seed, int threads, const std::string& out,
                     bool single) {
  Timer t;
  auto cfg = pipeline::preset(preset, seed);
  if (single) cfg = pipeline::single_stream(cfg);
  cfg.threads = threads;
  const fs::path dir = out.empty() ? fs::path("fda_runs") / (preset + "_seed" + std::to_string(seed) +
                                                             (single ? "_single" : ""))
                                   : fs::path(out);
  const auto res = pipeline::run_pipeline(cfg, dir);
  RunManifest m;
  m.command = "pipeline";
  m.config_hash = config_hash(pipeline::to_json(cfg));
  m.seeds = {{"pipeline", seed}, {"train", cfg.train.seed}};
  m.inputs = {{"preset", preset}, {"single_stream", single}, {"threads", threads}};
  m.outputs = {{"dir", dir.string()},
               {"checkpoint", res.final_checkpoint.string()},
               {"metrics", res.metrics_file.string()}};
  m.wall_time_s = t.seconds();
  write_manifest(m, dir / "manifest.json");
  ctx.out << pipeline::metrics_json(res).dump(2) << "\n";
  return kOk;
}

int execute(const std::vector<std::string>& args, Context& ctx) {
  CLI::App app{"Dual-stream airway segmentation on synthetic phantoms", "fda"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  int threads = 1;
  std::vector<CLI::Option*> thread_opts;
  auto add_threads = [&](CLI::App* sub) {
    thread_opts.push_back(
        sub->add_option("--threads", threads, "Worker threads, default 1 for bit-reproducibility (env FDA_THREADS)")
            ->check(CLI::PositiveNumber));
  };

  auto* ph = app.add_subcommand("phantom", "Synthetic phantom tools");
  ph->require_subcommand(1);
  auto* ph_gen = ph->add_subcommand("gen", "Generate a phantom (optionally corrupted) into a directory");
  std::string ph_spec, ph_out;
  ph_gen->add_option("--spec", ph_spec, "Phantom spec JSON, or {\"phantom\": ..., \"noise\": ...}")->required();
  ph_gen->add_option("--out", ph_out, "Output directory")->required();

  auto* sd = app.add_subcommand("sdm", "Signed distance maps");
  sd->require_subcommand(1);
  auto* sd_c = sd->add_subcommand("compute", "Normalized signed distance map of a mask");
  std::string sd_mask, sd_out;
  bool sd_spacing = false, sd_single = false;
  sd_c->add_option("--mask", sd_mask, "Input mask volume")->required();
  sd_c->add_option("--out", sd_out, "Output volume")->required();
  sd_c->add_flag("--spacing-aware", sd_spacing, "Measure distances in mm");
  sd_c->add_flag("--single-scale", sd_single, "Normalize both sides by the larger extreme");

  auto* tr = app.add_subcommand("train", "Train from clean and noisy phantom directories");
  std::string tr_cfg, tr_clean, tr_noisy, tr_out;
  tr->add_option("--config", tr_cfg, "Training config JSON")->required();
  tr->add_option("--clean", tr_clean, "Clean dataset directory")->required();
  tr->add_option("--noisy", tr_noisy, "Noisy dataset directory")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();

  auto* inf = app.add_subcommand("infer", "Sliding-window prediction of one volume");
  std::string in_ckpt, in_image, in_out, in_prob, in_cfg;
  bool in_normalized = false;
  inf->add_option("--ckpt", in_ckpt, "Checkpoint file")->required();
  inf->add_option("--image", in_image, "Input image volume (HU)")->required();
  inf->add_option("--out", in_out, "Output mask volume")->required();
  inf->add_option("--prob-out", in_prob, "Optional probability volume");
  inf->add_option("--config", in_cfg, "Inference config JSON");
  inf->add_flag("--normalized", in_normalized, "Input is already clamped and scaled to [0, 255]");
  add_threads(inf);

  auto* ev = app.add_subcommand("eval", "Score a predicted mask against ground truth");
  std::string ev_pred, ev_gt, ev_cl, ev_out;
  ev->add_option("--pred", ev_pred, "Predicted mask volume")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth mask volume")->required();
  ev->add_option("--centerline", ev_cl, "Phantom centerline JSON");
  ev->add_option("--out", ev_out, "Write the report JSON here");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  bool gc_all = false;
  int gc_samples = 96;
  uint64_t gc_seed = 7;
  gc->add_flag("--all", gc_all, "Run every registered case")->required();
  gc->add_option("--samples", gc_samples, "Sampled coordinates per leaf")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "Sampling seed");

  auto* pl = app.add_subcommand("pipeline", "Generate phantoms, train, infer and evaluate");
  std::string pl_preset = "toy", pl_out;
  uint64_t pl_seed = 1;
  bool pl_single = false;
  pl->add_option("--preset", pl_preset, "Experiment preset")->check(CLI::IsMember({"toy"}));
  pl->add_option("--seed", pl_seed, "Experiment seed");
  pl->add_option("--out", pl_out, "Output directory (default fda_runs/<preset>_seed<seed>)");
  pl->add_flag("--single-stream", pl_single, "Disable the noisy-domain encoder");
  add_threads(pl);

  if (args.size() <= 1) {
    ctx.err << app.help();
    return kUsage;
  }
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    ctx.out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    ctx.out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    ctx.out << kToolVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    ctx.err << "error: " << e.what() << "\n";
    const CLI::App* target = &app;
    for (auto* sub : {ph, sd, tr, inf, ev, gc, pl})
      if (sub->parsed()) target = sub;
    for (auto* sub : {ph_gen, sd_c})
      if (sub->parsed()) target = sub;
    ctx.err << target->help();
    return kUsage;
  }

  bool threads_flag = false;
  for (auto* o : thread_opts) threads_flag = threads_flag || o->count() > 0;
  if (const char* env = std::getenv("FDA_THREADS"); env && !threads_flag) {
    const std::string v = env;
    int n = 0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || end != v.data() + v.size() || n < 1) {
      ctx.err << "error: FDA_THREADS must be a positive integer, got '" << v << "'\n";
      return kUsage;
    }
    threads = n;
  }

  if (ph_gen->parsed()) return run_phantom_gen(ctx, ph_spec, ph_out);
  if (sd_c->parsed()) return run_sdm(ctx, sd_mask, sd_out, sd_spacing, sd_single);
  if (tr->parsed()) return run_train(ctx, tr_cfg, tr_clean, tr_noisy, tr_out);
  if (inf->parsed()) return run_infer(ctx, in_ckpt, in_image, in_out, in_prob, in_cfg, in_normalized, threads);
  if (ev->parsed()) return run_eval(ctx, ev_pred, ev_gt, ev_cl, ev_out);
  if (gc->parsed()) return run_gradcheck(ctx, gc_samples, gc_seed);
  if (pl->parsed()) return run_pipeline_cmd(ctx, pl_preset, pl_seed, threads, pl_out, pl_single);
  ctx.err << app.help();
  return kUsage;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  try {
    return execute(args, ctx);
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

int dispatch(int argc, char** argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace fda::cli
