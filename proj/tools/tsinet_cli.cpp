#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "tsinet/checkpoint.hpp"
#include "tsinet/config.hpp"
#include "tsinet/errors.hpp"
#include "tsinet/image_io.hpp"
#include "tsinet/metrics.hpp"
#include "tsinet/training.hpp"

namespace fs = std::filesystem;
using namespace tsinet;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Args {
  std::string config, data, out, checkpoint, resume;
  std::string split = "test";
  double threshold = 0.5;
  std::optional<std::uint64_t> seed;
  bool overwrite = false;
};

RunConfig load_config(const Args& a) {
  return a.config.empty() ? run_config_from_json(nlohmann::json::object()) : load_run_config(a.config);
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p); }

int cmd_gen(const Args& a) {
  RunConfig cfg = load_config(a);
  if (a.seed) cfg.data.seed = *a.seed;
  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_directory(out)) throw DataError(out.string() + " exists and is not a directory");
  if (non_empty_dir(out)) {
    if (!a.overwrite) throw DataError(out.string() + " is not empty; pass --overwrite to replace the dataset");
    for (const auto& e : fs::directory_iterator(out)) {
      const auto name = e.path().filename().string();
      if (e.path().extension() == ".dseq" || name == "manifest.json" || name == "config.json") fs::remove(e.path());
    }
  }
  const auto warnings = write_dataset(cfg.data, out);
  write_resolved_config(cfg, out);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << cfg.data.count << " sequences to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const Args& a) {
  RunConfig cfg = load_config(a);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.train.seed = *a.seed;
  }
  const fs::path out(a.out);
  if (a.resume.empty() && fs::exists(out / "last.ckpt") && !a.overwrite) {
    throw DataError(out.string() + " already holds a run; pass --resume or --overwrite");
  }
  const Dataset data = Dataset::load(a.data);
  write_resolved_config(cfg, out);
  TrainOptions opt;
  if (!a.resume.empty()) opt.resume = fs::path(a.resume);
  const auto t0 = std::chrono::steady_clock::now();
  opt.on_record = [&](const nlohmann::json& r) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (r["kind"] == "epoch") {
      std::fprintf(stderr, "[%7.1fs] epoch %d  val dice %.4f  best %.4f (epoch %d)\n", secs, r["epoch"].get<int>(),
                   r["val"]["dice"].get<double>(), r["best_dice"].get<double>(), r["best_epoch"].get<int>());
    } else if (r["kind"] == "step" && r["step"].get<std::int64_t>() % 16 == 0) {
      std::fprintf(stderr, "[%7.1fs] step %lld  lr %.3g  loss %.4f\n", secs, (long long)r["step"].get<std::int64_t>(),
                   r["lr"].get<double>(), r["total"].get<double>());
    }
  };
  const TrainResult res = train(cfg.model, cfg.loss, cfg.train, data, out, opt);
  std::cout << nlohmann::json{{"epochs", res.epochs_done},
                              {"steps", res.steps_done},
                              {"best_val_dice", res.best_dice},
                              {"best_epoch", res.best_epoch},
                              {"last", res.last_checkpoint.string()},
                              {"best", res.best_checkpoint.string()}}
                   .dump()
            << "\n";
  return kOk;
}

int cmd_eval(const Args& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  TsiNet<float> net = restore(ckpt);
  const Dataset data = Dataset::load(a.data);
  EvalOptions opt;
  opt.threshold = a.threshold;
  opt.warn = [](const std::string& w) { std::cerr << "warning: " << w << "\n"; };
  const MetricsReport report = evaluate(net, data, a.split, opt);
  const std::string jsonl = report.to_jsonl();
  if (!a.out.empty()) {
    const fs::path out(a.out);
    fs::create_directories(out);
    std::ofstream f(out / ("metrics_" + a.split + ".jsonl"));
    if (!f) throw DataError("cannot write metrics in " + out.string());
    f << jsonl;
    std::ofstream prov(out / "config.json");
    prov << nlohmann::json{{"checkpoint", a.checkpoint},
                           {"data", a.data},
                           {"split", a.split},
                           {"threshold", a.threshold},
                           {"model", to_json(ckpt.model)},
                           {"checkpoint_meta", ckpt.meta}}
                .dump(2)
         << "\n";
  }
  // The last line is the aggregate record.
  std::cout << jsonl.substr(jsonl.rfind('\n', jsonl.size() - 2) + 1);
  return kOk;
}

int cmd_infer(const Args& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  TsiNet<float> net = restore(ckpt);
  const DsaSequence raw = read_dseq(a.data);
  DsaSequence seq{zscore(raw.frames), raw.mask, raw.id, raw.seed};
  const std::size_t multiple = std::size_t(net.config().spatial_multiple());
  DsaSequence src = raw;
  if (seq.height() % multiple || seq.width() % multiple) {
    std::cerr << "warning: center-cropping " << seq.height() << "x" << seq.width() << " to a multiple of " << multiple
              << "\n";
    seq = center_crop_to_multiple(seq, multiple);
    src = center_crop_to_multiple(raw, multiple);
  }
  const Tensor<float> logits = predict_logits(net, seq.frames);
  const BinaryMask pred = predict_mask(logits, a.threshold);
  const std::string prefix = a.out;
  if (const fs::path parent = fs::path(prefix).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_pgm(mask_image(pred), prefix + "_mask.pgm");
  nlohmann::json summary{{"id", raw.id}, {"mask", prefix + "_mask.pgm"}, {"vessel_pixels", pred.count()}};
  if (seq.mask.count() > 0) {
    write_ppm(render_overlay(mip(src.frames), pred, &seq.mask), prefix + "_overlay.ppm");
    const ConfusionCounts c = confusion(pred, seq.mask);
    summary["overlay"] = prefix + "_overlay.ppm";
    summary["tp"] = c.tp;
    summary["fp"] = c.fp;
    summary["fn"] = c.fn;
    summary["tn"] = c.tn;
  }
  std::cout << summary.dump() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TSI-Net: vessel segmentation from 2D+time angiography sequences"};
  app.require_subcommand(1);
  Args a;
  auto seed_opt = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { a.seed = s; }, "Override the seed");
  };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--config", a.config, "Run config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--out", a.out, "Dataset directory")->required();
  gen->add_flag("--overwrite", a.overwrite, "Replace an existing dataset");
  seed_opt(gen);

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", a.config, "Run config (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--data", a.data, "Dataset directory")->required();
  tr->add_option("--out", a.out, "Run directory")->required();
  tr->add_option("--resume", a.resume, "Continue from a last.ckpt");
  tr->add_flag("--overwrite", a.overwrite, "Start over in a run directory that already has checkpoints");
  seed_opt(tr);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", a.data, "Dataset directory")->required();
  ev->add_option("--split", a.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--threshold", a.threshold, "Probability threshold")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--out", a.out, "Directory for the metrics report");

  auto* inf = app.add_subcommand("infer", "Segment one DSEQ file");
  inf->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  inf->add_option("--data", a.data, "DSEQ file")->required();
  inf->add_option("--out", a.out, "Output prefix (writes PREFIX_mask.pgm, PREFIX_overlay.ppm)")->required();
  inf->add_option("--threshold", a.threshold, "Probability threshold")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(a);
    if (tr->parsed()) return cmd_train(a);
    if (ev->parsed()) return cmd_eval(a);
    if (inf->parsed()) return cmd_infer(a);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what();
    if (e.byte_offset() >= 0) std::cerr << " (byte offset " << e.byte_offset() << ")";
    std::cerr << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
