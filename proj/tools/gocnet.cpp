// gocnet: synth, preprocess, train, eval and inspect subcommands.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include "gocnet/config.hpp"
#include "gocnet/evalmetrics.hpp"
#include "gocnet/train.hpp"

namespace fs = std::filesystem;
using namespace gocnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("-c,--config", o.config, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "override, e.g. --set train.epochs=5 (repeatable)");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("-o,--out", o.out, "output directory (relative paths go under $GOCNET_OUT)");
}

RunConfig resolve(const CommonOpts& o, std::vector<std::string> extra) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  apply_overrides(cfg, o.sets);
  if (o.seed) extra.push_back("run.seed=" + std::to_string(*o.seed));
  if (!o.out.empty()) extra.push_back("run.out_dir=" + o.out);
  apply_overrides(cfg, extra);
  finalize(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  const fs::path dir = output_path(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "resolved.cfg", to_ini(cfg));
  return dir;
}

int cmd_synth(const CommonOpts& o, const std::string& kind, std::optional<std::size_t> count) {
  std::vector<std::string> extra;
  if (!kind.empty()) extra.push_back("synth.kind=" + kind);
  if (count) extra.push_back("synth.count=" + std::to_string(*count));
  RunConfig cfg = resolve(o, extra);
  const fs::path dir = prepare_out_dir(cfg);
  const DatasetManifest m = synth_generate(cfg.synth, dir);
  std::cout << "wrote " << m.records.size() << " images (" << m.count(Split::Train) << " train, "
            << m.count(Split::Test) << " test) and " << (dir / "manifest.csv").string() << "\n";
  return kExitOk;
}

int cmd_preprocess(const std::string& input, const std::string& output, const std::string& op_name) {
  std::vector<KernelName> ops;
  if (op_name == "all") {
    for (const auto& k : kernel_registry()) ops.push_back(k.name);
  } else {
    ops.push_back(parse_kernel_name(op_name));
  }
  if (!fs::is_directory(input)) throw ConfigError("input directory does not exist: " + input);
  const fs::path out_dir = output_path(output);
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::size_t ok = 0;
  for (const auto& f : files) {
    try {
      const Tensor4<float> img = to_tensor(read_image(f));
      for (KernelName op : ops) {
        const std::string name =
            ops.size() == 1 ? f.stem().string() + ".png" : f.stem().string() + "_" + std::string(kernel_id(op)) + ".png";
        write_png(out_dir / name, trace_image(img, op));
      }
      ++ok;
    } catch (const DataError& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
    }
  }
  std::cout << "wrote traces for " << ok << " of " << files.size() << " files to " << out_dir.string() << "\n";
  return ok == 0 ? kExitRuntime : kExitOk;
}

int cmd_train(const CommonOpts& o, const std::string& variant, std::optional<std::size_t> epochs,
              const std::string& manifest, const std::string& resume, bool verbose) {
  std::vector<std::string> extra;
  if (!variant.empty()) extra.push_back("model.variant=" + variant);
  if (epochs) extra.push_back("train.epochs=" + std::to_string(*epochs));
  if (!manifest.empty()) extra.push_back("data.manifest=" + manifest);
  RunConfig cfg = resolve(o, extra);
  const fs::path dir = prepare_out_dir(cfg);
  const DatasetManifest m = load_manifest(output_path(cfg.manifest));
  if (m.count(Split::Train) == 0 || m.count(Split::Test) == 0) {
    throw DataError("manifest needs at least one train and one test record");
  }
  TrainOptions opts;
  opts.out_dir = dir;
  opts.verbose = verbose;
  if (!resume.empty()) opts.resume = fs::path(resume);
  const TrainResult r = train_run(cfg.model, cfg.train, cfg.augment, m, opts);
  for (const auto& e : r.log) std::cout << e.json() << "\n";
  std::cout << "final checkpoint " << r.final_checkpoint.string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& split,
             const std::string& scores, const std::string& report_path, const std::string& svg_path,
             const std::string& scores_out) {
  ScoreSet set;
  if (!scores.empty()) {
    if (!checkpoint.empty()) throw ConfigError("use either --scores or --checkpoint, not both");
    set = load_scores_csv(scores);
  } else {
    if (checkpoint.empty() || manifest.empty()) throw ConfigError("eval needs --scores or --checkpoint with --manifest");
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    Model<float> model = restore_model(ckpt);
    const DatasetManifest m = load_manifest(manifest);
    const ImageSet data = load_images(m, parse_split(split), model.spec.backbone.image_size);
    if (data.labels.empty()) throw DataError("manifest has no " + split + " records");
    set = score_images(model, data.images, data.labels, normalization_from(ckpt));
    if (!scores_out.empty()) {
      std::ostringstream os;
      os << "score,label\n";
      os.precision(17);
      for (std::size_t i = 0; i < set.size(); ++i) os << set.scores[i] << ',' << set.labels[i] << '\n';
      write_text(output_path(scores_out), os.str());
    }
  }
  const EvalReport report = evaluate(set);
  const std::string json = report_json(report);
  if (report_path.empty()) {
    std::cout << json << "\n";
  } else {
    write_text(output_path(report_path), json + "\n");
    std::cout << "acc " << report.acc << " auc " << report.auc << " eer " << report.eer << "\n";
  }
  if (!svg_path.empty()) write_text(output_path(svg_path), roc_svg(report));
  return kExitOk;
}

int cmd_inspect(const std::string& checkpoint, const CommonOpts& o) {
  std::optional<Model<float>> model;
  if (!checkpoint.empty()) {
    model.emplace(restore_model(load_checkpoint(checkpoint)));
  } else {
    model.emplace(build<float>(resolve(o, {}).model));
  }
  std::cout << parameter_ledger(*model);
  // Fixed entries of a freshly built model come straight from the operator registry.
  const Model<float> reference = build<float>(model->spec);
  for (const auto& e : model->params.entries()) {
    if (e.kind != ParamKind::Fixed) continue;
    const bool same = bit_equal(e.var.value(), reference.params.entry(e.name).var.value());
    std::cout << "fixed " << e.name << " registry " << (same ? "match" : "MISMATCH") << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-operator face-forgery detector"};
  app.require_subcommand(1);

  CommonOpts synth_o, train_o, inspect_o;
  std::string kind;
  std::optional<std::size_t> count;
  auto* synth = app.add_subcommand("synth", "generate the synthetic forgery corpus");
  add_common(synth, synth_o);
  synth->add_option("--kind", kind, "blend-patch, periodic-fingerprint or mixed");
  synth->add_option("--count", count, "number of real/fake pairs");

  std::string pre_in, pre_out = "traces", pre_op = "prewitt-d";
  auto* pre = app.add_subcommand("preprocess", "write gradient-operator trace images");
  pre->add_option("-i,--input", pre_in, "directory of PNG/PPM images")->required();
  pre->add_option("-o,--out", pre_out, "output directory");
  pre->add_option("--operator", pre_op, "operator id or 'all'");

  std::string variant, manifest, resume;
  std::optional<std::size_t> epochs;
  bool verbose = false;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, train_o);
  train->add_option("--variant", variant, "model variant");
  train->add_option("--epochs", epochs, "number of epochs");
  train->add_option("--manifest", manifest, "dataset manifest");
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_flag("-v,--verbose", verbose, "progress on stderr");

  std::string ev_ckpt, ev_manifest, ev_split = "test", ev_scores, ev_report, ev_svg, ev_scores_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a score file");
  eval->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--manifest", ev_manifest, "dataset manifest")->check(CLI::ExistingFile);
  eval->add_option("--split", ev_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--scores", ev_scores, "CSV of score,label")->check(CLI::ExistingFile);
  eval->add_option("--report", ev_report, "write the JSON report here instead of stdout");
  eval->add_option("--roc-svg", ev_svg, "write the ROC curve as SVG");
  eval->add_option("--scores-out", ev_scores_out, "write per-sample scores as CSV");

  std::string in_ckpt;
  auto* inspect = app.add_subcommand("inspect", "print the parameter ledger");
  add_common(inspect, inspect_o);
  inspect->add_option("--checkpoint", in_ckpt, "checkpoint to inspect")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(synth_o, kind, count);
    if (*pre) return cmd_preprocess(pre_in, pre_out, pre_op);
    if (*train) return cmd_train(train_o, variant, epochs, manifest, resume, verbose);
    if (*eval) return cmd_eval(ev_ckpt, ev_manifest, ev_split, ev_scores, ev_report, ev_svg, ev_scores_out);
    if (*inspect) return cmd_inspect(in_ckpt, inspect_o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
