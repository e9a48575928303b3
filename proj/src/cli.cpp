#include "peac/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "peac/analysis.hpp"
#include "peac/checkpoint.hpp"
#include "peac/config.hpp"
#include "peac/data.hpp"
#include "peac/errors.hpp"
#include "peac/probe.hpp"
#include "peac/pretrain.hpp"

namespace peac {

namespace {

constexpr const char* kDataRootEnv = "PEAC_DATA_ROOT";

std::filesystem::path data_or_env(const std::string& flag, const char* what) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  throw ConfigError(std::string("missing ") + what + " (pass the flag or set " + kDataRootEnv + ")");
}

Image load_square(const std::filesystem::path& path, int side) {
  if (!std::filesystem::exists(path)) throw DataError("image not found: " + path.string());
  const Image img = read_image(path);
  if (img.rows() == side && img.cols() == side) return img;
  return resize_bilinear(img, side, side);
}

struct PretrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_steps;
  bool quiet = false;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
  TrainState state;
  std::unique_ptr<ImageDirDataset> data;
  const auto data_dir = data_or_env(a.data, "--data");
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    if (!a.config.empty() || !a.sets.empty() || a.seed)
      throw ConfigError("--resume restores the stored config; --config/--set/--seed are not accepted with it");
    if (a.max_steps) state.config.max_steps = *a.max_steps;
    data = std::make_unique<ImageDirDataset>(data_dir, seed_load_side(state.config.grid()));
  } else {
    TrainConfig cfg;
    if (!a.config.empty()) cfg = load_config(a.config, cfg);
    for (const std::string& kv : a.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (a.seed) cfg.seed = *a.seed;
    if (a.max_steps) cfg.max_steps = *a.max_steps;
    cfg.validate();
    data = std::make_unique<ImageDirDataset>(data_dir, seed_load_side(cfg.grid()));
    state = init_train_state(cfg, data->size());
  }
  if (a.out.empty()) throw ConfigError("pretrain needs --out");

  out << "# pretrain seed=" << state.config.seed << " variant=" << state.config.toggles.variant()
      << " images=" << data->size() << " steps_per_epoch=" << state.steps_per_epoch
      << " total_steps=" << state.total_steps() << " start_step=" << state.step << "\n";
  for (const auto& w : data->warnings()) std::cerr << "warning: " << w << "\n";
  std::filesystem::create_directories(a.out);
  {
    std::ofstream cfg_out(std::filesystem::path(a.out) / "config.txt");
    cfg_out << to_text(state.config);
  }
  PretrainOptions opt;
  opt.out_dir = a.out;
  opt.progress = a.quiet ? nullptr : &out;
  const auto records = run_pretraining(state, *data, opt);
  out << "# done steps=" << records.size() << " final_step=" << state.step << "\n";
  return kExitOk;
}

int cmd_phantoms(const std::string& dir, int count, std::uint64_t seed, int side, std::ostream& out) {
  if (count < 1) throw ConfigError("--count must be positive");
  materialize_phantoms(dir, static_cast<std::size_t>(count), seed, side);
  out << "# phantoms seed=" << seed << " count=" << count << " side=" << side << " out=" << dir << "\n";
  return kExitOk;
}

struct AnalysisArgs {
  std::string ckpt;
  int stride = 4;
  std::string source = "features";
  std::uint64_t seed = 0;
};

int cmd_match(const AnalysisArgs& a, const std::string& image_a, const std::string& image_b, const std::string& path,
              int k, std::ostream& out) {
  const TrainState st = load_checkpoint(a.ckpt);
  const EncoderConfig& ec = st.model.config;
  const auto src = parse_embedding_source(a.source);
  const Image ia = load_square(image_a, ec.crop_side());
  const Image ib = load_square(image_b, ec.crop_side());
  const auto ma = dense_embeddings(ec, st.model.teacher, ia, ec.patch, a.stride, src, image_a);
  const auto mb = dense_embeddings(ec, st.model.teacher, ib, ec.patch, a.stride, src, image_b);
  const auto bbs = best_buddies(ma, mb);
  const auto top = top_pairs(ma, mb, bbs, k, a.seed);

  std::ofstream file;
  std::ostream* dst = &out;
  if (!path.empty()) {
    file.open(path);
    if (!file) throw DataError("cannot write " + path);
    dst = &file;
  }
  *dst << "# match seed=" << a.seed << " ckpt=" << a.ckpt << " window=" << ec.patch << " stride=" << a.stride
       << " source=" << a.source << " buddies=" << bbs.size() << "\n";
  *dst << "# row_a col_a row_b col_b similarity (window top-left, pixels)\n";
  *dst << std::setprecision(9);
  for (const auto& p : top) {
    *dst << ma.pixel(p.a / ma.grid) << " " << ma.pixel(p.a % ma.grid) << " " << mb.pixel(p.b / mb.grid) << " "
         << mb.pixel(p.b % mb.grid) << " " << p.similarity << "\n";
  }
  if (!path.empty()) out << "# match wrote " << top.size() << " pairs to " << path << "\n";
  return kExitOk;
}

int cmd_coseg(const AnalysisArgs& a, const std::string& dir, int k, const std::string& out_dir, std::ostream& out) {
  const TrainState st = load_checkpoint(a.ckpt);
  const EncoderConfig& ec = st.model.config;
  const ImageDirDataset data(dir, ec.crop_side());
  std::vector<Image> images;
  for (std::size_t i = 0; i < data.size(); ++i) images.push_back(load_square(data.path(i), ec.crop_side()));
  CosegOptions opt;
  opt.clusters = k;
  opt.window = ec.patch;
  opt.stride = a.stride;
  opt.source = parse_embedding_source(a.source);
  opt.seed = a.seed;
  const CosegResult res = cosegment(ec, st.model.teacher, images, opt);
  std::filesystem::create_directories(out_dir);
  out << "# coseg seed=" << a.seed << " k=" << k << " stride=" << a.stride << " common=";
  for (std::size_t i = 0; i < res.common.size(); ++i) out << (i ? "," : "") << res.common[i] + 1;
  out << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto name = std::filesystem::path(data.name(i)).stem().string() + "_mask.png";
    write_label_png(std::filesystem::path(out_dir) / name, res.masks[i]);
    out << name << "\n";
  }
  return kExitOk;
}

int cmd_probe(const AnalysisArgs& a, const std::string& dir_flag, bool random_init, std::ostream& out) {
  const TrainState st = load_checkpoint(a.ckpt);
  const EncoderConfig& ec = st.model.config;
  const auto dir = data_or_env(dir_flag, "--data");
  const ImageDirDataset data(dir, ec.crop_side());
  std::map<std::string, int> label_of;
  for (const auto& [name, cls] : read_labels(dir)) label_of[name] = cls;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto it = label_of.find(data.name(i));
    if (it == label_of.end()) throw DataError("no label for " + data.name(i) + " in labels.csv");
    labels.push_back(it->second);
  }
  const ParamSet params =
      random_init ? make_student_teacher(ec, st.config.seed, st.config.ema_alpha).teacher : st.model.teacher;
  const Matrix feats = extract_features(ec, params, data);
  ProbeResult r = linear_probe(feats, labels, a.seed);
  r.checkpoint = random_init ? std::string("random-init") : std::filesystem::path(a.ckpt).filename().string();
  out << "# probe seed=" << a.seed << "\n" << to_json(r) << "\n";
  return kExitOk;
}

int cmd_stability(const std::string& ckpt_dir, const std::string& data_dir, int pairs, std::uint64_t seed,
                  std::ostream& out) {
  const auto paths = list_checkpoints(ckpt_dir);
  std::vector<StabilityInput> inputs;
  GridSpec spec;
  for (const auto& p : paths) {
    const TrainState st = load_checkpoint(p);
    if (inputs.empty()) spec = st.config.grid();
    inputs.push_back({p.filename().string(), st.model.config, st.model.teacher});
  }
  if (inputs.size() < 2) throw ConfigError("stability needs at least 2 checkpoints in " + ckpt_dir);
  std::vector<Image> images;
  if (!data_dir.empty()) {
    const ImageDirDataset data(data_dir, seed_load_side(spec));
    for (std::size_t i = 0; i < data.size(); ++i) images.push_back(data.image(i));
  } else {
    for (auto& ph : make_phantom_set(16, seed)) images.push_back(std::move(ph.image));
  }
  const auto rep = matching_stability(inputs, spec, images, pairs, seed);
  out << "# stability seed=" << seed << " pairs=" << pairs << " checkpoints=" << inputs.size()
      << " images=" << (data_dir.empty() ? "phantoms" : data_dir) << "\n";
  out << "checkpoint grid_error similarity_error matched degenerate\n" << std::setprecision(9);
  for (const auto& r : rep.rows)
    out << r.checkpoint << " " << r.grid_error << " " << r.similarity_error << " " << r.matched << " "
        << r.degenerate << "\n";
  out << "# similarity_error mean=" << rep.similarity_error_mean << " variance=" << rep.similarity_error_variance
      << " grid_error max=" << rep.grid_error_max << "\n";
  return kExitOk;
}

int cmd_export(const AnalysisArgs& a, const std::string& image, const std::string& path, std::ostream& out) {
  const TrainState st = load_checkpoint(a.ckpt);
  const EncoderConfig& ec = st.model.config;
  const Image img = load_square(image, ec.crop_side());
  const auto map =
      dense_embeddings(ec, st.model.teacher, img, ec.patch, a.stride, parse_embedding_source(a.source),
                       std::filesystem::path(image).filename().string());
  write_embeddings(path, map);
  out << "# export-embeddings grid=" << map.grid << " dim=" << map.dim() << " window=" << map.window
      << " stride=" << map.stride << " out=" << path << "\n";
  return kExitOk;
}

void add_analysis_flags(CLI::App* sub, AnalysisArgs& a, bool needs_seed) {
  sub->add_option("--ckpt", a.ckpt, "checkpoint file")->required();
  sub->add_option("--stride", a.stride, "dense embedding stride in pixels")->capture_default_str();
  sub->add_option("--source", a.source, "embedding source: features | local")->capture_default_str();
  if (needs_seed) sub->add_option("--seed", a.seed, "clustering / split seed")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grid-aligned two-crop self-supervised pretraining and correspondence tools", "peac"};
  app.require_subcommand(1);

  PretrainArgs pa;
  std::uint64_t pretrain_seed = 0;
  std::int64_t pretrain_max_steps = 0;
  auto* pretrain = app.add_subcommand("pretrain", "train a student/teacher pair");
  pretrain->add_option("--config", pa.config, "key = value config file");
  pretrain->add_option("--data", pa.data, "image directory (default: $PEAC_DATA_ROOT)");
  pretrain->add_option("--out", pa.out, "output directory for checkpoints and the log")->required();
  pretrain->add_option("--set", pa.sets, "override one config key (key=value), repeatable");
  auto* seed_opt = pretrain->add_option("--seed", pretrain_seed, "config key 'seed'");
  auto* steps_opt = pretrain->add_option("--max-steps", pretrain_max_steps, "config key 'max_steps'");
  pretrain->add_option("--resume", pa.resume, "continue from a checkpoint");
  pretrain->add_flag("--quiet", pa.quiet, "no progress lines");

  std::string ph_out;
  int ph_count = 64, ph_side = 128;
  std::uint64_t ph_seed = 0;
  auto* phantoms = app.add_subcommand("phantoms", "write a synthetic phantom dataset");
  phantoms->add_option("--out", ph_out, "output directory")->required();
  phantoms->add_option("--count", ph_count, "number of images")->capture_default_str();
  phantoms->add_option("--seed", ph_seed, "generator seed")->capture_default_str();
  phantoms->add_option("--side", ph_side, "image side in pixels")->capture_default_str();

  AnalysisArgs ma;
  std::string img_a, img_b, match_out;
  int match_k = 10;
  auto* match = app.add_subcommand("match", "top best-buddy correspondences between two images");
  add_analysis_flags(match, ma, true);
  match->add_option("--image-a", img_a, "first image")->required();
  match->add_option("--image-b", img_b, "second image")->required();
  match->add_option("--out", match_out, "output file (default: stdout)");
  match->add_option("--k", match_k, "number of pairs")->capture_default_str();

  AnalysisArgs ca;
  std::string coseg_dir, coseg_out = "coseg";
  int coseg_k = 4;
  auto* coseg = app.add_subcommand("coseg", "zero-shot co-segmentation masks");
  add_analysis_flags(coseg, ca, true);
  coseg->add_option("--images", coseg_dir, "image directory")->required();
  coseg->add_option("--k", coseg_k, "cluster count")->capture_default_str();
  coseg->add_option("--out", coseg_out, "mask output directory")->capture_default_str();

  AnalysisArgs pra;
  std::string probe_dir;
  bool probe_random = false;
  auto* probe = app.add_subcommand("probe", "linear probe on frozen teacher features");
  add_analysis_flags(probe, pra, true);
  probe->add_option("--data", probe_dir, "labelled image directory (default: $PEAC_DATA_ROOT)");
  probe->add_flag("--random-init", probe_random, "probe the checkpoint config's untrained initialisation");

  std::string st_dir, st_data;
  int st_pairs = 32;
  std::uint64_t st_seed = 0;
  auto* stability = app.add_subcommand("stability", "grid vs similarity matching across checkpoints");
  stability->add_option("--ckpts", st_dir, "directory of .ckpt files")->required();
  stability->add_option("--data", st_data, "image directory (default: in-memory phantoms)");
  stability->add_option("--pairs", st_pairs, "crop pairs per checkpoint")->capture_default_str();
  stability->add_option("--seed", st_seed, "crop sampling seed")->capture_default_str();

  AnalysisArgs ea;
  std::string ex_image, ex_out;
  auto* exporter = app.add_subcommand("export-embeddings", "write a dense embedding map");
  add_analysis_flags(exporter, ea, false);
  exporter->add_option("--image", ex_image, "input image")->required();
  exporter->add_option("--out", ex_out, "output file")->required();

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (pretrain->parsed()) {
      if (seed_opt->count()) pa.seed = pretrain_seed;
      if (steps_opt->count()) pa.max_steps = pretrain_max_steps;
      return cmd_pretrain(pa, out);
    }
    if (phantoms->parsed()) return cmd_phantoms(ph_out, ph_count, ph_seed, ph_side, out);
    if (match->parsed()) return cmd_match(ma, img_a, img_b, match_out, match_k, out);
    if (coseg->parsed()) return cmd_coseg(ca, coseg_dir, coseg_k, coseg_out, out);
    if (probe->parsed()) return cmd_probe(pra, probe_dir, probe_random, out);
    if (stability->parsed()) return cmd_stability(st_dir, st_data, st_pairs, st_seed, out);
    if (exporter->parsed()) return cmd_export(ea, ex_image, ex_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
  err << "error: no command\n";
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace peac
