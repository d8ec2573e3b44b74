#include "vins/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vins/error.hpp"
#include "vins/evaluation.hpp"
#include "vins/inference.hpp"
#include "vins/training.hpp"

namespace vins {

namespace fs = std::filesystem;

namespace {

// section.key -> default
const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"data.dir", ""},
      {"data.videos", "32"},
      {"data.frames", "32"},
      {"data.height", "96"},
      {"data.width", "128"},
      {"data.objects", "3"},
      {"patch.height", "64"},
      {"patch.width", "32"},
      {"patch.mask_frac_w", "0.5"},
      {"patch.mask_frac_h", "0.75"},
      {"patch.object_margin", "0.1"},
      {"model.base_filters", "32"},
      {"model.levels", "3"},
      {"model.history_len", "2"},
      {"model.history_weights", "0.5,0.5"},
      {"model.disc_filters", "32"},
      {"model.embedding_hidden", "32"},
      {"model.video_window", "4"},
      {"model.conditioning", "embedding"},
      {"train.lr", "2e-4"},
      {"train.beta1", "0.5"},
      {"train.beta2", "0.999"},
      {"train.adam_eps", "1e-8"},
      {"train.batch_size", "1"},
      {"train.lambda_fake", "0.1"},
      {"train.noise_std", "0.01"},
      {"train.iters", "1000"},
      {"train.sequence_length", "0"},
      {"train.log_every", "50"},
      {"insert.source", ""},
      {"insert.object_id", "-1"},
      {"insert.target", ""},
      {"insert.placement", ""},
      {"insert.start", "0"},
      {"insert.end", "0"},
      {"insert.static", "false"},
      {"insert.feather", "2"},
      {"insert.allow_untrained", "false"},
      {"eval.count", "200"},
      {"eval.frames", "1"},
      {"eval.method", "model"},
      {"eval.iou_threshold", "0.5"},
      {"eval.detector", "tinyconv"},
      {"eval.detector_iters", "1500"},
      {"baseline.kind", "adv_only"},
  };
  return d;
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(key, "expected comma-separated numbers, got '" + text + "'");
    }
  }
  return out;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  const std::string full = section + "." + key;
  if (!values_.count(full)) throw ConfigError(full, "unknown key");
  values_[full] = value;
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError(assignment, "expected section.key=value");
  }
  set(assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
}

void RunConfig::load(const fs::path& path) {
  namespace pt = boost::property_tree;
  if (!fs::exists(path)) throw IoError("config '" + path.string() + "' not found");
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), static_cast<int>(e.line()));
  }
  for (const auto& [section, sec] : tree) {
    if (sec.empty()) throw ConfigError(section, "key outside any section");
    for (const auto& [key, value] : sec) set(section, key, value.data());
  }
}

std::string RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown key");
  return it->second;
}

int RunConfig::integer(const std::string& key) const {
  const std::string v = str(key);
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "expected an integer, got '" + v + "'");
}

double RunConfig::real(const std::string& key) const {
  const std::string v = str(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "expected a number, got '" + v + "'");
}

bool RunConfig::flag(const std::string& key) const {
  const std::string v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string RunConfig::dump() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
  return s;
}

namespace {

struct Context {
  RunConfig cfg;
  std::uint64_t seed = 1;
  fs::path out;
  std::string data;
  std::string checkpoint;
  std::string init;
  std::ostream* log = nullptr;
  std::ostream* summary = nullptr;
};

PatchSpec patch_of(const RunConfig& c) {
  PatchSpec p{c.integer("patch.height"), c.integer("patch.width")};
  p.validate();
  return p;
}

BatchOptions batch_options(const RunConfig& c) {
  BatchOptions o;
  o.patch = patch_of(c);
  o.coverage = {c.real("patch.mask_frac_w"), c.real("patch.mask_frac_h")};
  o.object_margin = c.real("patch.object_margin");
  return o;
}

GeneratorConfig generator_of(const RunConfig& c, bool video) {
  GeneratorConfig g;
  g.base_filters = c.integer("model.base_filters");
  g.n_levels = c.integer("model.levels");
  g.patch = patch_of(c);
  g.history_len = video ? c.integer("model.history_len") : 0;
  g.history_weights = video ? parse_list("model.history_weights", c.str("model.history_weights")) : std::vector<double>{};
  try {
    g.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("model", e.what());
  }
  return g;
}

DiscConfig disc_of(const RunConfig& c, bool video, std::optional<DiscConditioning> cond = std::nullopt) {
  DiscConfig d;
  d.base_filters = c.integer("model.disc_filters");
  d.embedding_hidden = c.integer("model.embedding_hidden");
  d.video_window = c.integer("model.video_window");
  d.video = video;
  try {
    d.conditioning = cond ? *cond : parse_conditioning(c.str("model.conditioning"));
    d.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("model", e.what());
  }
  return d;
}

TrainConfig train_of(const RunConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.lr = c.real("train.lr");
  t.beta1 = c.real("train.beta1");
  t.beta2 = c.real("train.beta2");
  t.adam_eps = c.real("train.adam_eps");
  t.batch_size = c.integer("train.batch_size");
  t.lambda_fake = c.real("train.lambda_fake");
  t.noise_std = c.real("train.noise_std");
  t.iters = c.integer("train.iters");
  t.sequence_length = c.integer("train.sequence_length");
  t.seed = seed;
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("train", e.what());
  }
  return t;
}

Dataset load_data(const Context& ctx) {
  const std::string dir = !ctx.data.empty() ? ctx.data : ctx.cfg.str("data.dir");
  if (dir.empty()) throw ConfigError("data.dir", "no dataset given (--data or data.dir)");
  return load_dataset(dir);
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

StepCallback logger(const Context& ctx) {
  const int every = std::max(1, ctx.cfg.integer("train.log_every"));
  std::ostream* log = ctx.log;
  return [every, log](const StepReport& r) {
    if (r.step % every == 0 || r.step == 1) *log << format_log_line(r) << '\n';
  };
}

std::string train_summary(const std::string& cmd, const TrainState& s, const fs::path& ckpt) {
  return cmd + ": " + std::to_string(s.step()) + " steps -> " + ckpt.string();
}

// --- commands -----------------------------------------------------------------------

void cmd_synth(Context& ctx) {
  SpriteConfig sc;
  sc.n_videos = ctx.cfg.integer("data.videos");
  sc.n_frames = ctx.cfg.integer("data.frames");
  sc.frame_height = ctx.cfg.integer("data.height");
  sc.frame_width = ctx.cfg.integer("data.width");
  sc.n_objects = ctx.cfg.integer("data.objects");
  sc.seed = ctx.seed;
  const Dataset ds = generate_sprite_dataset(sc);
  save_dataset(ctx.out, ds);
  *ctx.summary << "synth-data: " << sc.n_videos << " videos x " << sc.n_frames << " frames -> " << ctx.out.string()
               << '\n';
}

void cmd_train_image(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const TrainConfig tc = train_of(ctx.cfg, ctx.seed);
  TrainState st = make_train_state(make_bundle(generator_of(ctx.cfg, false), disc_of(ctx.cfg, false), ctx.seed), ctx.seed + 1);
  train_image(st, ds, tc, batch_options(ctx.cfg), logger(ctx));
  fs::create_directories(ctx.out);
  const fs::path ckpt = ctx.out / "checkpoint.vins";
  save_checkpoint(st, ckpt);
  *ctx.summary << train_summary("train-image", st, ckpt) << '\n';
}

void cmd_train_video(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const TrainConfig tc = train_of(ctx.cfg, ctx.seed);
  const GeneratorConfig gen = generator_of(ctx.cfg, true);
  const DiscConfig disc = disc_of(ctx.cfg, true);
  ModelBundle bundle;
  if (!ctx.init.empty()) {
    bundle = stage_video_bundle(load_bundle(ctx.init), gen, ctx.seed);
    bundle.disc.video_window = disc.video_window;
  } else {
    bundle = make_bundle(gen, disc, ctx.seed);
  }
  TrainState st = make_train_state(std::move(bundle), ctx.seed + 1);
  train_video(st, ds, tc, batch_options(ctx.cfg), logger(ctx));
  fs::create_directories(ctx.out);
  const fs::path ckpt = ctx.out / "checkpoint.vins";
  save_checkpoint(st, ckpt);
  *ctx.summary << train_summary("train-video", st, ckpt) << '\n';
}

void cmd_baseline(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const TrainConfig tc = train_of(ctx.cfg, ctx.seed);
  BaselineKind kind;
  try {
    kind = parse_baseline(ctx.cfg.str("baseline.kind"));
  } catch (const ValidationError& e) {
    throw ConfigError("baseline.kind", e.what());
  }
  const GeneratorConfig gen = generator_of(ctx.cfg, false);
  const DiscConfig disc = disc_of(ctx.cfg, false, DiscConditioning::None);
  TrainState st = make_train_state(make_bundle(gen, disc, ctx.seed), ctx.seed + 1);
  if (kind == BaselineKind::Cycle) st.aux = make_bundle(gen, disc, ctx.seed + 2);
  train_baseline(st, kind, ds, tc, batch_options(ctx.cfg), logger(ctx));
  fs::create_directories(ctx.out);
  const fs::path ckpt = ctx.out / "checkpoint.vins";
  save_checkpoint(st, ckpt);
  *ctx.summary << "baseline " << baseline_name(kind) << ": " << st.step() << " steps -> " << ckpt.string() << '\n';
}

const VideoData& find_video(const Dataset& ds, const std::string& key, const std::string& name, std::size_t fallback) {
  if (name.empty()) {
    if (fallback >= ds.videos.size()) throw ConfigError(key, "dataset has too few videos");
    return ds.videos[fallback];
  }
  for (const auto& v : ds.videos) {
    if (v.name == name) return v;
  }
  throw ConfigError(key, "no video named '" + name + "'");
}

void cmd_insert(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const ModelBundle bundle = load_bundle(ctx.checkpoint);
  const RunConfig& c = ctx.cfg;
  const VideoData& src = find_video(ds, "insert.source", c.str("insert.source"), 0);
  const VideoData& dst = find_video(ds, "insert.target", c.str("insert.target"), 1);

  InsertionRequest req;
  req.source = &src;
  req.target = &dst.video;
  req.roi = dst.roi;
  req.object_id = c.integer("insert.object_id");
  if (req.object_id < 0) {
    if (src.tracks.empty()) throw ConfigError("insert.source", "video has no tracks");
    req.object_id = src.tracks.front().object_id;
  }
  req.frame_start = c.integer("insert.start");
  req.frame_end = c.integer("insert.end");
  if (req.frame_end <= 0) req.frame_end = static_cast<int>(std::min(src.video.size(), dst.video.size()));
  const std::string placement = c.str("insert.placement");
  if (placement.empty()) {
    req.placement = sample_placement(dst.video, dst.roi, dst.median_object_height(), bundle.gen.patch, ctx.seed);
  } else {
    try {
      req.placement = parse_box(placement);
    } catch (const ParseError& e) {
      throw ConfigError("insert.placement", e.what());
    }
  }
  req.static_placement = c.flag("insert.static");
  req.feather_px = c.integer("insert.feather");
  req.allow_untrained = c.flag("insert.allow_untrained");
  req.coverage = {c.real("patch.mask_frac_w"), c.real("patch.mask_frac_h")};
  req.object_margin = c.real("patch.object_margin");

  const CompositeResult res = render_insertion(bundle, req);
  if (res.truncated) *ctx.log << "warning: " << res.warning << '\n';
  save_insertion(ctx.out, res);
  *ctx.summary << "insert: " << res.video.size() << " frames" << (res.truncated ? " (truncated)" : "") << " -> "
               << ctx.out.string() << '\n';
}

struct Evaluated {
  std::vector<CompositeResult> results;
  std::string method;
};

Evaluated evaluate_requests(Context& ctx, const Dataset& ds) {
  const std::string method = ctx.cfg.str("eval.method");
  const int count = ctx.cfg.integer("eval.count");
  const int frames = ctx.cfg.integer("eval.frames");
  if (count < 1) throw ConfigError("eval.count", "must be positive");
  if (frames < 1) throw ConfigError("eval.frames", "must be positive");
  std::optional<ModelBundle> bundle;
  PatchSpec patch = patch_of(ctx.cfg);
  if (method == "model") {
    if (ctx.checkpoint.empty()) throw ConfigError("eval.method", "model evaluation needs --checkpoint");
    bundle = load_bundle(ctx.checkpoint);
    patch = bundle->gen.patch;
  } else if (method != "copy_paste" && method != "poisson") {
    throw ConfigError("eval.method", "expected model, copy_paste or poisson, got '" + method + "'");
  }
  Rng rng(ctx.seed);
  const auto reqs = sample_insertion_requests(ds, count, frames, patch, rng);
  Evaluated ev;
  ev.method = method;
  for (auto req : reqs) {
    req.coverage = {ctx.cfg.real("patch.mask_frac_w"), ctx.cfg.real("patch.mask_frac_h")};
    req.object_margin = ctx.cfg.real("patch.object_margin");
    ev.results.push_back(bundle ? render_insertion(*bundle, req)
                                : render_nonlearned(req, patch, parse_composite_method(method)));
  }
  return ev;
}

void cmd_eval_ois(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const Evaluated ev = evaluate_requests(ctx, ds);
  std::vector<OISRecord> records;
  for (std::size_t i = 0; i < ev.results.size(); ++i) {
    records.push_back({"sample" + std::to_string(i), insertion_ois(ev.results[i])});
  }
  fs::create_directories(ctx.out);
  std::ofstream f(ctx.out / "ois.txt");
  f << std::setprecision(10);
  write_ois_report(f, records);
  if (!f) throw IoError("cannot write " + (ctx.out / "ois.txt").string());
  const OISReport m = mean_report(records);
  *ctx.summary << "eval-ois: method=" << ev.method << " n=" << records.size() << " P=" << num(m.precision)
               << " R=" << num(m.recall) << " OIS=" << num(m.ois) << '\n';
}

void cmd_eval_recall(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const std::string which = ctx.cfg.str("eval.detector");
  std::unique_ptr<Detector> det;
  if (which == "oracle") {
    det = std::make_unique<EchoOracleDetector>();
  } else if (which == "delta") {
    det = std::make_unique<DeltaMaskDetector>();
  } else if (which == "tinyconv") {
    TinyConvDetector::Config dc;
    dc.iters = ctx.cfg.integer("eval.detector_iters");
    dc.seed = ctx.seed;
    auto t = std::make_unique<TinyConvDetector>(dc);
    t->train(ds);
    det = std::move(t);
  } else {
    throw ConfigError("eval.detector", "expected oracle, delta or tinyconv, got '" + which + "'");
  }
  const double thr = ctx.cfg.real("eval.iou_threshold");
  const Evaluated ev = evaluate_requests(ctx, ds);
  fs::create_directories(ctx.out);
  std::ofstream f(ctx.out / "recall.txt");
  RecallReport total;
  for (std::size_t i = 0; i < ev.results.size(); ++i) {
    const RecallReport r = detector_recall(std::span(&ev.results[i], 1), *det, thr);
    f << "sample" << i << " matched=" << r.matched << " of=" << r.total << '\n';
    total.matched += r.matched;
    total.total += r.total;
  }
  f << "recall " << std::setprecision(10) << total.recall() << '\n';
  if (!f) throw IoError("cannot write " + (ctx.out / "recall.txt").string());
  *ctx.summary << "eval-recall: method=" << ev.method << " detector=" << which << " iou>=" << num(thr)
               << " recall=" << num(total.recall()) << " (" << total.matched << "/" << total.total << ")\n";
}

fs::path resolve_out(const std::string& out, const std::string& command) {
  fs::path p = out.empty() ? fs::path("out") / command : fs::path(out);
  if (const char* root = std::getenv("VINS_OUT_ROOT"); root && *root && p.is_relative()) p = fs::path(root) / p;
  return p;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video object insertion: data, training, insertion and evaluation"};
  app.name("vins");
  app.require_subcommand(1);

  Context ctx;
  std::uint64_t seed = 1;
  std::string config, out_dir, kind, method;
  std::vector<std::string> sets;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed for every random choice")->default_val(1);
    sub->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory (relative to $VINS_OUT_ROOT when set)");
    sub->add_option("--set", sets, "Override a config value: section.key=value");
  };
  auto with_data = [&](CLI::App* sub) { sub->add_option("--data", ctx.data, "Dataset directory"); };

  struct Cmd {
    std::string name;
    CLI::App* app;
    void (*fn)(Context&);
  };
  std::vector<Cmd> cmds;
  auto add = [&](const std::string& name, const std::string& help, void (*fn)(Context&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    common(sub);
    cmds.push_back({name, sub, fn});
    return sub;
  };
  add("synth-data", "Write a synthetic sprite dataset", cmd_synth);
  with_data(add("train-image", "Train the image stage", cmd_train_image));
  auto* tv = add("train-video", "Train the video stage", cmd_train_video);
  with_data(tv);
  tv->add_option("--init", ctx.init, "Image-stage checkpoint to start from")->check(CLI::ExistingFile);
  auto* bl = add("baseline", "Train a learned baseline", cmd_baseline);
  with_data(bl);
  bl->add_option("--kind", kind, "adv_only, pixel, perceptual or cycle");
  auto* ins = add("insert", "Insert an object track into a target video", cmd_insert);
  with_data(ins);
  ins->add_option("--checkpoint", ctx.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  for (const char* name : {"eval-ois", "eval-recall"}) {
    auto* ev = add(name, name == std::string("eval-ois") ? "Object insertion score on sampled insertions"
                                                         : "Detector recall on sampled insertions",
                   name == std::string("eval-ois") ? cmd_eval_ois : cmd_eval_recall);
    with_data(ev);
    ev->add_option("--checkpoint", ctx.checkpoint, "Trained checkpoint (method=model)")->check(CLI::ExistingFile);
    ev->add_option("--method", method, "model, copy_paste or poisson");
  }

  if (!args.empty() && !args.front().starts_with("-") &&
      std::ranges::none_of(cmds, [&](const Cmd& c) { return c.name == args.front(); })) {
    err << "error: unknown command '" << args.front() << "'\n" << app.help();
    return 2;
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return 2;
  }

  try {
    if (!config.empty()) ctx.cfg.load(config);
    for (const auto& s : sets) ctx.cfg.set(s);
    if (!kind.empty()) ctx.cfg.set("baseline", "kind", kind);
    if (!method.empty()) ctx.cfg.set("eval", "method", method);
    ctx.seed = seed;
    ctx.log = &err;
    ctx.summary = &out;
    for (const auto& c : cmds) {
      if (!c.app->parsed()) continue;
      ctx.out = resolve_out(out_dir, c.name);
      c.fn(ctx);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace vins
