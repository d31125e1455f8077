#pragma once

// The balloonseg command line: synth, train, eval, predict, overlay, serve.
// Exit codes: 0 ok, 2 usage or I/O, 3 numeric failure, 4 model/weights mismatch.

#include <CLI11.hpp>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "balloonseg/dataset.hpp"
#include "balloonseg/model.hpp"
#include "balloonseg/overlay.hpp"
#include "balloonseg/png_io.hpp"
#include "balloonseg/review_service.hpp"
#include "balloonseg/split.hpp"
#include "balloonseg/trainer.hpp"
#include "balloonseg/vectorize.hpp"

namespace bseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitMismatch = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelFlags {
  std::size_t base_width = 8;
  std::size_t input_w = 192;
  std::size_t input_h = 128;

  void add(CLI::App* app) {
    app->add_option("--base-width", base_width, "Encoder width of the first block")->capture_default_str();
    app->add_option("--input-width", input_w, "Model input width (multiple of 32)")->capture_default_str();
    app->add_option("--input-height", input_h, "Model input height (multiple of 32)")->capture_default_str();
  }

  ModelConfig config() const {
    ModelConfig c;
    c.base_width = base_width;
    c.input_w = input_w;
    c.input_h = input_h;
    c.validate();
    return c;
  }
};

struct SynthArgs {
  std::filesystem::path out;
  std::size_t pages = 8;
  std::size_t books = 1;
  std::uint64_t seed = 0;
  std::size_t width = 384;
  std::size_t height = 256;
};

struct TrainArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  ModelFlags model;
  TrainConfig train;
  double lambda = 0.001;
  std::string dice_form = "additive";
};

struct EvalArgs {
  std::filesystem::path data;
  std::optional<std::filesystem::path> weights;
  std::optional<std::filesystem::path> predictions;
  ModelFlags model;
  double threshold = 0.5;
};

struct PredictArgs {
  std::filesystem::path weights;
  std::filesystem::path input;
  std::filesystem::path out;
  ModelFlags model;
  DetectConfig detect;
  double mask_threshold = 0.5;
};

struct OverlayArgs {
  std::filesystem::path image;
  std::optional<std::filesystem::path> prediction;
  std::optional<std::filesystem::path> weights;
  std::filesystem::path out;
  ModelFlags model;
  double alpha = 0.5;
};

struct ServeArgs {
  std::filesystem::path data;
  std::optional<std::filesystem::path> weights;
  ModelFlags model;
  DetectConfig detect;
  std::string host = "127.0.0.1";
  int port = 8080;
  double alpha = 0.5;
};

namespace detail {

inline std::string fmt4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline std::string option_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

/// Splices `key = value` lines from any --config file into the argument list
/// right after the subcommand, so explicit flags (later, TakeLast) win.
inline std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args.front());
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::optional<std::string> config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (!config) return args;
  std::ifstream is(*config);
  if (!is) throw UsageError("cannot read config file " + *config);
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigINI().from_config(is)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string key = option_key(item.fullname());
    if (key == "config" || !sub->get_option_no_throw("--" + key)) {
      throw UsageError("unknown key '" + item.fullname() + "' in config file " + *config);
    }
    for (const auto& v : item.inputs) injected.push_back("--" + key + "=" + v);
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

inline void require_dir(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_directory(p)) throw UsageError(what + " " + p.string() + " is not a directory");
}

inline void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_regular_file(p)) throw UsageError(what + " " + p.string() + " does not exist");
}

inline void make_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) throw UsageError("cannot create directory " + p.string());
  const auto probe = p / ".write_probe";
  {
    std::ofstream os(probe);
    if (!os) throw UsageError("directory " + p.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw UsageError("cannot write " + p.string());
  os << text;
}

inline std::vector<std::filesystem::path> png_inputs(const std::filesystem::path& input) {
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_directory(input)) {
    for (const auto& e : std::filesystem::directory_iterator(input)) {
      if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
  } else {
    require_file(input, "input");
    out.push_back(input);
  }
  return out;
}

inline Tensor<float> run_model(const Network<float>& net, const RgbImage& img) {
  const auto& c = net.config();
  return net.predict(normalize(resize_image(img, c.input_w, c.input_h)));
}

}  // namespace detail

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  detail::make_dir(a.out);
  SynthCorpusSpec spec;
  spec.pages = a.pages;
  spec.books = a.books;
  spec.seed = a.seed;
  spec.page.width = a.width;
  spec.page.height = a.height;
  spec.page.validate();
  write_synthetic_corpus(a.out, spec);
  out << "wrote " << a.pages << " pages in " << a.books << " books to " << a.out.string() << "\n";
  return kExitOk;
}

inline int cmd_train(TrainArgs a, std::ostream& out, std::ostream& err) {
  detail::require_dir(a.data, "dataset");
  if (a.dice_form == "additive") a.train.dice_form = DiceDenominator::Additive;
  else if (a.dice_form == "product") a.train.dice_form = DiceDenominator::LiteralProduct;
  else throw UsageError("--dice-form must be 'additive' or 'product'");
  ModelConfig mc = a.model.config();
  mc.l2_lambda = a.lambda;
  mc.init_seed = a.train.seed;
  a.train.checkpoint_dir = a.out / "checkpoints";
  try {
    a.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  detail::make_dir(a.out);

  const auto pages = load_corpus(a.data);
  if (pages.empty()) throw UsageError("dataset " + a.data.string() + " has no pages");
  auto [train_pages, val_pages] = stratified_split(pages, a.train.split_train, a.train.seed);
  if (train_pages.empty()) throw UsageError("split leaves no training pages; raise --split");
  if (val_pages.empty()) {
    err << "warning: split leaves no validation pages; validation metrics use the training pages\n";
  }
  const auto train_set = prepare_examples(train_pages, mc.input_h, mc.input_w);
  const auto val_set = prepare_examples(val_pages, mc.input_h, mc.input_w);

  const auto& c = a.train;
  out << "# lr=" << c.adam.lr << " beta1=" << c.adam.beta1 << " beta2=" << c.adam.beta2 << " epsilon=" << c.adam.epsilon
      << " lambda=" << mc.l2_lambda << " split=" << c.split_train << " epochs=" << c.epochs << " seed=" << c.seed
      << " batch=" << c.batch_size << " base_width=" << mc.base_width << " input=" << mc.input_w << "x" << mc.input_h
      << " augment=" << (c.augment ? "on" : "off") << " train_pages=" << train_set.size()
      << " val_pages=" << val_set.size() << "\n";
  out << tsv_header() << "\n";

  std::ostringstream log;
  log << tsv_header() << "\n";
  Network<float> net(mc);
  const auto result = train(net, train_set, val_set, c, [&](const EpochLog& e) {
    out << tsv_line(e) << "\n" << std::flush;
    log << tsv_line(e) << "\n";
  });
  detail::write_text(a.out / "train.tsv", log.str());
  net.save_weights(a.out / "model.bseg");
  const auto& s = result.summary;
  out << "# summary (median of last " << std::min<std::size_t>(5, result.history.size()) << " epochs): bce=" << detail::fmt4(s.bce)
      << " dice=" << detail::fmt4(s.dice_coeff) << " precision=" << detail::fmt4(s.precision)
      << " recall=" << detail::fmt4(s.recall) << " f1=" << detail::fmt4(s.f1) << "\n";
  return kExitOk;
}

inline void print_metrics(std::ostream& out, const MetricsReport& r) {
  out << "metric\tvalue\n"
      << "bce\t" << detail::fmt4(r.bce) << "\n"
      << "dice\t" << detail::fmt4(r.dice_coeff) << "\n"
      << "precision\t" << detail::fmt4(r.precision) << "\n"
      << "recall\t" << detail::fmt4(r.recall) << "\n"
      << "f1\t" << detail::fmt4(r.f1) << "\n";
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  detail::require_dir(a.data, "dataset");
  if (a.weights.has_value() == a.predictions.has_value()) {
    throw UsageError("eval needs exactly one of --weights or --predictions");
  }
  if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw UsageError("--threshold must lie in (0,1)");
  const auto pages = load_corpus(a.data, a.weights.has_value());
  MetricsAccumulator acc(a.threshold);
  if (a.weights) {
    detail::require_file(*a.weights, "weights");
    Network<float> net(a.model.config());
    net.load_weights(*a.weights);
    for (const auto& ex : prepare_examples(pages, net.config().input_h, net.config().input_w)) {
      acc.add(ex.mask, net.predict(ex.image));
    }
  } else {
    detail::require_dir(*a.predictions, "predictions");
    for (const auto& p : pages) {
      const auto file = *a.predictions / (p.page_id + ".png");
      detail::require_file(file, "prediction");
      const Tensor<float> pred = from_gray(read_png_gray(file));
      const auto mask = rasterize(p.annotations, pred.shape().h, pred.shape().w, p.height, p.width);
      acc.add(mask, pred);
    }
  }
  print_metrics(out, acc.report());
  return kExitOk;
}

inline int cmd_predict(const PredictArgs& a, std::ostream& out) {
  detail::require_file(a.weights, "weights");
  const auto inputs = detail::png_inputs(a.input);
  if (!(a.mask_threshold > 0.0 && a.mask_threshold < 1.0)) throw UsageError("--mask-threshold must lie in (0,1)");
  if (!(a.detect.threshold > 0.0 && a.detect.threshold < 1.0)) throw UsageError("--threshold must lie in (0,1)");
  Network<float> net(a.model.config());
  net.load_weights(a.weights);
  detail::make_dir(a.out);
  std::string jsonl;
  for (const auto& path : inputs) {
    const RgbImage img = read_png(path);
    const auto pred = detail::run_model(net, img);
    const std::string stem = path.stem().string();
    write_png(a.out / (stem + "_prob.png"), probability_image(pred));
    write_png(a.out / (stem + "_mask.png"), mask_image(pred, a.mask_threshold));
    const auto dets = detect(pred, a.detect);
    const double sx = static_cast<double>(img.width) / static_cast<double>(pred.shape().w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(pred.shape().h);
    jsonl += detections_jsonl(dets, stem, sx, sy);
    out << stem << "\t" << dets.size() << " detections\n";
  }
  detail::write_text(a.out / "detections.jsonl", jsonl);
  return kExitOk;
}

inline int cmd_overlay(const OverlayArgs& a, std::ostream& out) {
  detail::require_file(a.image, "image");
  if (a.prediction.has_value() == a.weights.has_value()) {
    throw UsageError("overlay needs exactly one of --prediction or --weights");
  }
  if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) throw UsageError("--alpha must lie in [0,1]");
  const RgbImage page = read_png(a.image);
  Tensor<float> pred;
  if (a.prediction) {
    detail::require_file(*a.prediction, "prediction");
    pred = from_gray(read_png_gray(*a.prediction));
  } else {
    detail::require_file(*a.weights, "weights");
    Network<float> net(a.model.config());
    net.load_weights(*a.weights);
    pred = detail::run_model(net, page);
  }
  if (a.out.has_parent_path()) detail::make_dir(a.out.parent_path());
  write_png(a.out, render_overlay(page, pred, a.alpha));
  out << "wrote " << a.out.string() << "\n";
  return kExitOk;
}

inline int cmd_serve(const ServeArgs& a, std::ostream& out) {
  detail::require_dir(a.data, "dataset");
  if (a.weights) detail::require_file(*a.weights, "weights");
  ReviewOptions opts;
  opts.dataset_dir = a.data;
  opts.weights = a.weights;
  opts.model = a.model.config();
  opts.detect = a.detect;
  opts.overlay_alpha = a.alpha;
  ReviewService service(opts);
  httplib::Server server;
  service.bind(server);
  out << "serving " << a.data.string() << " on http://" << a.host << ":" << a.port << "\n" << std::flush;
  if (!server.listen(a.host, a.port)) throw UsageError("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return kExitOk;
}

/// Parses `args` (without the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Speech balloon segmentation toolkit", "balloonseg"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  const std::string config_help = "Read `key = value` lines (keys are long flag names); flags override the file";

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic comic page corpus");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--pages", synth.pages, "Number of pages")->capture_default_str();
  s->add_option("--books", synth.books, "Number of books (page i goes to book i mod books)")->capture_default_str();
  s->add_option("--seed", synth.seed, "Corpus seed")->capture_default_str();
  s->add_option("--width", synth.width, "Page width in pixels")->capture_default_str();
  s->add_option("--height", synth.height, "Page height in pixels")->capture_default_str();
  s->add_option("--config", config_help);

  TrainArgs tr;
  tr.train.checkpoint_every = 1;
  auto* t = app.add_subcommand("train", "Train a network on a corpus directory");
  t->add_option("--data", tr.data, "Corpus directory (annotations.xml + PNGs)")->required();
  t->add_option("--out", tr.out, "Output directory for train.tsv, model.bseg and checkpoints/")->required();
  tr.model.add(t);
  t->add_option("--epochs", tr.train.epochs, "Full passes over the training pages")->capture_default_str();
  t->add_option("--lr", tr.train.adam.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--beta1", tr.train.adam.beta1, "Adam beta1")->capture_default_str();
  t->add_option("--beta2", tr.train.adam.beta2, "Adam beta2")->capture_default_str();
  t->add_option("--epsilon", tr.train.adam.epsilon, "Adam epsilon")->capture_default_str();
  t->add_option("--lambda", tr.lambda, "L2 weight on decoder merge-conv kernels")->capture_default_str();
  t->add_option("--split", tr.train.split_train, "Training fraction per book")->capture_default_str();
  t->add_option("--seed", tr.train.seed, "Seed for init, split, order and augmentation")->capture_default_str();
  t->add_option("--bce-weight", tr.train.bce_weight, "Weight of the BCE term")->capture_default_str();
  t->add_option("--dice-weight", tr.train.dice_weight, "Weight of the Dice term")->capture_default_str();
  t->add_option("--dice-form", tr.dice_form, "Dice denominator: additive or product")->capture_default_str();
  t->add_option("--threshold", tr.train.binarize_threshold, "Binarization threshold for metrics")->capture_default_str();
  t->add_option("--batch-size", tr.train.batch_size, "Pages per optimizer step")->capture_default_str();
  t->add_option("--augment", tr.train.augment, "Augment training pages (true/false)")->capture_default_str();
  t->add_option("--hue-range", tr.train.augmentation.hue_range, "Maximum hue rotation (fraction of a turn)")
      ->capture_default_str();
  t->add_option("--shift-range", tr.train.augmentation.shift_range, "Maximum shift (fraction of the size)")
      ->capture_default_str();
  t->add_option("--hflip", tr.train.augmentation.hflip, "Random horizontal flips (true/false)")->capture_default_str();
  t->add_option("--vflip", tr.train.augmentation.vflip, "Random vertical flips (true/false)")->capture_default_str();
  t->add_option("--checkpoint-every", tr.train.checkpoint_every, "Checkpoint cadence in epochs (0 = none)")
      ->capture_default_str();
  t->add_option("--deterministic", tr.train.deterministic, "Seeded sample order (true/false)")->capture_default_str();
  t->add_option("--config", config_help);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Pixel metrics of a model or of stored predictions");
  e->add_option("--data", ev.data, "Corpus directory")->required();
  e->add_option("--weights", ev.weights, "Weight file to evaluate");
  e->add_option("--predictions", ev.predictions, "Directory of <page_id>.png probability maps instead of a model");
  e->add_option("--threshold", ev.threshold, "Binarization threshold")->capture_default_str();
  ev.model.add(e);
  e->add_option("--config", config_help);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Probability maps, masks and polygon detections for page images");
  p->add_option("--weights", pr.weights, "Weight file")->required();
  p->add_option("--input", pr.input, "PNG file or directory of PNGs")->required();
  p->add_option("--out", pr.out, "Output directory")->required();
  p->add_option("--threshold", pr.detect.threshold, "Detection confidence threshold")->capture_default_str();
  p->add_option("--min-area", pr.detect.min_area_frac, "Minimum detection area (fraction of the raster)")
      ->capture_default_str();
  p->add_option("--epsilon", pr.detect.epsilon, "Polygon simplification tolerance in pixels")->capture_default_str();
  p->add_option("--mask-threshold", pr.mask_threshold, "Threshold for the mask PNG")->capture_default_str();
  pr.model.add(p);
  p->add_option("--config", config_help);

  OverlayArgs ov;
  auto* o = app.add_subcommand("overlay", "Render a prediction over its page with the hot colormap");
  o->add_option("--image", ov.image, "Page PNG")->required();
  o->add_option("--prediction", ov.prediction, "Grayscale probability PNG");
  o->add_option("--weights", ov.weights, "Weight file (predicts instead of --prediction)");
  o->add_option("--out", ov.out, "Output PNG")->required();
  o->add_option("--alpha", ov.alpha, "Opacity of the colormapped layer")->capture_default_str();
  ov.model.add(o);
  o->add_option("--config", config_help);

  ServeArgs sv;
  auto* r = app.add_subcommand("serve", "HTTP review service over a corpus directory");
  r->add_option("--data", sv.data, "Corpus directory")->required();
  r->add_option("--weights", sv.weights, "Weight file used for predictions");
  r->add_option("--host", sv.host, "Bind address")->capture_default_str();
  r->add_option("--port", sv.port, "Port")->capture_default_str();
  r->add_option("--threshold", sv.detect.threshold, "Detection confidence threshold")->capture_default_str();
  r->add_option("--min-area", sv.detect.min_area_frac, "Minimum detection area (fraction of the raster)")
      ->capture_default_str();
  r->add_option("--epsilon", sv.detect.epsilon, "Polygon simplification tolerance in pixels")->capture_default_str();
  r->add_option("--alpha", sv.alpha, "Overlay opacity")->capture_default_str();
  sv.model.add(r);
  r->add_option("--config", config_help);

  try {
    auto expanded = detail::expand_config(app, args);
    std::reverse(expanded.begin(), expanded.end());  // CLI11 consumes from the back
    app.parse(expanded);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(tr, out, err);
    if (*e) return cmd_eval(ev, out);
    if (*p) return cmd_predict(pr, out);
    if (*o) return cmd_overlay(ov, out);
    if (*r) return cmd_serve(sv, out);
  } catch (const TrainingDiverged& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const ModelMismatchError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitMismatch;
  } catch (const WeightFileError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace bseg::cli
