// Copyright 2026 The crackseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// crackseg: build, quantize, run, simulate and score channel-scaled U-Nets.
//
// Exit codes: 0 ok, 2 usage or configuration, 3 bad input data,
// 4 verification failure (logit mismatch, deadlock, tolerance exceeded).

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crackseg/crackseg.hpp"

namespace fs = std::filesystem;
using namespace crackseg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitVerify = 4;

int exit_code(Errc e) {
  switch (e) {
    case Errc::config:
    case Errc::invalid_parameter:
    case Errc::planning: return kExitUsage;
    case Errc::verification:
    case Errc::deadlock: return kExitVerify;
    default: return kExitData;
  }
}

/// Thrown to stop with a specific exit code after printing `what`.
struct Exit {
  int code;
  std::string what;
};

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(Errc::io, "cannot write '", p.string(), "'");
  out << s;
  if (!out) detail::fail(Errc::io, "write to '", p.string(), "' failed");
}

/// "-" means stdout.
void emit(const std::string& path, const std::string& s) {
  if (path.empty() || path == "-") std::cout << s;
  else write_text(path, s);
}

/// A single .ppm file, or every .ppm in a directory (sorted by name).
std::vector<fs::path> image_files(const fs::path& p) {
  if (!fs::exists(p)) detail::fail(Errc::io, "no such file or directory '", p.string(), "'");
  if (!fs::is_directory(p)) return {p};
  std::vector<fs::path> v;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file() && e.path().extension() == ".ppm") v.push_back(e.path());
  std::ranges::sort(v);
  if (v.empty()) detail::fail(Errc::io, "no .ppm images in '", p.string(), "'");
  return v;
}

std::vector<Tensor<float>> load_images(const std::vector<fs::path>& files) {
  std::vector<Tensor<float>> v;
  for (const auto& f : files) {
    auto t = load_image(f.string());
    if (t.shape().c != 3) detail::fail(Errc::parse, f.string(), ": expected a P6 colour image");
    v.push_back(std::move(t));
  }
  return v;
}

std::vector<Tensor<float>> random_inputs(int count, int size, std::uint64_t seed) {
  std::vector<Tensor<float>> v;
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::for_item(seed, static_cast<std::uint64_t>(i));
    Tensor<float> t({1, 3, size, size});
    for (auto& x : t.data()) x = static_cast<float>(rng.uniform());
    v.push_back(std::move(t));
  }
  return v;
}

const std::map<std::string, dataflow::SchedulePolicy> kPolicy{{"forward", dataflow::SchedulePolicy::forward},
                                                              {"reverse", dataflow::SchedulePolicy::reverse},
                                                              {"shuffled", dataflow::SchedulePolicy::shuffled}};

std::string stats_report(const ModelGraph& g) {
  const auto st = count_stats(g, 256, 256);
  std::ostringstream os;
  os << std::fixed;
  os << "model c=" << g.config.c << " upsample=" << to_string(g.config.upsample) << "\n";
  os << std::setprecision(3) << "params " << static_cast<double>(st.param_count) / 1e6 << "M (" << st.param_count
     << ")\n";
  os << "MACs " << st.mac_count << " at 256x256\n";
  os << std::setprecision(2) << "GOPs " << st.gops << " at 256x256 (2 ops per MAC)\n";
  return os.str();
}

// ---- subcommands ----------------------------------------------------------

struct BuildArgs {
  int c = 2;
  std::string upsample = "tconv";
  std::uint64_t seed = 1;
  int input_size = 256;
  std::string out;
  std::string report;
};

void run_build(const BuildArgs& a) {
  ModelConfig cfg;
  cfg.c = a.c;
  cfg.upsample = parse_upsample_mode(a.upsample);
  cfg.input_h = cfg.input_w = a.input_size;
  const auto g = init_params(build_model(cfg), a.seed);
  write_container(a.out, to_container(g));
  emit(a.report, stats_report(g));
}

struct InferArgs {
  std::string model;
  std::string input;
  std::string out;
  bool logits = false;
};

void run_infer(const InferArgs& a) {
  const auto c = read_container(a.model);
  std::optional<ModelGraph> g;
  std::optional<QuantizedGraph> qg;
  if (c.kind == ContainerKind::float_model) g = graph_from_container(c);
  else qg = quantized_from_container(c);
  fs::create_directories(a.out);
  for (const auto& f : image_files(a.input)) {
    const auto img = load_images({f}).front();
    const auto z = g ? forward(*g, img) : integer_forward(*qg, quantize_input(*qg, img));
    const auto stem = f.stem().string();
    write_mask((fs::path(a.out) / (stem + ".pgm")).string(), argmax_channels(z));
    if (a.logits) {
      WeightContainer lc;
      lc.kind = c.kind;
      lc.config = c.config;
      lc.weight_bits = c.weight_bits;
      lc.act_bits = c.act_bits;
      lc.records.push_back(tensor_record("logits", z));
      write_container((fs::path(a.out) / (stem + ".logits.cfw")).string(), lc);
    }
    std::cout << stem << "\n";
  }
}

struct QuantizeArgs {
  std::string model;
  std::string calib;
  int weight_bits = 8;
  double percentile = 100.0;
  std::string out;
  std::string report;
};

void run_quantize(const QuantizeArgs& a) {
  const auto g = graph_from_container(read_container(a.model));
  const auto calib = load_images(image_files(a.calib));
  const auto qg = quantize_float_model(g, calib, {a.weight_bits, 8}, {a.percentile});
  write_container(a.out, to_container(qg));
  std::ostringstream os;
  os << "layer,weights,weight_saturated,bias_saturated\n";
  for (const auto& s : qg.saturation)
    os << s.name << "," << s.weights << "," << s.weight_saturated << "," << s.bias_saturated << "\n";
  emit(a.report, os.str());
}

struct SimulateArgs {
  std::string model;
  std::string input;
  int random = 0;
  int frame = 0;
  std::uint64_t seed = 1;
  std::string skip = "on_chip";
  std::string policy = "forward";
  dataflow::DataflowConfig df;
  dataflow::SimOptions sim;
  bool verify = false;
  std::string out;
  std::string text;
};

void run_simulate(SimulateArgs a) {
  const auto qg = quantized_from_container(read_container(a.model));
  std::vector<Tensor<float>> imgs;
  if (!a.input.empty()) {
    imgs = load_images(image_files(a.input));
  } else if (a.random > 0) {
    const int size = a.frame > 0 ? a.frame : qg.config.input_h;
    imgs = random_inputs(a.random, size, a.seed);
  } else {
    throw Exit{kExitUsage, "simulate needs --input or --random"};
  }
  a.df.skip = dataflow::parse_skip_placement(a.skip);
  a.sim.policy = kPolicy.at(a.policy);
  a.df.frame_h = imgs.front().shape().h;
  a.df.frame_w = imgs.front().shape().w;
  std::vector<QuantizedTensor> frames;
  for (const auto& im : imgs) frames.push_back(quantize_input(qg, im));
  const auto p = dataflow::plan(qg, a.df);
  const auto r = dataflow::simulate(p, frames, a.sim);
  emit(a.out, dataflow::report_csv_header() + "\n" + dataflow::report_csv_row(r.report) + "\n");
  if (!a.text.empty()) emit(a.text, dataflow::report_text(r.report));
  if (r.report.deadlock) throw Exit{kExitVerify, "deadlock: " + r.report.diagnostic()};
  if (a.verify) {
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (r.logits[i] != integer_forward(qg, frames[i]))
        throw Exit{kExitVerify, "frame " + std::to_string(i) + ": streamed logits differ from integer_forward"};
    std::cerr << "verify: " << frames.size() << " frame(s) bit-identical\n";
  }
}

struct MetricsArgs {
  std::string pred;
  std::string gt;
  std::string measurements;
  double tolerance = -1.0;
  bool macro = false;
  std::string out;
};

void run_metrics(const MetricsArgs& a) {
  std::ostringstream os;
  if (!a.measurements.empty()) {
    const auto t = csv::Table::read(a.measurements);
    t.require({"device", "fps", "idle_w", "runtime_w"});
    os << "line,device,precision,fps,idle_w,runtime_w,dynamic_eff,runtime_eff,printed_dynamic_eff,"
          "printed_runtime_eff,max_rel_delta\n";
    double worst = 0.0;
    for (const auto& r : t.rows()) {
      const std::string prec =
          t.has("model_bits") && t.has("data_bits") ? t.cell(r, "model_bits") + "/" + t.cell(r, "data_bits") : "";
      Efficiency e;
      try {
        e = energy_efficiency({t.cell(r, "device"), prec, t.number(r, "fps"), t.number(r, "idle_w"),
                               t.number(r, "runtime_w")});
      } catch (const Error& err) {
        detail::fail(err.code(), a.measurements, ":", r.line, ": ", err.message());
      }
      const auto pd = t.optional_number(r, "dynamic_eff");
      const auto pr = t.optional_number(r, "runtime_eff");
      double delta = 0.0;
      if (pd) delta = std::max(delta, std::fabs(e.dynamic_eff / *pd - 1.0));
      if (pr) delta = std::max(delta, std::fabs(e.runtime_eff / *pr - 1.0));
      worst = std::max(worst, delta);
      os << r.line << "," << t.cell(r, "device") << "," << prec << "," << t.cell(r, "fps") << ","
         << t.cell(r, "idle_w") << "," << t.cell(r, "runtime_w") << "," << fixed2(e.dynamic_eff) << ","
         << fixed2(e.runtime_eff) << "," << (pd ? fixed2(*pd) : "") << "," << (pr ? fixed2(*pr) : "") << ","
         << std::setprecision(6) << std::fixed << delta << "\n";
    }
    emit(a.out, os.str());
    if (a.tolerance >= 0.0 && worst > a.tolerance) {
      std::ostringstream m;
      m << "largest efficiency delta " << worst << " exceeds tolerance " << a.tolerance;
      throw Exit{kExitVerify, m.str()};
    }
    return;
  }
  if (a.pred.empty() || a.gt.empty()) throw Exit{kExitUsage, "metrics needs --pred and --gt, or --measurements"};
  std::vector<fs::path> preds;
  for (const auto& e : fs::directory_iterator(a.pred))
    if (e.is_regular_file() && e.path().extension() == ".pgm") preds.push_back(e.path());
  std::ranges::sort(preds);
  if (preds.empty()) detail::fail(Errc::io, "no .pgm masks in '", a.pred, "'");
  std::vector<ConfusionMatrix> cms;
  os << scores_csv_header() << "\n";
  for (const auto& p : preds) {
    const auto gt = fs::path(a.gt) / p.filename();
    if (!fs::exists(gt)) detail::fail(Errc::io, "no ground truth for '", p.filename().string(), "'");
    cms.push_back(confusion(load_mask(p.string()), load_mask(gt.string())));
    os << scores_csv_row(p.stem().string(), scores(cms.back())) << "\n";
  }
  os << scores_csv_row(a.macro ? "dataset_macro" : "dataset",
                       dataset_scores(cms, a.macro ? Averaging::macro : Averaging::micro))
     << "\n";
  emit(a.out, os.str());
}

struct ParetoArgs {
  std::string points;
  std::string out;
  std::string svg;
  bool ascii = false;
};

void run_pareto(const ParetoArgs& a) {
  const auto pts = points_from_table(csv::Table::read(a.points));
  const auto front = pareto_front(pts);
  emit(a.out, front_csv(front));
  if (!a.svg.empty()) write_text(a.svg, render_svg(pts, front));
  if (a.ascii) std::cerr << render_ascii(pts, front);
}

std::string_view trim(std::string_view v) {
  while (!v.empty() && std::isspace(static_cast<unsigned char>(v.front()))) v.remove_prefix(1);
  while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
  return v;
}

/// key=value lines as "--key=value" arguments. Blank lines, '#' comments
/// and empty values are skipped; values may be double-quoted.
std::vector<std::string> config_args(const CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Exit{kExitUsage, "cannot open config file '" + path + "'"};
  std::vector<std::string> args;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = path + ":" + std::to_string(n);
    if (eq == std::string_view::npos) throw Exit{kExitUsage, where + ": expected key=value"};
    const std::string key(trim(t.substr(0, eq)));
    auto value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key == "config" || key == "dump-config" || sub.get_option_no_throw("--" + key) == nullptr)
      throw Exit{kExitUsage, where + ": unknown key '" + key + "' for " + sub.get_name()};
    if (!value.empty()) args.push_back("--" + key + "=" + std::string(value));
  }
  return args;
}

/// Splices `--config FILE` of the chosen subcommand into flags placed before
/// the command-line ones, so explicit flags win.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  auto sub = std::ranges::find_if(args, [&](const std::string& a) {
    return app.get_subcommand_no_throw(a) != nullptr;
  });
  if (sub == args.end()) return args;
  const auto* cmd = app.get_subcommand_no_throw(*sub);
  std::vector<std::string> files;
  for (auto it = sub + 1; it != args.end();) {
    if (*it == "--config" && it + 1 != args.end()) {
      files.push_back(*(it + 1));
      it = args.erase(it, it + 2);
    } else if (it->rfind("--config=", 0) == 0) {
      files.push_back(it->substr(9));
      it = args.erase(it);
    } else {
      ++it;
    }
  }
  std::vector<std::string> extra;
  for (const auto& f : files)
    for (auto& a : config_args(*cmd, f)) extra.push_back(std::move(a));
  args.insert(sub + 1, extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-scaled U-Net crack segmentation toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string dump_path;

  std::string config_help;
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_help, "key=value configuration file; flags override it");
    sub->add_option("--dump-config", dump_path, "Write the resolved configuration here instead of stderr");
  };

  BuildArgs build;
  auto* b = app.add_subcommand("build", "Initialise a model and report its size");
  with_config(b);
  b->add_option("--c", build.c, "Channel scale")->check(CLI::IsMember({2, 4, 8, 16, 32}));
  b->add_option("--upsample", build.upsample, "Decoder upsampling")
      ->check(CLI::IsMember({"tconv", "nearest"}));
  b->add_option("--seed", build.seed, "Initialisation seed");
  b->add_option("--input-size", build.input_size, "Model input height and width");
  b->add_option("--out", build.out, "Model container to write")->required();
  b->add_option("--report", build.report, "Stats report path (default stdout)");

  InferArgs infer;
  auto* inf = app.add_subcommand("infer", "Segment images with a float or quantized model");
  with_config(inf);
  inf->add_option("--model", infer.model, "Model container")->required();
  inf->add_option("--input", infer.input, "Image (.ppm) or directory of images")->required();
  inf->add_option("--out", infer.out, "Output directory for masks")->required();
  inf->add_flag("--logits", infer.logits, "Also write <stem>.logits.cfw");

  QuantizeArgs quant;
  auto* q = app.add_subcommand("quantize", "Post-training quantization of a float model");
  with_config(q);
  q->add_option("--model", quant.model, "Float model container")->required();
  q->add_option("--calib", quant.calib, "Calibration image or directory")->required();
  q->add_option("--weight-bits", quant.weight_bits, "Weight width")->check(CLI::IsMember({4, 8}));
  q->add_option("--percentile", quant.percentile, "Activation range percentile")->check(CLI::Range(50.0, 100.0));
  q->add_option("--out", quant.out, "Quantized container to write")->required();
  q->add_option("--report", quant.report, "Saturation CSV path (default stdout)");

  SimulateArgs simu;
  auto* s = app.add_subcommand("simulate", "Stream a quantized model through the dataflow simulator");
  with_config(s);
  s->add_option("--model", simu.model, "Quantized model container")->required();
  auto* in_opt = s->add_option("--input", simu.input, "Image or directory of images");
  s->add_option("--random", simu.random, "Number of random frames instead of --input")
      ->check(CLI::PositiveNumber)
      ->excludes(in_opt);
  s->add_option("--frame", simu.frame, "Random frame size (default model input size)");
  s->add_option("--seed", simu.seed, "Random frame seed");
  s->add_option("--skip", simu.skip, "Skip tensor placement")->check(CLI::IsMember({"on_chip", "off_chip"}));
  s->add_option("--clock-mhz", simu.df.clock_mhz, "Clock for fps");
  s->add_option("--stream-depth", simu.df.stream_depth, "FIFO depth of ordinary edges");
  s->add_option("--folding-slack", simu.df.folding_slack, "Default folding divisor");
  s->add_option("--skip-safety", simu.df.skip_safety, "Skip FIFO depth as a multiple of the minimum");
  s->add_option("--bridge-depth", simu.df.offchip.bridge_depth, "Off-chip bridge buffer tokens");
  s->add_option("--read-bw", simu.df.offchip.read_bw, "Off-chip read bytes per cycle");
  s->add_option("--write-bw", simu.df.offchip.write_bw, "Off-chip write bytes per cycle");
  s->add_option("--latency", simu.df.offchip.latency_cycles, "Off-chip read latency in cycles");
  s->add_option("--policy", simu.policy, "Stage evaluation order")
      ->check(CLI::IsMember({"forward", "reverse", "shuffled"}));
  s->add_option("--max-cycles", simu.sim.max_cycles, "Cycle cap (0 = automatic)");
  s->add_flag("--verify", simu.verify, "Check logits against integer_forward");
  s->add_option("--out", simu.out, "Report CSV path (default stdout)");
  s->add_option("--text", simu.text, "Human-readable report path");

  MetricsArgs met;
  auto* m = app.add_subcommand("metrics", "Segmentation scores or energy efficiency");
  with_config(m);
  auto* pred_opt = m->add_option("--pred", met.pred, "Directory of predicted masks (.pgm)");
  auto* gt_opt = m->add_option("--gt", met.gt, "Directory of ground-truth masks (.pgm)");
  m->add_option("--measurements", met.measurements, "Measurement CSV (fps, idle_w, runtime_w)")
      ->excludes(pred_opt)
      ->excludes(gt_opt);
  m->add_option("--tolerance", met.tolerance, "Fail when a printed efficiency differs by more (relative)");
  m->add_flag("--macro", met.macro, "Average per image instead of summing pixels");
  m->add_option("--out", met.out, "CSV path (default stdout)");

  ParetoArgs par;
  auto* pa = app.add_subcommand("pareto", "Pareto front of (dynamic efficiency, mean IoU) points");
  with_config(pa);
  pa->add_option("--points", par.points, "Points CSV")->required();
  pa->add_option("--out", par.out, "Front CSV path (default stdout)");
  pa->add_option("--svg", par.svg, "Scatter plot path");
  pa->add_flag("--ascii", par.ascii, "Print a character plot to stderr");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
      args = expand_config(app, std::move(args));
    } catch (const Exit& e) {
      std::cerr << "crackseg: " << e.what << "\n";
      return e.code;
    }
    std::ranges::reverse(args);  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    std::string dump = "# crackseg " + sub->get_name() + "\n";
    std::istringstream resolved(sub->config_to_str(true, false));
    for (std::string line; std::getline(resolved, line);)
      if (line.rfind("config=", 0) != 0 && line.rfind("dump-config=", 0) != 0) dump += line + "\n";
    if (dump_path.empty()) std::cerr << dump;
    else write_text(dump_path, dump);

    if (sub == b) run_build(build);
    else if (sub == inf) run_infer(infer);
    else if (sub == q) run_quantize(quant);
    else if (sub == s) run_simulate(simu);
    else if (sub == m) run_metrics(met);
    else run_pareto(par);
  } catch (const Exit& e) {
    std::cerr << "crackseg: " << e.what << "\n";
    return e.code;
  } catch (const Error& e) {
    std::cerr << "crackseg: error[" << errc_name(e.code()) << "]: " << e.message() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "crackseg: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
