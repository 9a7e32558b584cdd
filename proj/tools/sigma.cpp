// sigma: command-line front end for the scan kernels, complexity analysis and
// the end-to-end forward pass.
//
// Exit codes: 0 success, 1 check failure or library error (JSON diagnostic
// on stderr), 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sigma/analysis.hpp"
#include "sigma/io.hpp"

namespace {

using nlohmann::json;
using namespace sigma;

struct Failure {
  std::string kind;
  std::string message;
  json details = json::object();
};

[[noreturn]] void fail(std::string kind, std::string message, json details = json::object()) {
  throw Failure{std::move(kind), std::move(message), std::move(details)};
}

/// Write `text` to `path`, or to stdout when `path` is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

bool wants_json(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

SigmaConfig resolve_config(const std::string& path, const std::string& preset) {
  if (!path.empty() && !preset.empty()) fail("usage", "give either --config or --preset, not both");
  if (!path.empty()) return SigmaConfig::load(path);
  return SigmaConfig::preset(preset.empty() ? "tiny" : preset);
}

// ---------------------------------------------------------------------------

struct ScanCheckArgs {
  std::uint64_t seed = 0;
  Index cases = 200;
  Index max_len = 64;
};

void run_scan_check(const ScanCheckArgs& a) {
  const ScanCheckReport r = scan_check(a.seed, a.cases, a.max_len);
  std::cout << "scan-check: cases=" << r.cases << " failures=" << r.failures
            << " max_chunk_rel_error=" << r.max_chunk_rel_error << "\n";
  if (!r.passed()) fail("oracle_mismatch", "scan-check failed", {{"failures", r.messages}});
}

struct GradcheckArgs {
  std::string op = "scan";
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tol = 1e-4;
};

void run_gradcheck(const GradcheckArgs& a) {
  const GradcheckReport r = gradcheck(a.op, a.seed, a.step, a.tol);
  std::cout << "gradcheck: op=" << r.op << " coordinates=" << r.checked << " max_rel_error=" << r.max_rel_error
            << " worst=" << r.worst << " tol=" << r.tolerance << " " << (r.passed ? "PASS" : "FAIL") << "\n";
  if (!r.passed) {
    json d = {{"op", r.op}, {"max_rel_error", r.max_rel_error}, {"worst", r.worst}, {"tolerance", r.tolerance}};
    if (!r.finite) d["nonfinite_at"] = r.nonfinite_at;
    fail("gradient_mismatch", "analytic and finite-difference gradients disagree", d);
  }
}

struct FlopsArgs {
  bool table = false;
  std::vector<Index> curve;
  Index channels = 96;
  Index state = 4;
  std::string out;
  std::string terms_out;
};

void run_flops(const FlopsArgs& a) {
  if (a.table == !a.curve.empty()) fail("usage", "flops needs exactly one of --table or --curve LMIN LMAX");
  if (a.table) {
    const auto rows = complexity_table(a.state);
    std::string text;
    if (wants_json(a.out)) {
      json j = json::array();
      for (const auto& r : rows) {
        j.push_back({{"stage", r.stage},
                     {"height", r.height},
                     {"width", r.width},
                     {"channels", r.channels},
                     {"conm_gflops", r.conm_gflops},
                     {"consa_gflops", r.consa_gflops},
                     {"reference_conm", r.reference_conm},
                     {"reference_consa", r.reference_consa ? json(*r.reference_consa) : json(nullptr)}});
      }
      text = j.dump(2) + "\n";
    } else {
      text = "stage,height,width,channels,conm_gflops,consa_gflops,reference_conm,reference_consa\n";
      for (const auto& r : rows) {
        text += std::to_string(r.stage) + "," + std::to_string(r.height) + "," + std::to_string(r.width) + "," +
                std::to_string(r.channels) + "," + fixed(r.conm_gflops) + "," + fixed(r.consa_gflops) + "," +
                fixed(r.reference_conm, 2) + "," + (r.reference_consa ? fixed(*r.reference_consa, 2) : "") + "\n";
      }
    }
    emit(a.out, text);
    if (!a.terms_out.empty()) {
      std::string terms = "stage,block,term,gflops\n";
      for (const auto& r : rows) {
        for (const auto& [block, rep] : {std::pair{"conm", &r.conm_terms}, std::pair{"consa", &r.consa_terms}}) {
          for (const auto& t : rep->terms()) {
            terms += std::to_string(r.stage) + "," + block + "," + t.name + "," + fixed(t.flops / 1e9, 6) + "\n";
          }
        }
      }
      write_file(a.terms_out, terms);
    }
    return;
  }

  if (a.curve.size() != 2) fail("usage", "--curve takes LMIN LMAX");
  const auto log2_exact = [](Index v) {
    int k = 0;
    while ((Index{1} << k) < v) ++k;
    if ((Index{1} << k) != v) fail("usage", "--curve lengths must be powers of two, got " + std::to_string(v));
    return k;
  };
  const auto pts = scaling_curve(log2_exact(a.curve[0]), log2_exact(a.curve[1]), a.channels, a.state);
  std::vector<double> ls, conm, consa;
  for (const auto& p : pts) {
    ls.push_back(static_cast<double>(p.length));
    conm.push_back(p.conm_gflops);
    consa.push_back(p.consa_gflops);
  }
  const double s_conm = pts.size() > 1 ? loglog_slope(ls, conm) : 0.0;
  const double s_consa = pts.size() > 1 ? loglog_slope(ls, consa) : 0.0;
  std::string text;
  if (wants_json(a.out)) {
    json j = {{"channels", a.channels}, {"slope_conm", s_conm}, {"slope_consa", s_consa}, {"points", json::array()}};
    for (const auto& p : pts) {
      j["points"].push_back({{"length", p.length}, {"conm_gflops", p.conm_gflops}, {"consa_gflops", p.consa_gflops}});
    }
    text = j.dump(2) + "\n";
  } else {
    text = "length,conm_gflops,consa_gflops\n";
    for (const auto& p : pts) {
      text += std::to_string(p.length) + "," + fixed(p.conm_gflops, 6) + "," + fixed(p.consa_gflops, 6) + "\n";
    }
  }
  emit(a.out, text);
  if (!a.out.empty()) std::cout << "slope conm=" << fixed(s_conm) << " consa=" << fixed(s_consa) << "\n";
}

struct ForwardArgs {
  std::string config, preset, weights, rgb, x, out, save_logits;
  std::string dtype = "f32";
};

template <typename S>
void forward_as(const ForwardArgs& a, const SigmaConfig& cfg) {
  const DenseArray<double> rgb = read_ppm(a.rgb);
  const DenseArray<double> x = read_ppm(a.x);
  if (rgb.shape() != x.shape()) {
    fail("shape", "RGB and X images differ in size: " + shape_string(rgb.shape()) + " vs " + shape_string(x.shape()));
  }
  const SigmaWeights<S> w = load_weights<S>(a.weights, cfg);
  const DenseArray<S> logits = forward_logits(rgb.cast<S>(), x.cast<S>(), w, cfg);
  if (!logits.all_finite()) fail("numeric", "logits contain non-finite values");
  const SegmentationMap map = predict_from_logits(logits);
  const std::string image = encode_label_ppm(map, make_palette(cfg.num_classes));
  write_file(a.out, image);
  if (!a.save_logits.empty()) save_tensor(a.save_logits, logits);
  char digest[17];
  std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(fnv1a64(image)));
  std::cout << "forward: " << map.height << "x" << map.width << " classes=" << map.num_classes
            << " dtype=" << a.dtype << " label_digest=" << digest << "\n";
}

void run_forward(const ForwardArgs& a) {
  const SigmaConfig cfg = resolve_config(a.config, a.preset);
  if (parse_dtype(a.dtype) == DType::F32) {
    forward_as<float>(a, cfg);
  } else {
    forward_as<double>(a, cfg);
  }
}

struct ShapesArgs {
  std::string config, preset;
  std::vector<Index> hw{480, 640};
};

void run_shapes(const ShapesArgs& a) {
  const SigmaConfig cfg = resolve_config(a.config, a.preset);
  const Index H = a.hw[0], W = a.hw[1];
  check_input_extent({H, W, 3}, "shapes");
  std::cout << "config " << cfg.hash() << " " << cfg.to_json() << "\n";
  std::cout << "input " << H << "x" << W << "x3\n";
  for (Index k = 0; k < kNumStages; ++k) {
    const Index f = kPatchSize << k;
    std::cout << "stage" << (k + 1) << " " << H / f << "x" << W / f << "x" << cfg.stage_dims[k] << "\n";
  }
  std::cout << "logits " << H / kPatchSize << "x" << W / kPatchSize << "x" << cfg.num_classes << "\n";
  std::cout << "prediction " << H << "x" << W << "\n";
  std::cout << "params " << count_params(cfg) << "\n";
  const FlopReport fr = flops::model(cfg, H, W);
  for (const char* part : {"encoder", "fusion", "decoder", "classifier", "predict"}) {
    std::cout << "gflops." << part << " " << fixed(fr.total_matching(std::string(part) + ".") / 1e9, 3) << "\n";
  }
  std::cout << "gflops " << fixed(fr.gflops(), 3) << "\n";
}

struct BenchArgs {
  int threads = 1;
  int repeats = 5;
  std::vector<Index> lengths{1024, 2048, 4096, 8192};
  bool soft = false;
};

void run_bench(const BenchArgs& a) {
  if (a.threads < 1) fail("usage", "--threads must be >= 1");
  Eigen::setNbThreads(a.threads);
  BenchOptions opt;
  opt.repeats = a.repeats;
  const auto rows = bench_scan(a.lengths, opt);
  std::cout << "length,seq_ms,chunked_ms,attention_ms\n";
  for (const auto& r : rows) {
    std::cout << r.length << "," << fixed(r.seq_ms, 3) << "," << fixed(r.chunked_ms, 3) << ","
              << (r.attention_ms ? fixed(*r.attention_ms, 3) : "") << "\n";
  }
  // Doubling checks between consecutive lengths.
  std::vector<std::string> problems;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& lo = rows[i - 1];
    const auto& hi = rows[i];
    if (hi.length != 2 * lo.length) continue;
    if (lo.length >= 4096) {
      const double ratio = hi.seq_ms / lo.seq_ms;
      if (ratio > 2.6) problems.push_back("scan time ratio " + fixed(ratio, 2) + " at L=" + std::to_string(hi.length));
    }
    if (lo.length >= 1024 && lo.attention_ms && hi.attention_ms) {
      const double ratio = *hi.attention_ms / *lo.attention_ms;
      if (ratio < 3.0) {
        problems.push_back("attention time ratio " + fixed(ratio, 2) + " at L=" + std::to_string(hi.length));
      }
    }
  }
  for (const auto& p : problems) std::cerr << (a.soft ? "warning: " : "error: ") << p << "\n";
  if (!problems.empty() && !a.soft) fail("timing", "scaling thresholds not met", {{"problems", problems}});
}

struct InitArgs {
  std::string config, preset, out;
  std::uint64_t seed = 0;
  std::string dtype = "f32";
};

void run_init(const InitArgs& a) {
  const SigmaConfig cfg = resolve_config(a.config, a.preset);
  if (parse_dtype(a.dtype) == DType::F32) {
    save_weights(a.out, cfg, init_weights<float>(cfg, a.seed));
  } else {
    save_weights(a.out, cfg, init_weights<double>(cfg, a.seed));
  }
  std::cout << "init-weights: " << count_params(cfg) << " parameters, config " << cfg.hash() << " -> " << a.out
            << "\n";
}

void add_config_options(CLI::App* sub, std::string& config, std::string& preset) {
  sub->add_option("--config", config, "Config JSON file")->check(CLI::ExistingFile);
  sub->add_option("--preset", preset, "Built-in config: tiny, small, base");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sigma selective-scan toolkit"};
  app.require_subcommand(1);

  ScanCheckArgs scan_args;
  auto* scan = app.add_subcommand("scan-check", "Oracle-equivalence sweep over random scan instances");
  scan->add_option("--seed", scan_args.seed);
  scan->add_option("--cases", scan_args.cases)->check(CLI::NonNegativeNumber);
  scan->add_option("--max-len", scan_args.max_len)->check(CLI::PositiveNumber);

  GradcheckArgs grad_args;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of analytic gradients");
  grad->add_option("--op", grad_args.op, "linear, scan or scan-corrupt")
      ->check(CLI::IsMember({"linear", "scan", "scan-corrupt"}));
  grad->add_option("--seed", grad_args.seed);
  grad->add_option("--step", grad_args.step)->check(CLI::PositiveNumber);
  grad->add_option("--tol", grad_args.tol)->check(CLI::PositiveNumber);

  FlopsArgs flops_args;
  auto* fl = app.add_subcommand("flops", "ConMB vs ConSA complexity table or scaling curve");
  fl->add_flag("--table", flops_args.table, "Per-stage table at 480x640");
  fl->add_option("--curve", flops_args.curve, "LMIN LMAX (powers of two)")->expected(2);
  fl->add_option("--channels", flops_args.channels, "Channel width for --curve")->check(CLI::PositiveNumber);
  fl->add_option("--state", flops_args.state)->check(CLI::PositiveNumber);
  fl->add_option("--out", flops_args.out, "Report path (.csv or .json); stdout when omitted");
  fl->add_option("--terms-out", flops_args.terms_out, "Per-term breakdown CSV (with --table)");

  ForwardArgs fwd_args;
  auto* fwd = app.add_subcommand("forward", "Segment an RGB/X image pair");
  add_config_options(fwd, fwd_args.config, fwd_args.preset);
  fwd->add_option("--weights", fwd_args.weights)->required()->check(CLI::ExistingFile);
  fwd->add_option("--rgb", fwd_args.rgb)->required()->check(CLI::ExistingFile);
  fwd->add_option("--x", fwd_args.x)->required()->check(CLI::ExistingFile);
  fwd->add_option("--out", fwd_args.out, "Label image (PPM)")->required();
  fwd->add_option("--save-logits", fwd_args.save_logits, "Logits tensor file");
  fwd->add_option("--dtype", fwd_args.dtype)->check(CLI::IsMember({"f32", "f64"}));

  ShapesArgs shape_args;
  auto* shp = app.add_subcommand("shapes", "Pyramid, parameter and FLOP audit");
  add_config_options(shp, shape_args.config, shape_args.preset);
  shp->add_option("--hw", shape_args.hw, "Input height and width")->expected(2);

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Scan and attention timing");
  bench->add_option("--threads", bench_args.threads);
  bench->add_option("--repeats", bench_args.repeats)->check(CLI::PositiveNumber);
  bench->add_option("--lengths", bench_args.lengths)->check(CLI::PositiveNumber);
  bench->add_flag("--soft", bench_args.soft, "Warn instead of failing on timing thresholds");

  InitArgs init_args;
  auto* init = app.add_subcommand("init-weights", "Write a seeded random weight bundle");
  add_config_options(init, init_args.config, init_args.preset);
  init->add_option("--seed", init_args.seed);
  init->add_option("--out", init_args.out)->required();
  init->add_option("--dtype", init_args.dtype)->check(CLI::IsMember({"f32", "f64"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*scan) run_scan_check(scan_args);
    if (*grad) run_gradcheck(grad_args);
    if (*fl) run_flops(flops_args);
    if (*fwd) run_forward(fwd_args);
    if (*shp) run_shapes(shape_args);
    if (*bench) run_bench(bench_args);
    if (*init) run_init(init_args);
  } catch (const Failure& f) {
    if (f.kind == "usage") {
      std::cerr << "usage error: " << f.message << "\n";
      return 2;
    }
    std::cerr << json{{"error", f.kind}, {"message", f.message}, {"details", f.details}}.dump() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << json{{"error", "parse"}, {"message", e.what()}, {"offset", e.offset()}}.dump() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << json{{"error", "numeric"}, {"message", e.what()}, {"index", e.index()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "runtime"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
