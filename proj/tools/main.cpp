#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "relureduce/checkpoint.hpp"
#include "relureduce/config.hpp"
#include "relureduce/criticality.hpp"
#include "relureduce/errors.hpp"
#include "relureduce/graph.hpp"
#include "relureduce/ioutil.hpp"
#include "relureduce/merge.hpp"
#include "relureduce/passes.hpp"
#include "relureduce/pipeline.hpp"
#include "relureduce/profile.hpp"

namespace fs = std::filesystem;
using namespace relureduce;

namespace {

struct CliState {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;
  bool dry_run = false;

  // per-command overrides
  std::optional<std::string> family;
  std::optional<int> input, channels, classes, epochs, batch_size;
  std::optional<double> alpha, rho, w, tolerance;
  std::optional<bool> strip_residuals;
  std::optional<std::string> from_csv, accuracy_csv, latency_csv, candidates_csv;
  std::optional<std::string> checkpoint_in, checkpoint_out;
  std::string stages_override;
  bool keep_going = false;
  int samples = 100;
  std::vector<double> kilo_relus;
};

RunConfig assemble_config(const CliState& st) {
  RunConfig cfg;
  if (!st.config_path.empty()) {
    if (!fs::exists(st.config_path))
      throw config_error("config file not found: " + st.config_path);
    cfg = config_from_json(read_file(st.config_path));
  }
  if (st.family) cfg.arch.family = *st.family;
  if (st.input) cfg.arch.input = *st.input;
  if (st.channels) cfg.arch.channels = *st.channels;
  if (st.classes) cfg.arch.classes = *st.classes;
  if (st.alpha) cfg.arch.alpha = *st.alpha;
  if (st.rho) cfg.arch.rho = *st.rho;
  if (st.strip_residuals) cfg.arch.strip_residuals = *st.strip_residuals;
  if (st.epochs) cfg.train.epochs = *st.epochs;
  if (st.batch_size) cfg.train.batch_size = *st.batch_size;
  if (st.w) cfg.w = *st.w;
  if (st.seed) {
    cfg.train.seed = *st.seed;
    cfg.data.seed = *st.seed;
  }
  if (st.threads) cfg.threads = *st.threads;
  else if (const char* env = std::getenv("RELUREDUCE_THREADS")) {
    try {
      cfg.threads = std::stoi(env);
    } catch (const std::exception&) {
      throw config_error("RELUREDUCE_THREADS is not a number: " + std::string(env));
    }
  }
  if (cfg.threads < 1) throw config_error("config: threads must be positive");
  if (st.out_dir) cfg.io.out_dir = *st.out_dir;
  if (st.from_csv) cfg.io.measurements_csv = *st.from_csv;
  if (st.accuracy_csv) cfg.io.accuracy_csv = *st.accuracy_csv;
  if (st.latency_csv) cfg.io.latency_csv = *st.latency_csv;
  if (st.candidates_csv) cfg.io.candidates_csv = *st.candidates_csv;
  if (st.checkpoint_in) cfg.io.checkpoint_in = *st.checkpoint_in;
  if (st.checkpoint_out) cfg.io.checkpoint_out = *st.checkpoint_out;
  if (!st.stages_override.empty()) {
    cfg.cull_override.clear();
    std::string cur;
    for (char c : st.stages_override + ",") {
      if (c == ',') {
        if (!cur.empty()) cfg.cull_override.push_back(cur);
        cur.clear();
      } else if (c != ' ') {
        cur += c;
      }
    }
  }
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw config_error(what + " path is required");
  if (!fs::exists(path)) throw config_error(what + " not found: " + path);
}

void emit(const RunConfig& cfg, const std::string& name, const std::string& bytes,
          bool dry_run) {
  const fs::path target = fs::path(cfg.io.out_dir) / name;
  if (dry_run) {
    std::cout << "plan: would write " << target.string() << " (" << bytes.size()
              << " bytes)\n";
    return;
  }
  fs::create_directories(cfg.io.out_dir);
  write_file_atomic(target.string(), bytes);
  std::cout << "wrote " << target.string() << "\n";
}

void print_manifest(const RunConfig& cfg) {
  std::cout << "manifest:\n" << config_to_json(cfg);
}

const std::vector<std::string> kFamilies = {
    "resnet6",  "resnet9",  "resnet10",    "resnet18",
    "resnet34", "resnet56", "mobilenetv1", "vgg16"};

NetworkGraph build_from(const RunConfig& cfg) {
  if (cfg.arch.family.empty())
    throw config_error("config: arch.family is required (--arch)");
  if (std::find(kFamilies.begin(), kFamilies.end(), cfg.arch.family) ==
      kFamilies.end()) {
    std::string known;
    for (const auto& f : kFamilies) known += (known.empty() ? "" : ", ") + f;
    throw config_error("config: unknown arch.family '" + cfg.arch.family +
                       "' (expected one of " + known + ")");
  }
  return build_architecture(cfg.arch);
}

LatencyModel model_from(const RunConfig& cfg) {
  if (!cfg.io.latency_csv.empty()) {
    require_file(cfg.io.latency_csv, "latency points csv");
    std::vector<std::pair<double, double>> pts;
    const std::string csv = read_file(cfg.io.latency_csv);
    std::string line;
    for (size_t pos = 0; pos < csv.size();) {
      const size_t eol = csv.find('\n', pos);
      line = csv.substr(pos, eol == std::string::npos ? csv.size() - pos : eol - pos);
      pos = eol == std::string::npos ? csv.size() : eol + 1;
      if (line.empty() || line == "\r" || line.rfind("kilo", 0) == 0) continue;
      const size_t comma = line.find(',');
      if (comma == std::string::npos)
        throw config_error("latency csv: expected kilo_relus,seconds but got '" + line + "'");
      try {
        pts.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
      } catch (const std::exception&) {
        throw config_error("latency csv: malformed row '" + line + "'");
      }
    }
    return fit_latency_model(pts);
  }
  if (!cfg.latency_points.empty()) return fit_latency_model(cfg.latency_points);
  return fit_latency_model(default_latency_points());
}

int cmd_profile(const RunConfig& cfg, bool dry_run) {
  const NetworkGraph g = build_from(cfg);
  const auto relus = count_relus(g);
  std::cout << "arch " << cfg.arch.family << " @ " << cfg.arch.input << "x"
            << cfg.arch.input << "\n";
  std::cout << "total relus " << relus.total << "\n";
  std::cout << "total flops " << count_flops(g).total << "\n";
  std::cout << "total params " << count_params(g).total << "\n";
  for (const auto& row : stage_summary(g))
    std::cout << "stage " << row.stage << " relus " << row.relus << "\n";
  emit(cfg, "counts.csv", counts_csv(g), dry_run);
  emit(cfg, "stage_summary.csv", stage_summary_csv(g), dry_run);
  emit(cfg, "distribution.csv", distribution_csv(distribution_report(g)), dry_run);
  emit(cfg, "manifest.json", config_to_json(cfg), dry_run);
  if (dry_run) print_manifest(cfg);
  return 0;
}

std::string order_line(const CriticalityReport& rep) {
  std::string out = "order:";
  for (size_t i = 0; i < rep.order.size(); ++i)
    out += (i ? " < " : " ") + rep.order[i];
  return out;
}

int cmd_criticality(const RunConfig& cfg, bool dry_run) {
  std::vector<StageMeasurement> ms;
  if (!cfg.io.measurements_csv.empty()) {
    require_file(cfg.io.measurements_csv, "measurements csv");
    ms = measurements_from_csv(read_file(cfg.io.measurements_csv));
  } else {
    // train the D probes against the Full-ReLU teacher
    const NetworkGraph base = build_from(cfg);
    if (dry_run) {
      std::cout << "plan: would train " << probe_networks(base).size()
                << " stage probes plus the teacher\n";
      print_manifest(cfg);
      return 0;
    }
    PipelineInputs in;
    in.data = ingest_dataset(cfg.data);
    ModelF teacher = make_model<float>(base, cfg.train.seed);
    train(teacher, in.data.train, in.data.test, cfg.train);
    KDConfig kd = cfg.kd;
    kd.enabled = true;
    const StageView sv = stage_view(base);
    int pi = 0;
    for (auto& probe : probe_networks(base)) {
      TrainConfig tc = cfg.train;
      tc.seed = cfg.train.seed + 1000 + pi;
      ModelF pm = make_model<float>(probe, tc.seed);
      train(pm, in.data.train, in.data.test, tc, &teacher, &kd);
      ms.push_back({sv.stages[pi].first,
                    static_cast<double>(count_relus(probe).total) / 1000.0, -1.0,
                    evaluate(pm, in.data.test) * 100.0});
      ++pi;
    }
  }
  const CriticalityReport rep = criticality_scores(ms, cfg.w);
  std::cout << order_line(rep) << "\n";
  std::cout << "most critical: " << rep.most_critical << " (never culled)\n";
  emit(cfg, "criticality.csv", criticality_csv(rep), dry_run);
  emit(cfg, "manifest.json", config_to_json(cfg), dry_run);
  if (dry_run) print_manifest(cfg);
  return 0;
}

std::string candidates_csv_with_flags(const PipelineResult& res) {
  std::string out =
      "culled,thinned,alpha,rho,relus,accuracy,latency_s,acc_per_kilorelu,pareto\n";
  const std::string body = pareto_csv(res.candidates);
  const std::string front = pareto_csv(res.pareto);
  size_t pos = body.find('\n') + 1;
  while (pos < body.size()) {
    const size_t eol = body.find('\n', pos);
    const std::string row = body.substr(pos, eol - pos);
    out += row + (front.find("\n" + row + "\n") != std::string::npos ? ",1\n" : ",0\n");
    pos = eol + 1;
  }
  return out;
}

int cmd_reduce(const RunConfig& cfg, bool dry_run, bool keep_going) {
  const NetworkGraph base = build_from(cfg);
  PipelineConfig pc = pipeline_config(cfg);
  pc.keep_going = keep_going;
  PipelineInputs in;
  if (!cfg.io.measurements_csv.empty()) {
    require_file(cfg.io.measurements_csv, "measurements csv");
    in.measurements = measurements_from_csv(read_file(cfg.io.measurements_csv));
  }
  if (!cfg.io.accuracy_csv.empty()) {
    require_file(cfg.io.accuracy_csv, "accuracy csv");
    in.accuracy_table = accuracy_table_from_csv(read_file(cfg.io.accuracy_csv));
  }
  const bool needs_data = in.accuracy_table.empty() || in.measurements.empty();
  if (needs_data) in.data = ingest_dataset(cfg.data);

  if (dry_run) {
    const StageView sv = stage_view(base);
    const size_t iters =
        cfg.cull_override.empty() ? sv.stages.size() - 1 : cfg.cull_override.size();
    std::cout << "plan: " << iters << " culling iterations x 5 variants = "
              << 5 * iters << " candidates\n";
    std::cout << "plan: accuracies "
              << (in.accuracy_table.empty() ? "from the desk-scale trainer"
                                            : "from the supplied table")
              << "\n";
    print_manifest(cfg);
    return 0;
  }

  const PipelineResult res = run_deepreduce(pc, in);

  if (res.teacher_accuracy < 0) {
    std::cout << "teacher accuracy n/a (table mode)\n";
  } else {
    std::printf("teacher accuracy %.2f\n", res.teacher_accuracy);
  }
  std::cout << order_line(res.criticality) << "\n";
  std::cout << "candidates " << res.candidates.size() << ", pareto "
            << res.pareto.size() << "\n";
  emit(cfg, "candidates.csv", candidates_csv_with_flags(res), dry_run);
  emit(cfg, "pareto.csv", pareto_csv(res.pareto), dry_run);
  emit(cfg, "criticality.csv", criticality_csv(res.criticality), dry_run);
  emit(cfg, "manifest.json", config_to_json(cfg), dry_run);
  return 0;
}

int cmd_merge(const RunConfig& cfg, bool dry_run, double tolerance, int samples) {
  require_file(cfg.io.checkpoint_in, "input checkpoint");
  if (!dry_run && cfg.io.checkpoint_out.empty())
    throw config_error("output checkpoint path is required (--out)");
  ModelF original = load_checkpoint(cfg.io.checkpoint_in);
  if (dry_run) {
    std::cout << "plan: would fold batchnorms and merge linear chains of "
              << conv_count(original.graph) << " convs\n";
    print_manifest(cfg);
    return 0;
  }
  ModelF merged = merge_adjacent_linear(fold_batchnorm(original));
  const auto rep = equivalence_check(original, merged, samples, 10, tolerance);
  std::cout << "convs " << conv_count(original.graph) << " -> "
            << conv_count(merged.graph) << "\n";
  std::printf("max rel error %.3g (tolerance %.3g)\n", rep.max_rel_error, tolerance);
  if (!rep.pass) throw equivalence_error("merged model exceeds tolerance");
  const fs::path parent = fs::path(cfg.io.checkpoint_out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_checkpoint(cfg.io.checkpoint_out, merged);
  std::cout << "wrote " << cfg.io.checkpoint_out << "\n";
  return 0;
}

int cmd_estimate(const RunConfig& cfg, bool dry_run, const std::vector<double>& kilo) {
  const LatencyModel m = model_from(cfg);
  std::printf("model: slope %.6f s/kilo-relu, intercept %.6f s, r2 %.4f\n", m.slope,
              m.intercept, m.r_squared);
  if (dry_run) {
    print_manifest(cfg);
    return 0;
  }
  std::vector<double> queries = kilo;
  if (!cfg.io.candidates_csv.empty()) {
    require_file(cfg.io.candidates_csv, "candidates csv");
    for (const auto& p : candidates_from_csv(read_file(cfg.io.candidates_csv), m))
      queries.push_back(static_cast<double>(p.relu_count) / 1000.0);
  }
  if (queries.empty())
    throw config_error("estimate needs --kilo-relus values or --candidates-csv");
  std::cout << "kilo_relus,seconds\n";
  for (double k : queries) std::printf("%.3f,%.4f\n", k, estimate_latency(m, k));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CliState st;
  CLI::App app{"ReLU-budget reduction toolkit: profile, criticality, reduce, merge, estimate"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", st.config_path, "JSON config file (sections arch/train/kd/pipeline/io)");
  app.add_option("--seed", st.seed, "seed for training and data generation");
  app.add_option("--threads", st.threads, "worker threads (env RELUREDUCE_THREADS)");
  app.add_option("--out-dir", st.out_dir, "output directory");
  app.add_flag("--dry-run", st.dry_run, "validate, print the plan and manifest, write nothing");

  auto add_arch = [&](CLI::App* c) {
    c->add_option("--arch", st.family, "architecture family");
    c->add_option("--input", st.input, "input resolution");
    c->add_option("--channels", st.channels, "input channels");
    c->add_option("--classes", st.classes, "output classes");
    c->add_option("--alpha", st.alpha, "channel width multiplier");
    c->add_option("--rho", st.rho, "input resolution multiplier");
    c->add_option("--strip-residuals", st.strip_residuals, "remove shortcut adds");
  };
  auto add_train = [&](CLI::App* c) {
    c->add_option("--epochs", st.epochs, "training epochs");
    c->add_option("--batch-size", st.batch_size, "mini-batch size");
  };

  CLI::App* profile = app.add_subcommand("profile", "count ReLUs/FLOPs/params per layer and stage");
  add_arch(profile);

  CLI::App* crit = app.add_subcommand("criticality", "score stage criticality");
  add_arch(crit);
  add_train(crit);
  crit->add_option("--from-csv", st.from_csv, "measurements csv (stage,relus,acc_wo_kd,acc_w_kd)");
  crit->add_option("-w,--w", st.w, "ReLU-count weight exponent");

  CLI::App* reduce = app.add_subcommand("reduce", "run the full reduction pipeline");
  add_arch(reduce);
  add_train(reduce);
  reduce->add_option("--from-csv", st.from_csv, "criticality measurements csv");
  reduce->add_option("--accuracy-from-csv", st.accuracy_csv,
                     "candidate accuracy table (culled,thinned,alpha,rho,accuracy)");
  reduce->add_option("--stages-override", st.stages_override,
                     "comma-separated cull sequence, least critical first");
  reduce->add_flag("--keep-going", st.keep_going, "warn instead of failing on a candidate");
  reduce->add_option("-w,--w", st.w, "ReLU-count weight exponent");

  CLI::App* merge = app.add_subcommand("merge", "fold batchnorms and merge linear layers");
  merge->add_option("--in", st.checkpoint_in, "input checkpoint")->required();
  merge->add_option("--out", st.checkpoint_out, "output checkpoint");
  merge->add_option("--tolerance", st.tolerance, "relative L-inf equivalence tolerance");
  merge->add_option("--samples", st.samples, "equivalence probe inputs");

  CLI::App* estimate = app.add_subcommand("estimate", "estimate private-inference latency");
  estimate->add_option("--kilo-relus", st.kilo_relus, "ReLU counts in thousands");
  estimate->add_option("--candidates-csv", st.candidates_csv, "estimate each row of a candidates csv");
  estimate->add_option("--points", st.latency_csv, "refit from a kilo_relus,seconds csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = assemble_config(st);
    if (app.got_subcommand(profile)) return cmd_profile(cfg, st.dry_run);
    if (app.got_subcommand(crit)) return cmd_criticality(cfg, st.dry_run);
    if (app.got_subcommand(reduce)) return cmd_reduce(cfg, st.dry_run, st.keep_going);
    if (app.got_subcommand(merge))
      return cmd_merge(cfg, st.dry_run, st.tolerance.value_or(1e-4), st.samples);
    if (app.got_subcommand(estimate)) return cmd_estimate(cfg, st.dry_run, st.kilo_relus);
    throw config_error("no subcommand selected");
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const build_error& e) {
    std::cerr << "build error: " << e.what() << "\n";
    return 3;
  } catch (const training_error& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 4;
  } catch (const equivalence_error& e) {
    std::cerr << "equivalence error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
