#include "relureduce/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "csv_internal.hpp"
#include "relureduce/errors.hpp"
#include "relureduce/profile.hpp"

namespace relureduce {

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::vector<std::string> split_labels(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty() || s == "none" || s == "NA") return out;
  std::string cur;
  for (char c : s) {
    if (c == '+') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_scale(const std::string& s, const std::string& line) {
  if (s.empty() || s == "NA" || s == "none") return 1.0;
  return csvi::parse_num(s, line);
}

bool dominates(const CandidatePoint& a, const CandidatePoint& b) {
  return a.relu_count <= b.relu_count && a.accuracy >= b.accuracy &&
         (a.relu_count < b.relu_count || a.accuracy > b.accuracy);
}

}  // namespace

const std::vector<std::pair<double, double>>& default_latency_points() {
  static const std::vector<std::pair<double, double>> points = {
      {229.38, 4.61}, {196.61, 3.94}, {114.69, 2.38}, {57.34, 1.37}, {49.15, 1.19},
      {28.67, 0.74},  {24.57, 0.56},  {14.33, 0.52},  {12.28, 0.45}, {7.17, 0.21},
  };
  return points;
}

LatencyModel fit_latency_model(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2)
    throw config_error("latency fit needs at least two (kilo-ReLU, seconds) points");
  double xm = 0.0, ym = 0.0;
  for (const auto& [x, y] : points) {
    xm += x;
    ym += y;
  }
  const double n = static_cast<double>(points.size());
  xm /= n;
  ym /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - xm) * (x - xm);
    sxy += (x - xm) * (y - ym);
  }
  if (sxx == 0.0)
    throw config_error("latency fit is degenerate: all kilo-ReLU values are equal");

  LatencyModel m;
  m.slope = sxy / sxx;
  const double raw_intercept = ym - m.slope * xm;
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& [x, y] : points) {
    const double r = y - (m.slope * x + raw_intercept);
    ss_res += r * r;
    ss_tot += (y - ym) * (y - ym);
  }
  m.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  m.r_squared = std::min(1.0, std::max(0.0, m.r_squared));
  m.intercept = std::max(0.0, raw_intercept);
  m.fit_points = points;
  return m;
}

double estimate_latency(const LatencyModel& m, double kilo_relus) {
  return std::max(0.0, m.slope * kilo_relus + m.intercept);
}

double acc_per_kilorelu(double accuracy, long long relu_count) {
  if (relu_count <= 0)
    throw config_error("accuracy per kilo-ReLU is undefined without ReLUs");
  return accuracy / (static_cast<double>(relu_count) / 1000.0);
}

std::vector<CandidatePoint> pareto_front(const std::vector<CandidatePoint>& points) {
  std::vector<CandidatePoint> out;
  for (size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (size_t j = 0; j < points.size() && !dominated; ++j)
      if (j != i && dominates(points[j], points[i])) dominated = true;
    if (!dominated) out.push_back(points[i]);
  }
  std::stable_sort(out.begin(), out.end(), [](const CandidatePoint& a, const CandidatePoint& b) {
    if (a.relu_count != b.relu_count) return a.relu_count > b.relu_count;
    return a.accuracy > b.accuracy;
  });
  return out;
}

std::string candidate_key(const ReduceStep& step) {
  auto culled = step.culled;
  auto thinned = step.thinned;
  std::sort(culled.begin(), culled.end());
  std::sort(thinned.begin(), thinned.end());
  return join(culled, "+") + "|" + (thinned.empty() ? "none" : join(thinned, "+")) +
         "|" + fmt_g(step.alpha) + "|" + fmt_g(step.rho);
}

std::map<std::string, double> accuracy_table_from_csv(const std::string& csv) {
  std::map<std::string, double> out;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = csvi::split_fields(line);
    if (fields[0] == "culled") continue;  // header
    // plain tables carry accuracy in column 4; candidates/pareto emissions
    // carry a relus column first, so theirs sits in column 5
    if (fields.size() != 5 && fields.size() < 6)
      throw config_error("accuracy table: expected culled,thinned,alpha,rho,accuracy but got '" +
                         line + "'");
    ReduceStep step;
    step.culled = split_labels(fields[0]);
    step.thinned = split_labels(fields[1]);
    step.alpha = parse_scale(fields[2], line);
    step.rho = parse_scale(fields[3], line);
    const std::string& acc = fields.size() == 5 ? fields[4] : fields[5];
    out[candidate_key(step)] = csvi::parse_num(acc, line);
  }
  return out;
}

std::vector<CandidatePoint> candidates_from_csv(const std::string& csv,
                                                const LatencyModel& m) {
  std::vector<CandidatePoint> out;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = csvi::split_fields(line);
    if (fields[0] == "culled") continue;  // header
    if (fields.size() < 6)
      throw config_error("candidate table: expected culled,thinned,alpha,rho,relus,accuracy but got '" +
                         line + "'");
    CandidatePoint p;
    p.step.culled = split_labels(fields[0]);
    p.step.thinned = split_labels(fields[1]);
    p.step.alpha = parse_scale(fields[2], line);
    p.step.rho = parse_scale(fields[3], line);
    p.relu_count = static_cast<long long>(csvi::parse_num(fields[4], line));
    p.accuracy = csvi::parse_num(fields[5], line);
    p.latency_est = estimate_latency(m, static_cast<double>(p.relu_count) / 1000.0);
    p.acc_per_kilorelu = acc_per_kilorelu(p.accuracy, p.relu_count);
    out.push_back(std::move(p));
  }
  return out;
}

std::string pareto_csv(const std::vector<CandidatePoint>& points) {
  std::string out = "culled,thinned,alpha,rho,relus,accuracy,latency_s,acc_per_kilorelu\n";
  char buf[192];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%lld,%.2f,%.4f,%.4f\n",
                  join(p.step.culled, "+").c_str(),
                  p.step.thinned.empty() ? "none" : join(p.step.thinned, "+").c_str(),
                  fmt_g(p.step.alpha).c_str(), fmt_g(p.step.rho).c_str(), p.relu_count,
                  p.accuracy, p.latency_est, p.acc_per_kilorelu);
    out += buf;
  }
  return out;
}

PipelineResult run_deepreduce(const PipelineConfig& cfg, const PipelineInputs& inputs) {
  for (const auto& [a, r] : cfg.ladder)
    if (!(a > 0.0 && a <= 1.0 && r > 0.0 && r <= 1.0))
      throw config_error("pipeline: reshape ladder entry (" + fmt_g(a) + ", " + fmt_g(r) +
                         ") out of range");
  if (cfg.parity != "keep-odd" && cfg.parity != "keep-even")
    throw config_error("pipeline: unknown thinning parity '" + cfg.parity + "'");

  const NetworkGraph base = build_architecture(cfg.arch);
  const StageView sv = stage_view(base);

  const bool table_mode = !inputs.accuracy_table.empty();
  const bool have_measurements = !inputs.measurements.empty();
  const bool need_training = !table_mode || !have_measurements;
  if (need_training && inputs.data.train.count == 0)
    throw config_error("pipeline: training requested without a dataset");

  PipelineResult res;
  KDConfig kd = cfg.kd;
  kd.enabled = true;

  ModelF teacher;
  if (need_training) {
    teacher = make_model<float>(base, cfg.train.seed);
    const TrainResult tr = train(teacher, inputs.data.train, inputs.data.test, cfg.train);
    res.teacher_accuracy = tr.final_val_acc * 100.0;
  }

  if (have_measurements) {
    res.measurements = inputs.measurements;
  } else {
    int pi = 0;
    for (auto& probe : probe_networks(base)) {
      TrainConfig tc = cfg.train;
      tc.seed = cfg.train.seed + 1000 + pi;
      ModelF pm = make_model<float>(probe, tc.seed);
      train(pm, inputs.data.train, inputs.data.test, tc, &teacher, &kd);
      const auto& label = sv.stages[pi].first;
      res.measurements.push_back(
          {label, static_cast<double>(count_relus(probe).total) / 1000.0, -1.0,
           evaluate(pm, inputs.data.test) * 100.0});
      ++pi;
    }
  }
  res.criticality = criticality_scores(res.measurements, cfg.w);
  res.latency = fit_latency_model(cfg.latency_points.empty() ? default_latency_points()
                                                             : cfg.latency_points);

  const auto& order = res.criticality.order;  // least critical first
  std::vector<std::string> cull_seq;
  if (cfg.cull_override.empty()) {
    cull_seq.assign(order.begin(), order.end() - 1);
  } else {
    std::set<std::string> labels(order.begin(), order.end()), seen;
    for (const auto& s : cfg.cull_override) {
      if (!labels.count(s))
        throw config_error("pipeline: cull override names unknown stage '" + s + "'");
      if (!seen.insert(s).second)
        throw config_error("pipeline: cull override repeats stage '" + s + "'");
      if (s == res.criticality.most_critical)
        throw config_error("pipeline: refusing to cull the most critical stage '" + s + "'");
    }
    cull_seq = cfg.cull_override;
  }

  std::vector<std::string> culled;
  int ci = 0;
  for (size_t it = 0; it < cull_seq.size(); ++it) {
    culled.push_back(cull_seq[it]);
    std::vector<std::string> remaining;
    for (const auto& [label, ids] : sv.stages)
      if (std::find(culled.begin(), culled.end(), label) == culled.end())
        remaining.push_back(label);

    std::vector<ReduceStep> variants;
    variants.push_back({culled, {}, cfg.parity, 1.0, 1.0});
    variants.push_back({culled, remaining, cfg.parity, 1.0, 1.0});
    for (const auto& [a, r] : cfg.ladder)
      variants.push_back({culled, remaining, cfg.parity, a, r});

    for (const ReduceStep& step : variants) {
      const NetworkGraph g = apply_reduce_step(base, step);
      CandidatePoint p;
      p.step = step;
      p.relu_count = count_relus(g).total;
      if (table_mode) {
        const auto hit = inputs.accuracy_table.find(candidate_key(step));
        if (hit == inputs.accuracy_table.end())
          throw config_error("pipeline: no accuracy row for candidate '" +
                             step_label(step) + "'");
        p.accuracy = hit->second;
      } else {
        TrainConfig tc = cfg.train;
        tc.seed = cfg.train.seed + 2000 + ci;
        ModelF m = make_model<float>(g, tc.seed);
        try {
          res.candidate_training.push_back(
              train(m, inputs.data.train, inputs.data.test, tc, &teacher, &kd));
        } catch (const training_error& e) {
          if (cfg.keep_going) {
            ++ci;
            continue;  // drop this candidate, keep the rest of the sweep
          }
          throw training_error(std::string(e.what()) + " [candidate " +
                               step_label(step) + "]");
        }
        p.accuracy = evaluate(m, inputs.data.test) * 100.0;
      }
      p.latency_est = estimate_latency(res.latency, static_cast<double>(p.relu_count) / 1000.0);
      p.acc_per_kilorelu = acc_per_kilorelu(p.accuracy, p.relu_count);
      res.candidates.push_back(std::move(p));
      ++ci;
    }
  }
  res.pareto = pareto_front(res.candidates);
  return res;
}

}  // namespace relureduce
