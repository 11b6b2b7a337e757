#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "relureduce/dataset.hpp"
#include "relureduce/errors.hpp"
#include "relureduce/ioutil.hpp"
#include "relureduce/pipeline.hpp"
#include "relureduce/profile.hpp"

using namespace relureduce;

namespace {

bool near(double a, double b, double tol) { return std::abs(a - b) < tol; }

std::string data_file(const std::string& name) {
  return read_file(std::string(RELUREDUCE_DATA_DIR) + "/" + name);
}

// Normal equations solved directly via Cramer's rule: an oracle independent
// of the centered-sums formulation in fit_latency_model.
void ols_oracle(const std::vector<std::pair<double, double>>& pts, double& slope,
                double& intercept) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(pts.size());
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double det = sxx * n - sx * sx;
  slope = (sxy * n - sx * sy) / det;
  intercept = (sxx * sy - sx * sxy) / det;
}

CandidatePoint point(long long relus, double acc) {
  CandidatePoint p;
  p.relu_count = relus;
  p.accuracy = acc;
  return p;
}

std::vector<std::pair<std::string, double>> mock_table_rows();

}  // namespace

TEST_CASE("least squares reproduces exact lines") {
  auto m = fit_latency_model({{1.0, 3.0}, {2.0, 5.0}, {3.0, 7.0}});  // y = 2x + 1
  CHECK(near(m.slope, 2.0, 1e-12));
  CHECK(near(m.intercept, 1.0, 1e-12));
  CHECK(near(m.r_squared, 1.0, 1e-12));

  auto two = fit_latency_model({{1.0, 3.0}, {3.0, 5.0}});
  CHECK(near(two.slope, 1.0, 1e-12));
  CHECK(near(two.intercept, 2.0, 1e-12));
  CHECK(near(two.r_squared, 1.0, 1e-12));

  CHECK_THROWS_AS(fit_latency_model({{1.0, 3.0}}), config_error);
  CHECK_THROWS_AS(fit_latency_model({{2.0, 3.0}, {2.0, 5.0}, {2.0, 7.0}}), config_error);
}

TEST_CASE("reference fit matches an independent normal-equations oracle") {
  const auto& pts = default_latency_points();
  REQUIRE(pts.size() == 10);
  auto m = fit_latency_model(pts);
  double slope = 0, intercept = 0;
  ols_oracle(pts, slope, intercept);
  CHECK(near(m.slope, slope, 1e-9));
  CHECK(near(m.intercept, intercept, 1e-9));
  CHECK(m.r_squared >= 0.95);
  CHECK(m.fit_points == pts);

  // the bundled points equal the shipped CSV
  std::vector<std::pair<double, double>> from_csv;
  const std::string csv = data_file("latency_points_resnet18_cifar100.csv");
  size_t pos = csv.find('\n') + 1;  // skip header
  while (pos < csv.size()) {
    const size_t comma = csv.find(',', pos), eol = csv.find('\n', pos);
    from_csv.emplace_back(std::stod(csv.substr(pos, comma - pos)),
                          std::stod(csv.substr(comma + 1, eol - comma - 1)));
    pos = eol + 1;
  }
  CHECK(from_csv == pts);
}

TEST_CASE("negative intercepts clamp to zero") {
  auto m = fit_latency_model({{1.0, 0.0}, {2.0, 1.0}, {3.0, 2.0}});  // y = x - 1
  CHECK(near(m.slope, 1.0, 1e-12));
  CHECK(m.intercept == 0.0);
  CHECK(near(m.r_squared, 1.0, 1e-12));  // r^2 belongs to the unclamped line
}

TEST_CASE("latency estimates stay within the published tolerances") {
  auto m = fit_latency_model(default_latency_points());
  CHECK(estimate_latency(m, 0.0) == m.intercept);
  CHECK(near(estimate_latency(m, 114.69), 2.38, 0.25 * 2.38));
  // cross-dataset extrapolation at the largest measured network
  CHECK(near(estimate_latency(m, 917.52), 17.16, 0.30 * 17.16));

  auto falling = fit_latency_model({{1.0, 5.0}, {2.0, 3.0}, {3.0, 1.0}});
  CHECK(estimate_latency(falling, 10.0) == 0.0);  // floored, never negative
}

TEST_CASE("accuracy per kilo-relu matches the recorded column") {
  CHECK(near(acc_per_kilorelu(76.22, 229376), 0.332, 0.001));
  CHECK(near(acc_per_kilorelu(62.30, 7168), 8.69, 0.005));
  CHECK(acc_per_kilorelu(100.0, 100000) == 1.0);
  CHECK_THROWS_AS(acc_per_kilorelu(50.0, 0), config_error);
}

TEST_CASE("pareto keeps the reference rows and drops dominated points") {
  auto m = fit_latency_model(default_latency_points());
  auto rows = candidates_from_csv(data_file("pareto_resnet18_cifar100.csv"), m);
  REQUIRE(rows.size() == 10);
  CHECK(rows[0].relu_count == 229376);
  CHECK(rows[9].relu_count == 7168);

  auto front = pareto_front(rows);
  CHECK(front.size() == 10);  // the published set is already non-dominated
  for (size_t i = 0; i + 1 < front.size(); ++i)
    CHECK(front[i].relu_count > front[i + 1].relu_count);

  SUBCASE("a dominated synthetic point is removed") {
    auto rows2 = rows;
    rows2.push_back(point(229376, 70.0));  // 196608 @ 75.51 dominates it
    auto f2 = pareto_front(rows2);
    CHECK(f2.size() == 10);
    for (const auto& p : f2) CHECK(!(p.relu_count == 229376 && p.accuracy == 70.0));
  }
  SUBCASE("idempotent and mutually non-dominated") {
    auto once = pareto_front(rows);
    auto twice = pareto_front(once);
    CHECK(pareto_csv(once) == pareto_csv(twice));
    for (size_t i = 0; i < once.size(); ++i)
      for (size_t j = 0; j < once.size(); ++j)
        if (i != j)
          CHECK(!(once[j].relu_count <= once[i].relu_count &&
                  once[j].accuracy >= once[i].accuracy &&
                  (once[j].relu_count < once[i].relu_count ||
                   once[j].accuracy > once[i].accuracy)));
  }
  SUBCASE("single point survives; duplicates both survive") {
    CHECK(pareto_front({point(100, 50.0)}).size() == 1);
    CHECK(pareto_front({point(100, 50.0), point(100, 50.0)}).size() == 2);
  }
}

TEST_CASE("candidate csv emission round-trips") {
  auto m = fit_latency_model(default_latency_points());
  auto rows = candidates_from_csv(data_file("pareto_resnet18_cifar100.csv"), m);
  const std::string csv = pareto_csv(rows);
  CHECK(csv == pareto_csv(rows));
  CHECK(csv.rfind("culled,thinned,alpha,rho,relus,accuracy,latency_s,acc_per_kilorelu\n", 0) == 0);

  auto back = candidates_from_csv(csv, m);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].relu_count == rows[i].relu_count);
    CHECK(near(back[i].accuracy, rows[i].accuracy, 0.005));
    CHECK(back[i].step.culled == rows[i].step.culled);
    CHECK(back[i].step.thinned == rows[i].step.thinned);
  }

  CHECK_THROWS_AS(candidates_from_csv("S1,none,1,1,100\n", m), config_error);
  CHECK_THROWS_AS(candidates_from_csv("S1,none,1,1,1x0,70.0\n", m), config_error);
}

TEST_CASE("accuracy tables key on the canonical step") {
  auto table = accuracy_table_from_csv(
      "culled,thinned,alpha,rho,accuracy\n"
      "S1,none,NA,NA,76.22\n"
      "S4+S1,S3+S2,0.5,1,69.50\n");
  REQUIRE(table.size() == 2);
  CHECK(table.at(candidate_key({.culled = {"S1"}})) == 76.22);
  // label order in the file doesn't matter: keys canonicalize sorted
  ReduceStep s{.culled = {"S1", "S4"}, .thinned = {"S2", "S3"}, .alpha = 0.5};
  CHECK(table.at(candidate_key(s)) == 69.50);
  CHECK_THROWS_AS(accuracy_table_from_csv("S1,none,1,1\n"), config_error);
}

namespace {
// the 15 candidate steps a resnet18 table-mode run visits, with mock accuracies
std::vector<std::pair<std::string, double>> mock_table_rows() {
  std::vector<std::pair<std::string, double>> rows;
  const std::vector<std::vector<std::string>> culls = {
      {"S1"}, {"S1", "S4"}, {"S1", "S4", "S2"}};
  const std::vector<std::vector<std::string>> thins = {
      {"S2", "S3", "S4"}, {"S2", "S3"}, {"S3"}};
  double acc = 80.0;
  for (size_t i = 0; i < culls.size(); ++i) {
    rows.push_back({candidate_key({.culled = culls[i]}), acc});
    acc -= 1.0;
    rows.push_back({candidate_key({.culled = culls[i], .thinned = thins[i]}), acc});
    acc -= 1.0;
    for (auto [a, r] : std::vector<std::pair<double, double>>{{0.5, 1.0}, {1.0, 0.5}, {0.5, 0.5}}) {
      rows.push_back({candidate_key({.culled = culls[i], .thinned = thins[i],
                                     .alpha = a, .rho = r}),
                      acc});
      acc -= 1.0;
    }
  }
  return rows;
}
}  // namespace

TEST_CASE("table-driven run emits the full compounding grid") {
  PipelineConfig cfg;
  cfg.arch = {.family = "resnet18", .input = 32, .classes = 100};
  PipelineInputs in;
  in.measurements = measurements_from_csv(data_file("criticality_resnet18_cifar100.csv"));
  for (const auto& [k, v] : mock_table_rows()) in.accuracy_table[k] = v;

  auto res = run_deepreduce(cfg, in);
  CHECK(res.teacher_accuracy == -1.0);  // nothing trained
  CHECK(res.candidate_training.empty());
  REQUIRE(res.candidates.size() == 15);
  CHECK(res.criticality.order ==
        std::vector<std::string>{"S1", "S4", "S2", "S3"});

  const long long expect1[] = {229376, 114688, 57344, 28672, 14336};
  const long long expect2[] = {196608, 98304, 49152, 24576, 12288};
  const long long expect3[] = {65536, 32768, 16384, 8192, 4096};
  for (int j = 0; j < 5; ++j) {
    CHECK(res.candidates[j].relu_count == expect1[j]);
    CHECK(res.candidates[5 + j].relu_count == expect2[j]);
    CHECK(res.candidates[10 + j].relu_count == expect3[j]);
  }
  for (int it = 0; it < 3; ++it)
    for (int j = 0; j + 1 < 5; ++j)
      CHECK(res.candidates[5 * it + j].relu_count >
            res.candidates[5 * it + j + 1].relu_count);
  for (int j = 0; j < 5; ++j) {  // culling compounds
    CHECK(res.candidates[5 + j].relu_count <= res.candidates[j].relu_count);
    CHECK(res.candidates[10 + j].relu_count <= res.candidates[5 + j].relu_count);
  }
  for (const auto& p : res.candidates) {
    // the most critical stage is never culled, always eligible for thinning
    for (const auto& s : p.step.culled) CHECK(s != "S3");
    if (!p.step.thinned.empty())
      CHECK(std::find(p.step.thinned.begin(), p.step.thinned.end(), "S3") !=
            p.step.thinned.end());
    CHECK(near(p.acc_per_kilorelu,
               p.accuracy / (static_cast<double>(p.relu_count) / 1000.0), 1e-6));
    CHECK(p.latency_est ==
          estimate_latency(res.latency, static_cast<double>(p.relu_count) / 1000.0));
  }

  SUBCASE("reruns are byte-identical") {
    auto again = run_deepreduce(cfg, in);
    CHECK(pareto_csv(again.candidates) == pareto_csv(res.candidates));
    CHECK(pareto_csv(again.pareto) == pareto_csv(res.pareto));
  }
  SUBCASE("a missing accuracy row is a config error") {
    auto in2 = in;
    in2.accuracy_table.erase(candidate_key({.culled = {"S1", "S4"}}));
    CHECK_THROWS_AS(run_deepreduce(cfg, in2), config_error);
  }
  SUBCASE("bad ladders and parities are rejected up front") {
    auto bad = cfg;
    bad.ladder = {{0.0, 0.5}};
    CHECK_THROWS_AS(run_deepreduce(bad, in), config_error);
    auto odd = cfg;
    odd.parity = "bogus";
    CHECK_THROWS_AS(run_deepreduce(odd, in), config_error);
  }
  SUBCASE("cull override replaces the ranked walk") {
    auto ov = cfg;
    ov.cull_override = {"S4"};
    auto in2 = in;
    in2.accuracy_table.clear();
    in2.accuracy_table[candidate_key({.culled = {"S4"}})] = 70.0;
    in2.accuracy_table[candidate_key({.culled = {"S4"}, .thinned = {"S1", "S2", "S3"}})] = 69.0;
    for (auto [a, r] :
         std::vector<std::pair<double, double>>{{0.5, 1.0}, {1.0, 0.5}, {0.5, 0.5}})
      in2.accuracy_table[candidate_key(
          {.culled = {"S4"}, .thinned = {"S1", "S2", "S3"}, .alpha = a, .rho = r})] = 68.0;
    auto r2 = run_deepreduce(ov, in2);
    REQUIRE(r2.candidates.size() == 5);
    CHECK(r2.candidates[0].step.culled == std::vector<std::string>{"S4"});
    // culled S4: 557056 - 65536 (stem) - 32768
    CHECK(r2.candidates[0].relu_count == 458752);

    ov.cull_override = {"S3"};  // the most critical stage
    CHECK_THROWS_AS(run_deepreduce(ov, in2), config_error);
    ov.cull_override = {"S4", "S4"};
    CHECK_THROWS_AS(run_deepreduce(ov, in2), config_error);
    ov.cull_override = {"S9"};
    CHECK_THROWS_AS(run_deepreduce(ov, in2), config_error);
  }
}

TEST_CASE("desk-scale end-to-end run trains teacher, probes and candidates") {
  PipelineConfig cfg;
  cfg.arch = {.family = "resnet10", .input = 8, .classes = 4, .alpha = 0.25};
  cfg.train = {.lr0 = 0.05, .batch_size = 32, .epochs = 2,
               .schedule = "cosine", .seed = 11};
  PipelineInputs in;
  in.data = ingest_dataset({.source = "synthetic-blobs", .classes = 4, .resolution = 8,
                            .train_samples = 96, .test_samples = 32, .seed = 5});

  auto res = run_deepreduce(cfg, in);
  CHECK(res.teacher_accuracy >= 0.0);
  REQUIRE(res.measurements.size() == 4);
  for (const auto& m : res.measurements) {
    CHECK(m.relu_kilo > 0.0);
    CHECK(m.acc_with_kd >= 0.0);
    CHECK(m.acc_with_kd <= 100.0);
  }
  REQUIRE(res.candidates.size() == 15);
  REQUIRE(res.candidate_training.size() == 15);
  for (const auto& tr : res.candidate_training) {
    REQUIRE(!tr.history.empty());
    CHECK(std::isfinite(tr.history.back().train_loss));
  }
  CHECK(!res.pareto.empty());
  // every pareto point is one of the candidates
  for (const auto& p : res.pareto) {
    bool found = false;
    for (const auto& c : res.candidates)
      if (candidate_key(c.step) == candidate_key(p.step) &&
          c.relu_count == p.relu_count && c.accuracy == p.accuracy)
        found = true;
    CHECK(found);
  }

  auto again = run_deepreduce(cfg, in);
  CHECK(pareto_csv(again.candidates) == pareto_csv(res.candidates));
  CHECK(again.teacher_accuracy == res.teacher_accuracy);
}

TEST_CASE("training without a dataset is rejected") {
  PipelineConfig cfg;
  cfg.arch = {.family = "resnet18", .input = 32, .classes = 100};
  PipelineInputs in;  // no data, no tables
  CHECK_THROWS_AS(run_deepreduce(cfg, in), config_error);
}
