#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <advaug/experiment.hpp>

using namespace advaug;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

CaseResult stub_case(std::size_t index, std::size_t size, std::size_t n_train,
                     double base_mean, double aug_mean) {
  CaseResult r;
  r.spec.index = index;
  r.spec.image_size = size;
  r.spec.n_train = n_train;
  r.spec.arms = {"baseline", "augmented"};
  r.arms["baseline"].best_accs_pct = {base_mean};
  r.arms["augmented"].best_accs_pct = {aug_mean};
  return r;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("empty file gives defaults") {
    std::istringstream is("");
    auto cfg = parse_config_stream(is);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.eval_interval == 20);
    CHECK(cfg.repeats == 10);
    CHECK(cfg.arms.size() == 3);
  }
  SUBCASE("values, comments and lists") {
    std::istringstream is(
        "# experiment setup\n"
        "batch_size = 32\n"
        "iterations = 50   # short run\n"
        "grid_sizes = 32,64\n"
        "arms = baseline, augmented\n"
        "ambiguity = 0.4\n"
        "literal_adv_sign = true\n");
    auto cfg = parse_config_stream(is);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.iterations == 50);
    CHECK(cfg.grid_sizes == std::vector<std::size_t>{32, 64});
    CHECK(cfg.arms == std::vector<std::string>{"baseline", "augmented"});
    CHECK(cfg.ambiguity == 0.4);
    CHECK(cfg.literal_adv_sign);
  }
  SUBCASE("unknown key names the line") {
    std::istringstream is("batch_size = 32\nbatch_sized = 16\n");
    CHECK_THROWS_WITH_AS(parse_config_stream(is), doctest::Contains("line 2"),
                         Error);
  }
  SUBCASE("malformed line") {
    std::istringstream is("just words\n");
    CHECK_THROWS_WITH_AS(parse_config_stream(is), doctest::Contains("line 1"),
                         Error);
  }
  SUBCASE("image_size 48 lists the allowed sizes") {
    std::istringstream is("image_size = 48\n");
    CHECK_THROWS_WITH_AS(parse_config_stream(is),
                         doctest::Contains("{32,64,128}"), Error);
  }
  SUBCASE("bad value reports the line") {
    std::istringstream is("iterations = soon\n");
    CHECK_THROWS_WITH_AS(parse_config_stream(is), doctest::Contains("line 1"),
                         Error);
  }
  SUBCASE("echo round trips") {
    std::istringstream is("iterations = 123\nambiguity = 0.25\n");
    auto cfg = parse_config_stream(is);
    std::istringstream echo1(config_echo(cfg));
    auto cfg2 = parse_config_stream(echo1);
    CHECK(config_echo(cfg2) == config_echo(cfg));
    CHECK(cfg2.iterations == 123);
  }
}

TEST_CASE("diff_metric") {
  CHECK(diff_metric(61.89, 69.06) == doctest::Approx(7.170).epsilon(1e-9));
  CHECK(diff_metric(78.42, 82.71) == doctest::Approx(4.290).epsilon(1e-9));
  CHECK(diff_metric(55.5, 55.5) == 0.0);
}

TEST_CASE("arm statistics") {
  ArmStats s;
  s.best_accs_pct = {70.0, 80.0, 90.0};
  CHECK(s.mean() == doctest::Approx(80.0));
  CHECK(s.std_pop() == doctest::Approx(std::sqrt(200.0 / 3.0)));
  ArmStats one;
  one.best_accs_pct = {73.5};
  CHECK(one.mean() == 73.5);
  CHECK(one.std_pop() == 0.0);
}

TEST_CASE("grid report from stubbed nine-case accuracies") {
  // baselines are arbitrary; augmented means are baseline + target difference
  const double diffs[9] = {4.290, 2.916, 4.570, 3.590, 3.510,
                           6.934, 1.645, 2.221, 7.170};
  const std::size_t sizes[3] = {32, 64, 128};
  const std::size_t trains[3] = {480, 240, 120};
  std::vector<CaseResult> cases;
  for (std::size_t i = 0; i < 9; ++i)
    cases.push_back(stub_case(i + 1, sizes[i / 3], trains[i % 3],
                              70.0 + double(i), 70.0 + double(i) + diffs[i]));
  auto report = build_grid_report(cases);

  std::istringstream is(report.table2_csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "case,image_size,train_samples,original_mean,original_std,"
                "augmented_mean,augmented_std,difference");
  for (std::size_t i = 0; i < 9; ++i) {
    std::getline(is, line);
    char want[32];
    std::snprintf(want, sizeof(want), "%.3f", diffs[i]);
    CHECK(line.substr(line.rfind(',') + 1) == want);
  }
  std::getline(is, line);
  CHECK(line == "average,,,,,,,4.094");
}

TEST_CASE("single-case grid averages to its own difference") {
  auto report = build_grid_report({stub_case(1, 32, 120, 70.0, 73.2)});
  CHECK(report.table2_csv.find("3.200\naverage,,,,,,,3.200\n") != std::string::npos);
}

TEST_CASE("grid continues past a failing case") {
  CaseSpec ok, bad;
  ok.index = 1;
  ok.arms = {"baseline"};
  bad.index = 2;
  bad.arms = {"baseline"};
  auto runner = [&](const CaseSpec& s) -> CaseResult {
    if (s.index == 2) throw Error("synthetic failure");
    return stub_case(1, 32, 120, 70.0, 0.0);
  };
  auto report = run_grid({ok, bad}, "", runner);
  REQUIRE(report.cases.size() == 2);
  CHECK(!report.cases[0].failed);
  CHECK(report.cases[1].failed);
  CHECK(report.cases[1].error == "synthetic failure");
  CHECK(report.table2_csv.find("failed") != std::string::npos);
}

TEST_CASE("run_case writes the output tree and report re-aggregates identically") {
  auto out = fresh_dir("advaug_exp");
  RunConfig cfg;
  cfg.batch_size = 4;
  cfg.gen_base = cfg.disc_base = cfg.cls_base = 4;
  cfg.eval_interval = 1;
  CaseSpec spec;
  spec.index = 1;
  spec.image_size = 32;
  spec.n_train = 12;
  spec.n_val = 12;
  spec.repeats = 2;
  spec.iterations = 2;
  spec.arms = {"baseline", "augmented", "augmented_no_assistant"};
  spec.base_seed = 9;

  auto result = run_case<float>(spec, cfg, out.string());
  REQUIRE(result.arms.size() == 3);
  for (const auto& [arm, stats] : result.arms) {
    CHECK(stats.best_accs_pct.size() == 2);
    CHECK(stats.diverged == 0);
    for (std::size_t r = 0; r < 2; ++r) {
      auto dir = out / "case_1" / arm / ("repeat_" + std::to_string(r));
      CHECK(fs::exists(dir / "metrics.csv"));
      CHECK(fs::exists(dir / "checkpoint.aaf"));
    }
  }

  auto report1 = run_grid({spec}, out.string(),
                          [&](const CaseSpec&) { return result; });
  CHECK(fs::exists(out / "table1.csv"));
  CHECK(fs::exists(out / "table2.csv"));

  // pure-function-of-CSV property: re-aggregation from disk is byte-identical
  auto report2 = run_grid({spec}, "", [&](const CaseSpec& s) {
    return aggregate_case(out.string(), s);
  });
  CHECK(report2.table1_csv == report1.table1_csv);
  CHECK(report2.table2_csv == report1.table2_csv);
  CHECK(report2.text == report1.text);

  // rerunning the whole case is deterministic down to the table bytes
  auto out2 = fresh_dir("advaug_exp2");
  auto result2 = run_case<float>(spec, cfg, out2.string());
  auto report3 = run_grid({spec}, "", [&](const CaseSpec&) { return result2; });
  CHECK(report3.table2_csv == report1.table2_csv);
}

TEST_CASE("divergence detection when reading metrics") {
  auto out = fresh_dir("advaug_exp_div");
  CaseSpec spec;
  spec.index = 1;
  spec.repeats = 1;
  spec.arms = {"baseline"};
  auto dir = out / "case_1" / "baseline" / "repeat_0";
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "metrics.csv");
    os << "iteration,loss_d,loss_g_adv,loss_g_cls,loss_c,val_acc,best_val_acc,snapshot\n";
    os << "1,0,0,0,nan,,0,0\n";
  }
  auto result = aggregate_case(out.string(), spec);
  CHECK(result.failed);
  CHECK(result.arms.at("baseline").diverged == 1);
}

TEST_CASE("paired repeats share split membership across arms") {
  // the same (val_seed, train_seed) pair must give identical membership
  auto samples = synth_generate<float>(4, 32, 123, 0.3);
  auto a = make_splits(samples, 12, 12, 5, 99);
  auto b = make_splits(samples, 12, 12, 5, 99);
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK(a.train[i].seed == b.train[i].seed);
  // different train seed redraws train but keeps validation fixed
  auto c = make_splits(samples, 12, 12, 5, 100);
  for (std::size_t i = 0; i < a.validation.size(); ++i)
    CHECK(a.validation[i].seed == c.validation[i].seed);
}
