#pragma once

// The experiment grid: cases (image size x training-set size), arms
// (baseline / augmented / augmented without assistant), paired repeats, and
// aggregation into the two report tables. Aggregates are recomputed from the
// per-repeat metrics CSVs on disk, so `report` regenerates identical bytes.

#include <atomic>
#include <cstdlib>
#include <thread>

#include "advaug/config.hpp"

namespace advaug {

struct CaseSpec {
  std::size_t index = 1;  // 1-based case number
  std::size_t image_size = 32;
  std::size_t n_train = 120;
  std::size_t n_val = 240;
  std::size_t repeats = 10;
  std::size_t iterations = 1000;
  std::vector<std::string> arms;
  std::uint64_t base_seed = 1;
};

struct ArmStats {
  std::vector<double> best_accs_pct;  // non-diverged repeats only
  std::size_t diverged = 0;

  double mean() const {
    if (best_accs_pct.empty()) return 0.0;
    double s = 0;
    for (double v : best_accs_pct) s += v;
    return s / double(best_accs_pct.size());
  }
  // population standard deviation (stated in the report header)
  double std_pop() const {
    if (best_accs_pct.empty()) return 0.0;
    const double m = mean();
    double s = 0;
    for (double v : best_accs_pct) s += (v - m) * (v - m);
    return std::sqrt(s / double(best_accs_pct.size()));
  }
};

struct CaseResult {
  CaseSpec spec;
  std::map<std::string, ArmStats> arms;
  bool failed = false;
  std::string error;

  bool has(const std::string& arm) const { return arms.count(arm) > 0; }
};

// Difference in percentage points, rounded to 3 decimals.
inline double diff_metric(double baseline_mean_pct, double augmented_mean_pct) {
  return std::round((augmented_mean_pct - baseline_mean_pct) * 1000.0) / 1000.0;
}

inline std::vector<CaseSpec> make_grid_specs(const RunConfig& cfg) {
  std::vector<CaseSpec> specs;
  std::size_t index = 1;
  for (std::size_t size : cfg.grid_sizes)
    for (std::size_t n_train : cfg.grid_train_samples) {
      CaseSpec s;
      s.index = index++;
      s.image_size = size;
      s.n_train = n_train;
      s.n_val = cfg.n_val;
      s.repeats = cfg.repeats;
      s.iterations = cfg.iterations;
      s.arms = cfg.arms;
      s.base_seed = mix_seed(cfg.seed, 7000 + s.index);
      specs.push_back(std::move(s));
    }
  return specs;
}

inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    os << text;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("cannot move into place: " + path);
}

namespace detail {

inline std::size_t advaug_threads() {
  const char* env = std::getenv("ADVAUG_THREADS");
  if (!env) return 1;
  long v = std::atol(env);
  return v < 1 ? 1 : std::size_t(v);
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (const std::exception& e) {
        errors[t] = e.what();
      }
    });
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);
}

// Reads one metrics.csv back: final best accuracy (fraction) and divergence.
inline std::pair<double, bool> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("missing metrics file: " + path);
  std::string line, last;
  std::getline(is, line);  // header
  bool diverged = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.find("nan") != std::string::npos ||
        line.find("inf") != std::string::npos)
      diverged = true;
    last = line;
  }
  if (last.empty()) throw Error("empty metrics file: " + path);
  // best_val_acc is column 7 of 8
  std::vector<std::string> cols;
  std::stringstream ss(last);
  std::string c;
  while (std::getline(ss, c, ',')) cols.push_back(c);
  while (cols.size() < 8) cols.push_back("");
  return {std::stod(cols[6]), diverged};
}

}  // namespace detail

inline std::string case_dir(const std::string& out, const CaseSpec& spec) {
  return out + "/case_" + std::to_string(spec.index);
}

// Pure disk aggregation over <out>/case_<i>/<arm>/repeat_<r>/metrics.csv.
inline CaseResult aggregate_case(const std::string& out, const CaseSpec& spec) {
  CaseResult result;
  result.spec = spec;
  for (const std::string& arm : spec.arms) {
    ArmStats stats;
    for (std::size_t r = 0; r < spec.repeats; ++r) {
      const std::string path = case_dir(out, spec) + "/" + arm + "/repeat_" +
                               std::to_string(r) + "/metrics.csv";
      auto [best, diverged] = detail::read_metrics(path);
      if (diverged) ++stats.diverged;
      else stats.best_accs_pct.push_back(best * 100.0);
    }
    if (stats.best_accs_pct.empty()) {
      result.failed = true;
      result.error = "all repeats diverged for arm " + arm;
    }
    result.arms[arm] = std::move(stats);
  }
  return result;
}

// Runs every (repeat, arm) pair of one case, paired: all arms of repeat r see
// the same split and the same network seed. Writes metrics and checkpoints,
// then aggregates from the files just written.
template <class T>
CaseResult run_case(const CaseSpec& spec, const RunConfig& cfg,
                    const std::string& out) {
  namespace fs = std::filesystem;
  const std::size_t need_per_sub = (spec.n_train + spec.n_val) / 6;
  const std::uint64_t case_seed = mix_seed(cfg.data_seed, 100 + spec.index);
  auto samples = synth_generate<T>(need_per_sub, spec.image_size, case_seed,
                                   cfg.ambiguity);

  detail::parallel_for(spec.repeats, detail::advaug_threads(), [&](std::size_t r) {
    const std::uint64_t repeat_seed = spec.base_seed + r;
    const std::uint64_t val_seed =
        cfg.fixed_validation ? case_seed : mix_seed(case_seed, 30 + r);
    const std::uint64_t train_seed =
        cfg.resplit_train_per_repeat ? mix_seed(case_seed, 60 + r) : case_seed;
    auto split = make_splits(samples, spec.n_train, spec.n_val, val_seed, train_seed);
    for (const std::string& arm : spec.arms) {
      RunConfig arm_cfg = cfg;
      arm_cfg.image_size = spec.image_size;
      arm_cfg.iterations = spec.iterations;
      auto tc = to_train_config<T>(arm_cfg, arm, repeat_seed);
      Trainer<T> trainer(tc, split);
      auto result = trainer.train();

      const std::string dir =
          case_dir(out, spec) + "/" + arm + "/repeat_" + std::to_string(r);
      fs::create_directories(dir);
      std::ostringstream metrics;
      write_metrics_csv(metrics, result);
      write_text_atomic(dir + "/metrics.csv", metrics.str());

      std::vector<ArrayRecord> records;
      append_network_records<T>(records, "gen", trainer.generator());
      append_network_records<T>(records, "disc", trainer.discriminator());
      append_network_records<T>(records, "cls", trainer.classifier());
      append_network_records<T>(records, "assistant", trainer.assistant().net);
      checkpoint_save(dir + "/checkpoint.aaf", records);
    }
  });
  return aggregate_case(out, spec);
}

struct GridReport {
  std::vector<CaseResult> cases;
  std::string table1_csv;
  std::string table2_csv;
  std::string text;
};

// Table construction from CaseResults; `runner` is injectable so aggregation
// logic can be exercised with stubbed accuracy numbers.
inline GridReport build_grid_report(const std::vector<CaseResult>& cases) {
  GridReport report;
  report.cases = cases;
  char buf[256];

  std::string t2 = "case,image_size,train_samples,original_mean,original_std,"
                   "augmented_mean,augmented_std,difference\n";
  std::vector<double> diffs;
  for (const CaseResult& c : cases) {
    std::string row = std::to_string(c.spec.index) + "," +
                      std::to_string(c.spec.image_size) + "," +
                      std::to_string(c.spec.n_train) + ",";
    if (c.failed) {
      row += ",,,,failed";
    } else {
      const bool has_b = c.has("baseline"), has_a = c.has("augmented");
      if (has_b) {
        const ArmStats& b = c.arms.at("baseline");
        std::snprintf(buf, sizeof(buf), "%.2f,%.3f,", b.mean(), b.std_pop());
        row += buf;
      } else {
        row += ",,";
      }
      if (has_a) {
        const ArmStats& a = c.arms.at("augmented");
        std::snprintf(buf, sizeof(buf), "%.2f,%.3f,", a.mean(), a.std_pop());
        row += buf;
      } else {
        row += ",,";
      }
      if (has_b && has_a) {
        const double d =
            diff_metric(c.arms.at("baseline").mean(), c.arms.at("augmented").mean());
        diffs.push_back(d);
        std::snprintf(buf, sizeof(buf), "%.3f", d);
        row += buf;
      }
    }
    t2 += row + "\n";
  }
  if (!diffs.empty()) {
    double avg = 0;
    for (double d : diffs) avg += d;
    avg = std::round(avg / double(diffs.size()) * 1000.0) / 1000.0;
    std::snprintf(buf, sizeof(buf), "average,,,,,,,%.3f\n", avg);
    t2 += buf;
  }
  report.table2_csv = t2;

  std::string t1 = "case,image_size,train_samples,arm,mean,std,diverged\n";
  for (const CaseResult& c : cases)
    for (const std::string& arm : c.spec.arms) {
      if (!c.has(arm)) continue;
      const ArmStats& s = c.arms.at(arm);
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%s,%.2f,%.3f,%zu\n",
                    c.spec.index, c.spec.image_size, c.spec.n_train, arm.c_str(),
                    s.mean(), s.std_pop(), s.diverged);
      t1 += buf;
    }
  report.table1_csv = t1;

  // aligned plain-text echo
  std::ostringstream text;
  text << "accuracy means in %, 2 decimals; population std, 3 decimals\n\n";
  text << "case  size  train  arm                      mean      std  diverged\n";
  for (const CaseResult& c : cases) {
    if (c.failed) {
      text << "case " << c.spec.index << " FAILED: " << c.error << "\n";
      continue;
    }
    for (const std::string& arm : c.spec.arms) {
      if (!c.has(arm)) continue;
      const ArmStats& s = c.arms.at(arm);
      std::snprintf(buf, sizeof(buf), "%4zu  %4zu  %5zu  %-22s %7.2f  %7.3f  %8zu\n",
                    c.spec.index, c.spec.image_size, c.spec.n_train, arm.c_str(),
                    s.mean(), s.std_pop(), s.diverged);
      text << buf;
    }
    if (c.has("baseline") && c.has("augmented")) {
      std::snprintf(buf, sizeof(buf), "      difference (augmented - baseline): %.3f\n",
                    diff_metric(c.arms.at("baseline").mean(),
                                c.arms.at("augmented").mean()));
      text << buf;
    }
  }
  report.text = text.str();
  return report;
}

using CaseRunner = std::function<CaseResult(const CaseSpec&)>;

inline GridReport run_grid(const std::vector<CaseSpec>& specs,
                           const std::string& out, const CaseRunner& runner) {
  std::vector<CaseResult> results;
  for (const CaseSpec& spec : specs) {
    try {
      results.push_back(runner(spec));
    } catch (const std::exception& e) {
      CaseResult failed;
      failed.spec = spec;
      failed.failed = true;
      failed.error = e.what();
      results.push_back(std::move(failed));
    }
  }
  GridReport report = build_grid_report(results);
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_text_atomic(out + "/table1.csv", report.table1_csv);
    write_text_atomic(out + "/table2.csv", report.table2_csv);
  }
  return report;
}

}  // namespace advaug
