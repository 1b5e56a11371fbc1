// Command-line surface: synthetic data generation, single training runs,
// checkpoint evaluation, mask/augmentation dumps, the full experiment grid,
// and report re-aggregation from existing per-repeat CSVs.

#include <CLI11.hpp>
#include <advaug/experiment.hpp>
#include <iostream>

using namespace advaug;
namespace fs = std::filesystem;

namespace {

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return parse_config(path);
}

int cmd_synth_data(const std::string& out, std::size_t n, std::size_t size,
                   std::uint64_t seed, double ambiguity) {
  auto samples = synth_generate<float>(n, size, seed, ambiguity);
  synth_write(out, samples);
  std::cout << "wrote " << samples.size() << " images under " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out,
              const std::string& arm, std::uint64_t seed, bool seed_set,
              const std::string& dataset) {
  RunConfig cfg = load_config(config_path);
  if (seed_set) cfg.seed = seed;

  std::vector<Sample<float>> samples;
  if (dataset.empty())
    samples = synth_generate<float>((cfg.n_train + cfg.n_val) / 6, cfg.image_size,
                                    cfg.data_seed, cfg.ambiguity);
  else
    samples = load_dataset<float>(dataset, cfg.image_size);
  auto split = make_splits(samples, cfg.n_train, cfg.n_val, cfg.data_seed,
                           mix_seed(cfg.data_seed, cfg.seed));

  auto tc = to_train_config<float>(cfg, arm, cfg.seed);
  Trainer<float> trainer(tc, split);
  auto result = trainer.train();

  fs::create_directories(out);
  std::ostringstream metrics;
  write_metrics_csv(metrics, result);
  write_text_atomic(out + "/metrics.csv", metrics.str());
  std::vector<ArrayRecord> records;
  append_network_records<float>(records, "gen", trainer.generator());
  append_network_records<float>(records, "disc", trainer.discriminator());
  append_network_records<float>(records, "cls", trainer.classifier());
  append_network_records<float>(records, "assistant", trainer.assistant().net);
  checkpoint_save(out + "/checkpoint.aaf", records);
  write_text_atomic(out + "/config.echo", config_echo(cfg));

  if (result.divergence_flag) {
    std::cerr << "error: training diverged (non-finite loss)\n";
    return 1;
  }
  std::cout << "best_val_acc " << std::fixed << std::setprecision(3)
            << double(result.best_val_acc) << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& dataset) {
  RunConfig cfg = load_config(config_path);
  auto samples = load_dataset<float>(dataset, cfg.image_size);
  Classifier<float> cls(cfg.image_size, 0, cfg.cls_base);
  load_network_records<float>(checkpoint_load(checkpoint), "cls", cls);

  std::size_t correct = 0;
  const std::size_t chunk = 32;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, samples.size() - start);
    Tensor<float> x = Tensor<float>::zeros({n, 3, cfg.image_size, cfg.image_size});
    const std::size_t img = 3 * cfg.image_size * cfg.image_size;
    for (std::size_t i = 0; i < n; ++i)
      std::copy(samples[start + i].image.data().begin(),
                samples[start + i].image.data().end(), x.data().begin() + i * img);
    auto probs = cls.forward(x, ForwardCtx<float>{nullptr, false, false});
    for (std::size_t i = 0; i < n; ++i)
      if ((probs[i] >= 0.5f) == (samples[start + i].label > 0.5f)) ++correct;
  }
  std::cout << std::fixed << std::setprecision(3)
            << double(correct) / double(samples.size()) << "\n";
  return 0;
}

int cmd_augment(const std::string& config_path, const std::string& checkpoint,
                const std::string& dataset, const std::string& out) {
  RunConfig cfg = load_config(config_path);
  Generator<float> gen(cfg.image_size, mix_seed(cfg.seed, 10), cfg.gen_base,
                       cfg.use_batchnorm);
  if (!checkpoint.empty())
    load_network_records<float>(checkpoint_load(checkpoint), "gen", gen);

  auto samples = load_dataset<float>(dataset, cfg.image_size);
  std::size_t written = 0;
  std::map<std::string, std::size_t> counter;
  for (const auto& s : samples) {
    // single-image batch; batch statistics, frozen running stats
    Tensor<float> x = Tensor<float>::zeros({1, 3, cfg.image_size, cfg.image_size});
    std::copy(s.image.data().begin(), s.image.data().end(), x.data().begin());
    auto result = gen.forward(x, ForwardCtx<float>{nullptr, true, false});

    const std::size_t hw = cfg.image_size * cfg.image_size;
    Tensor<float> gen_img = Tensor<float>::zeros({3, cfg.image_size, cfg.image_size});
    Tensor<float> mask_img = Tensor<float>::zeros({3, cfg.image_size, cfg.image_size});
    for (std::size_t i = 0; i < 3 * hw; ++i) {
      gen_img[i] = std::clamp(result.generated[i], 0.0f, 1.0f);
      mask_img[i] = std::clamp(result.mask[i], 0.0f, 1.0f);  // mask in (0,2), clipped
    }
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05zu", s.subclass.c_str(),
                  counter[s.subclass]++);
    fs::create_directories(fs::path(out) / s.subclass);
    for (auto [suffix, img] : {std::pair{"_gen.ppm", &gen_img},
                               std::pair{"_mask.ppm", &mask_img}}) {
      std::ofstream os(fs::path(out) / s.subclass / (name + std::string(suffix)),
                       std::ios::binary);
      const std::string bytes = encode_ppm(*img);
      os.write(bytes.data(), std::streamsize(bytes.size()));
    }
    ++written;
  }
  std::cout << "wrote " << written << " generated/mask pairs under " << out << "\n";
  return 0;
}

int cmd_grid(const std::string& config_path, const std::string& out,
             std::uint64_t seed, bool seed_set) {
  RunConfig cfg = load_config(config_path);
  if (seed_set) cfg.seed = seed;
  fs::create_directories(out);
  write_text_atomic(out + "/config.echo", config_echo(cfg));
  auto specs = make_grid_specs(cfg);
  auto report = run_grid(specs, out, [&](const CaseSpec& spec) {
    return run_case<float>(spec, cfg, out);
  });
  std::cout << report.text;
  for (const auto& c : report.cases)
    if (c.failed) {
      std::cerr << "error: case " << c.spec.index << " failed: " << c.error << "\n";
      return 1;
    }
  return 0;
}

int cmd_report(const std::string& config_path, const std::string& out,
               std::uint64_t seed, bool seed_set) {
  RunConfig cfg = load_config(config_path);
  if (seed_set) cfg.seed = seed;
  auto specs = make_grid_specs(cfg);
  auto report = run_grid(specs, out, [&](const CaseSpec& spec) {
    return aggregate_case(out, spec);
  });
  std::cout << report.text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial-augmentation experiment tool"};
  app.require_subcommand(1);

  std::string config_path, out, arm = "augmented", checkpoint, dataset;
  std::uint64_t seed = 0;
  std::size_t n = 80, size = 32;
  double ambiguity = 0.3;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  synth->add_option("--out", out)->required();
  synth->add_option("--n", n, "images per negative subclass (positives get 3n)");
  synth->add_option("--size", size);
  synth->add_option("--seed", seed);
  synth->add_option("--ambiguity", ambiguity);

  auto* train = app.add_subcommand("train", "train one arm of one case");
  train->add_option("--config", config_path);
  train->add_option("--out", out)->required();
  train->add_option("--arm", arm)->check(CLI::IsMember(
      {"baseline", "augmented", "augmented_no_assistant"}));
  auto* train_seed = train->add_option("--seed", seed);
  train->add_option("--dataset", dataset);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--config", config_path);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--dataset", dataset)->required();

  auto* augment = app.add_subcommand("augment", "dump masks and generated images");
  augment->add_option("--config", config_path);
  augment->add_option("--checkpoint", checkpoint,
                      "optional; a fresh generator is the identity map");
  augment->add_option("--dataset", dataset)->required();
  augment->add_option("--out", out)->required();

  auto* grid = app.add_subcommand("grid", "run the full experiment grid");
  grid->add_option("--config", config_path);
  grid->add_option("--out", out)->required();
  auto* grid_seed = grid->add_option("--seed", seed);

  auto* report = app.add_subcommand("report", "re-aggregate existing run output");
  report->add_option("--config", config_path);
  report->add_option("--out", out)->required();
  auto* report_seed = report->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth_data(out, n, size, seed, ambiguity);
    if (train->parsed())
      return cmd_train(config_path, out, arm, seed, train_seed->count() > 0, dataset);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint, dataset);
    if (augment->parsed()) return cmd_augment(config_path, checkpoint, dataset, out);
    if (grid->parsed())
      return cmd_grid(config_path, out, seed, grid_seed->count() > 0);
    if (report->parsed())
      return cmd_report(config_path, out, seed, report_seed->count() > 0);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
