#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <advaug/dataset.hpp>
#include <filesystem>
#include <fstream>

using namespace advaug;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Reference 3-nearest-neighbor pixel classifier, double precision.
double knn3_accuracy(const std::vector<Sample<double>>& train,
                     const std::vector<Sample<double>>& test) {
  std::size_t correct = 0;
  for (const auto& q : test) {
    std::vector<std::pair<double, double>> dist;  // (d2, label)
    for (const auto& t : train) {
      double d2 = 0;
      for (std::size_t i = 0; i < q.image.size(); ++i) {
        double d = q.image[i] - t.image[i];
        d2 += d * d;
      }
      dist.emplace_back(d2, t.label);
    }
    std::partial_sort(dist.begin(), dist.begin() + 3, dist.end());
    double votes = dist[0].second + dist[1].second + dist[2].second;
    if ((votes >= 2.0) == (q.label > 0.5)) ++correct;
  }
  return double(correct) / double(test.size());
}

}  // namespace

TEST_CASE("ppm codec") {
  SUBCASE("1x1 white pixel") {
    std::string bytes = "P6\n1 1\n255\n\xff\xff\xff";
    auto t = decode_ppm<float>(bytes);
    CHECK(t.shape() == Shape{3, 1, 1});
    for (float v : t.data()) CHECK(v == 1.0f);
  }
  SUBCASE("encode of zeros") {
    auto bytes = encode_ppm(Tensor<float>::zeros({3, 2, 2}));
    CHECK(bytes.substr(0, 11) == "P6\n2 2\n255\n");
    for (std::size_t i = 11; i < bytes.size(); ++i) CHECK(bytes[i] == 0);
  }
  SUBCASE("round trip quantization bound") {
    auto t = Tensor<double>::randn({3, 8, 8}, 0.5, 0.3, 77);
    for (double& v : t.data()) v = std::clamp(v, 0.0, 1.0);
    auto back = decode_ppm<double>(encode_ppm(t));
    double worst = 0;
    for (std::size_t i = 0; i < t.size(); ++i)
      worst = std::max(worst, std::abs(back[i] - t[i]));
    CHECK(worst <= 1.0 / 255.0);
  }
  SUBCASE("comment in header is skipped") {
    std::string bytes = "P6\n# made by hand\n1 1\n255\n";
    bytes += '\x00';
    bytes += '\x80';
    bytes += '\xff';
    auto t = decode_ppm<float>(bytes);
    CHECK(t[0] == 0.0f);
    CHECK(t[2] == 1.0f);
  }
  SUBCASE("errors") {
    CHECK_THROWS_WITH_AS(decode_ppm<float>("P5\n1 1\n255\nx"),
                         doctest::Contains("P6"), Error);
    CHECK_THROWS_WITH_AS(decode_ppm<float>("P6\n2 2\n255\nxx"),
                         doctest::Contains("truncated"), Error);
    CHECK_THROWS_WITH_AS(decode_ppm<float>("P6\n1 1\n65535\nxxxxxx"),
                         doctest::Contains("maxval"), Error);
    CHECK_THROWS_AS(encode_ppm(Tensor<float>::zeros({1, 2, 2})), Error);
  }
}

TEST_CASE("synthetic generation is deterministic") {
  auto a = synth_generate<float>(2, 32, 9001, 0.25);
  auto b = synth_generate<float>(2, 32, 9001, 0.25);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.data() == b[i].image.data());
    CHECK(a[i].seed == b[i].seed);
  }
  auto c = synth_generate<float>(2, 32, 9002, 0.25);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].image.data() != c[i].image.data()) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("synthetic counts, balance and bounds") {
  auto s = synth_generate<float>(5, 32, 3, 0.0);
  CHECK(s.size() == 30);  // 15 positives + 5 per negative subclass
  std::map<std::string, int> per;
  int pos = 0;
  for (const auto& x : s) {
    per[x.subclass]++;
    if (x.label == 1.0f) pos++;
    CHECK((x.label == 1.0f) == (x.subclass == "excavator"));
    for (float v : x.image.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK(pos == 15);
  CHECK(per["excavator"] == 15);
  CHECK(per["dump_truck"] == 5);
  CHECK(per["mixer"] == 5);
  CHECK(per["dozer"] == 5);

  CHECK_THROWS_AS(synth_generate<float>(1, 8, 1, 0.0), Error);
  CHECK_THROWS_AS(synth_sample<float>(32, 1, 0, 1.5), Error);
}

TEST_CASE("synthetic write then load round trip") {
  auto dir = fresh_dir("advaug_ds_rt");
  auto samples = synth_generate<float>(2, 32, 41, 0.1);
  synth_write(dir.string(), samples);
  CHECK(fs::exists(dir / "manifest.csv"));

  auto loaded = load_dataset<float>(dir.string(), 32);
  CHECK(loaded.size() == samples.size());
  // lexicographic per-directory order matches emission order within subclass
  std::map<std::string, int> pos;
  double worst = 0;
  std::map<std::string, std::vector<const Sample<float>*>> by_sub;
  for (const auto& s : samples) by_sub[s.subclass].push_back(&s);
  std::map<std::string, std::size_t> cursor;
  for (const auto& l : loaded) {
    const Sample<float>* orig = by_sub[l.subclass][cursor[l.subclass]++];
    CHECK(l.label == orig->label);
    for (std::size_t i = 0; i < l.image.size(); ++i)
      worst = std::max(worst, std::abs(double(l.image[i] - orig->image[i])));
  }
  CHECK(worst <= 1.0 / 255.0);

  auto again = load_dataset<float>(dir.string(), 32);
  for (std::size_t i = 0; i < loaded.size(); ++i)
    CHECK(loaded[i].image.data() == again[i].image.data());

  // manifest has a header plus one row per sample
  std::ifstream mf(dir / "manifest.csv");
  std::string line;
  std::getline(mf, line);
  CHECK(line == "path,subclass,label,seed");
  std::size_t rows = 0;
  while (std::getline(mf, line))
    if (!line.empty()) ++rows;
  CHECK(rows == samples.size());
}

TEST_CASE("load_dataset errors") {
  auto dir = fresh_dir("advaug_ds_err");
  CHECK_THROWS_WITH_AS(load_dataset<float>(dir.string(), 32),
                       doctest::Contains("excavator"), Error);

  fs::create_directories(dir / "excavator");
  CHECK_THROWS_WITH_AS(load_dataset<float>(dir.string(), 32),
                       doctest::Contains("negative"), Error);

  fs::create_directories(dir / "dozer");
  CHECK_THROWS_WITH_AS(load_dataset<float>(dir.string(), 32),
                       doctest::Contains("empty"), Error);

  auto img = synth_sample<float>(32, 5, 0, 0.0);
  {
    std::ofstream os(dir / "excavator" / "a.ppm", std::ios::binary);
    os << encode_ppm(img.image);
    std::ofstream os2(dir / "dozer" / "b.ppm", std::ios::binary);
    os2 << encode_ppm(img.image);
  }
  CHECK(load_dataset<float>(dir.string(), 32).size() == 2);
  // wrong expected size reports the offending path
  CHECK_THROWS_WITH_AS(load_dataset<float>(dir.string(), 64),
                       doctest::Contains("a.ppm"), Error);
}

TEST_CASE("partial dataset with two subclasses") {
  auto dir = fresh_dir("advaug_ds_two");
  auto samples = synth_generate<float>(2, 32, 55, 0.0);
  for (const auto& s : samples) {
    if (s.subclass != "excavator" && s.subclass != "dozer") continue;
  }
  fs::create_directories(dir / "excavator");
  fs::create_directories(dir / "dozer");
  int ne = 0, nd = 0;
  for (const auto& s : samples) {
    if (s.subclass == "excavator" && ne < 2) {
      std::ofstream os(dir / "excavator" / ("e" + std::to_string(ne++) + ".ppm"),
                       std::ios::binary);
      os << encode_ppm(s.image);
    }
    if (s.subclass == "dozer" && nd < 2) {
      std::ofstream os(dir / "dozer" / ("d" + std::to_string(nd++) + ".ppm"),
                       std::ios::binary);
      os << encode_ppm(s.image);
    }
  }
  auto loaded = load_dataset<float>(dir.string(), 32);
  REQUIRE(loaded.size() == 4);
  std::vector<float> labels;
  for (const auto& s : loaded) labels.push_back(s.label);
  CHECK(labels == std::vector<float>{1, 1, 0, 0});
}

TEST_CASE("make_splits balance and determinism") {
  auto samples = synth_generate<float>(90, 32, 7, 0.2);  // 270 pos, 90 per neg

  auto check_balance = [](const std::vector<Sample<float>>& part, std::size_t n) {
    std::map<std::string, std::size_t> per;
    for (const auto& s : part) per[s.subclass]++;
    CHECK(per["excavator"] == n / 2);
    CHECK(per["dump_truck"] == n / 6);
    CHECK(per["mixer"] == n / 6);
    CHECK(per["dozer"] == n / 6);
  };

  for (std::size_t n_train : {std::size_t(120), std::size_t(480)}) {
    if (n_train == 480) continue;  // pool too small for 480+240; covered below
    auto split = make_splits(samples, n_train, 240, 99);
    CHECK(split.train.size() == n_train);
    CHECK(split.validation.size() == 240);
    check_balance(split.train, n_train);
    check_balance(split.validation, 240);
    // disjoint: synthetic per-image seeds are unique identifiers
    std::set<std::uint64_t> train_seeds;
    for (const auto& s : split.train) train_seeds.insert(s.seed);
    for (const auto& s : split.validation)
      CHECK(train_seeds.count(s.seed) == 0);
  }

  auto big = synth_generate<float>(130, 32, 7, 0.2);
  auto s480 = make_splits(big, 480, 240, 99);
  check_balance(s480.train, 480);

  auto a = make_splits(samples, 120, 240, 5);
  auto b = make_splits(samples, 120, 240, 5);
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK(a.train[i].seed == b.train[i].seed);

  CHECK_THROWS_WITH_AS(make_splits(samples, 600, 240, 1),
                       doctest::Contains("needs"), Error);
  CHECK_THROWS_AS(make_splits(samples, 100, 240, 1), Error);  // not /6
}

TEST_CASE("next_batch balance") {
  auto samples = synth_generate<float>(10, 32, 13, 0.2);
  auto split = make_splits(samples, 24, 24, 3);
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 5; ++rep) {
    auto b = next_batch(split, 32, rng);
    CHECK(b.x.shape() == Shape{32, 3, 32, 32});
    CHECK(b.y.shape() == Shape{32});
    float mean = 0;
    for (float v : b.y.data()) mean += v;
    CHECK(mean / 32 == 0.5f);  // exactly half positive
  }
  CHECK_THROWS_AS(next_batch(split, 31, rng), Error);

  // deterministic given identical rng state
  std::mt19937_64 r1(9), r2(9);
  auto b1 = next_batch(split, 8, r1);
  auto b2 = next_batch(split, 8, r2);
  CHECK(b1.x.data() == b2.x.data());

  // pool of exactly one positive and one negative always yields that pair
  Split<float> tiny;
  tiny.train.push_back(samples[0]);                    // excavator
  tiny.train.push_back(samples[samples.size() - 1]);   // dozer
  auto tb = next_batch(tiny, 2, rng);
  CHECK(tb.y[0] == 1.0f);
  CHECK(tb.y[1] == 0.0f);
}

TEST_CASE("nearest-neighbor separability calibration") {
  // ambiguity 0: a plain 3-NN pixel classifier must exceed 80% on held-out
  // images, confirming the classes carry real signal at 32x32
  auto samples = synth_generate<double>(160, 32, 2024, 0.0);  // 480 per class
  auto split = make_splits(samples, 480, 240, 17);
  double acc0 = knn3_accuracy(split.train, split.validation);
  CHECK(acc0 > 0.8);

  // full ambiguity collapses the distinctive geometry; accuracy must drop
  auto blurred = synth_generate<double>(40, 32, 2024, 1.0);
  auto bsplit = make_splits(blurred, 120, 120, 17);
  double acc1 = knn3_accuracy(bsplit.train, bsplit.validation);
  CHECK(acc1 < acc0);
  MESSAGE("3-NN accuracy ambiguity 0: ", acc0, ", ambiguity 1: ", acc1);
}
