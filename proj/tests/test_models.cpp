#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <advaug/checkpoint.hpp>
#include <advaug/models.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace advaug;

namespace {

template <class T>
Tensor<T> random_image(std::size_t n, std::size_t size, std::uint64_t seed) {
  auto t = Tensor<T>::randn({n, 3, size, size}, T(0.5), T(0.2), seed);
  for (T& v : t.data()) v = std::clamp(v, T(0), T(1));
  return t;
}

}  // namespace

TEST_CASE("architectural shape table") {
  // size -> depth, patch-map side, classifier conv count
  const std::vector<std::array<std::size_t, 4>> table = {
      {32, 3, 4, 3}, {64, 4, 8, 4}, {128, 5, 16, 5}};
  for (auto [size, depth, patch, convs] : table) {
    Generator<float> g(size, 1, 8);
    CHECK(g.depth() == depth);
    Discriminator<float> d(size, 2, 8);
    CHECK(d.patch_side() == patch);
    Classifier<float> c(size, 3, 8);
    CHECK(c.conv_count() == convs);
  }
  CHECK_THROWS_AS(Generator<float>(48, 1), Error);
}

TEST_CASE("same seed gives identical parameters") {
  Generator<float> a(32, 7, 8), b(32, 7, 8);
  auto ea = a.state_entries(), eb = b.state_entries();
  REQUIRE(ea.size() == eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) CHECK(*ea[i].data == *eb[i].data);

  Generator<float> c(32, 8, 8);
  bool any_diff = false;
  auto ec = c.state_entries();
  for (std::size_t i = 0; i < ea.size(); ++i)
    if (*ea[i].data != *ec[i].data) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("identity at init") {
  for (std::size_t size : {std::size_t(32), std::size_t(64)}) {
    Generator<float> g(size, 11, 8);
    auto x = random_image<float>(2, size, 21);
    ForwardCtx<float> ctx{nullptr, true, false};
    auto out = g.forward(x, ctx);
    float worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      worst = std::max(worst, std::abs(out.generated[i] - x[i]));
    CHECK(worst < 1e-6f);
    for (float m : out.mask.data()) CHECK(m == 1.0f);
  }
}

TEST_CASE("mask stays in (0,2) for arbitrary parameters") {
  Generator<float> g(32, 13, 8);
  // blow up the head so logits saturate
  for (auto& p : g.params().items())
    for (float& v : p->value.data()) v += 3.0f;
  auto x = random_image<float>(1, 32, 22);
  auto out = g.forward(x, ForwardCtx<float>{nullptr, true, false});
  for (float m : out.mask.data()) {
    CHECK(m > 0.0f);
    CHECK(m < 2.0f);
  }

  // hand-set head bias very negative: mask ~ 0, generated ~ 0
  Generator<float> g2(32, 13, 8);
  for (float& v : g2.head_bias()->value.data()) v = -30.0f;
  auto out2 = g2.forward(x, ForwardCtx<float>{nullptr, true, false});
  for (float m : out2.mask.data()) CHECK(m < 1e-6f);
  for (float v : out2.generated.data()) CHECK(std::abs(v) < 1e-6f);

  // zero input stays zero regardless of mask
  auto zeros = Tensor<float>::zeros({1, 3, 32, 32});
  auto out3 = g.forward(zeros, ForwardCtx<float>{nullptr, true, false});
  for (float v : out3.generated.data()) CHECK(v == 0.0f);
}

TEST_CASE("discriminator output shape and zero-weight case") {
  Discriminator<float> d(32, 17, 8);
  auto x = random_image<float>(2, 32, 23);
  auto out = d.forward(x, ForwardCtx<float>{nullptr, true, false});
  CHECK(out.shape() == Shape{2, 1, 4, 4});

  for (auto& p : d.params().items())
    if (p->name.find("gamma") == std::string::npos)
      for (float& v : p->value.data()) v = 0.0f;
  auto out2 = d.forward(x, ForwardCtx<float>{nullptr, true, false});
  for (float v : out2.data()) CHECK(v == 0.0f);
}

TEST_CASE("classifier outputs") {
  Classifier<float> c(32, 19, 8);
  auto x = random_image<float>(3, 32, 24);
  auto probs = c.forward(x, ForwardCtx<float>{});
  CHECK(probs.shape() == Shape{3});
  for (float p : probs.data()) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }

  // zero-weight network: sigmoid(0) = 0.5 for every sample
  Classifier<float> cz(32, 19, 8);
  for (auto& p : cz.params().items())
    for (float& v : p->value.data()) v = 0.0f;
  auto pz = cz.forward(x, ForwardCtx<float>{});
  for (float p : pz.data()) CHECK(p == 0.5f);

  // identical inputs give identical outputs
  auto one = random_image<float>(1, 32, 25);
  auto batch = Tensor<float>::zeros({4, 3, 32, 32});
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t i = 0; i < one.size(); ++i)
      batch[n * one.size() + i] = one[i];
  auto out = c.forward(batch, ForwardCtx<float>{});
  for (float p : out.data()) CHECK(p == out[0]);
}

TEST_CASE("snapshot isolation") {
  Generator<float> g(32, 29, 8);
  auto x = random_image<float>(1, 32, 26);
  auto assistant = snapshot_assistant(g, 42);
  CHECK(assistant.source_iteration == 42);

  auto before = assistant.net.forward(x, ForwardCtx<float>{nullptr, true, false});

  // perturb the generator; the assistant must not move
  for (auto& p : g.params().items())
    for (float& v : p->value.data()) v += 0.1f;
  auto after = assistant.net.forward(x, ForwardCtx<float>{nullptr, true, false});
  CHECK(before.generated.data() == after.generated.data());

  // fresh snapshot is the identity map
  Generator<float> fresh(32, 30, 8);
  auto a2 = snapshot_assistant(fresh, 0);
  auto out = a2.net.forward(x, ForwardCtx<float>{nullptr, true, false});
  float worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, std::abs(out.generated[i] - x[i]));
  CHECK(worst < 1e-6f);

  // second snapshot fully replaces the first
  snapshot_assistant_into(a2, g, 7);
  CHECK(a2.source_iteration == 7);
  auto replaced = a2.net.forward(x, ForwardCtx<float>{nullptr, true, false});
  auto direct = g.forward(x, ForwardCtx<float>{nullptr, true, false});
  CHECK(replaced.generated.data() == direct.generated.data());
}

TEST_CASE("checkpoint round trip") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "advaug_ckpt.aaf").string();

  Generator<float> g(32, 31, 8);
  Classifier<float> c(32, 33, 8);
  // make the state non-trivial
  for (auto& p : g.params().items())
    for (float& v : p->value.data()) v += 0.01f;

  std::vector<ArrayRecord> records;
  append_network_records<float>(records, "gen", g);
  append_network_records<float>(records, "cls", c);
  checkpoint_save(path, records);

  Generator<float> g2(32, 99, 8);
  Classifier<float> c2(32, 98, 8);
  auto loaded = checkpoint_load(path);
  load_network_records<float>(loaded, "gen", g2);
  load_network_records<float>(loaded, "cls", c2);

  auto x = random_image<float>(2, 32, 27);
  auto y1 = g.forward(x, ForwardCtx<float>{nullptr, true, false});
  auto y2 = g2.forward(x, ForwardCtx<float>{nullptr, true, false});
  CHECK(y1.generated.data() == y2.generated.data());  // bit-identical
  CHECK(c.forward(x, ForwardCtx<float>{}).data() ==
        c2.forward(x, ForwardCtx<float>{}).data());

  SUBCASE("truncated file") {
    auto bytes = [&] {
      std::ifstream is(path, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(is), {});
    }();
    std::ofstream os(path + ".trunc", std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size() / 2));
    os.close();
    CHECK_THROWS_WITH_AS(checkpoint_load(path + ".trunc"),
                         doctest::Contains("truncated"), Error);
  }

  SUBCASE("bad magic") {
    std::ofstream os(path + ".bad", std::ios::binary);
    os << "NOPE then some bytes";
    os.close();
    CHECK_THROWS_WITH_AS(checkpoint_load(path + ".bad"),
                         doctest::Contains("magic"), Error);
  }

  SUBCASE("wrong image size names the offending parameter") {
    Generator<float> g64(64, 1, 8);
    CHECK_THROWS_AS(load_network_records<float>(loaded, "gen", g64), Error);
    try {
      load_network_records<float>(loaded, "gen", g64);
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("gen/") != std::string::npos);
    }
  }
}
