#pragma once

// Image ingestion (binary PPM only), balanced splits and batches, and a
// deterministic synthetic two-class dataset. Synthetic rasterization is pure
// integer math (fixed-point rotation table, half-plane tests on a 4x
// supersampled grid) so identical seeds give identical bytes on any platform.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "advaug/tensor.hpp"

namespace advaug {

// Positive class first; the three negatives follow.
inline const std::array<std::string, 4> kSubclasses = {"excavator", "dump_truck",
                                                       "mixer", "dozer"};

template <class T>
struct Sample {
  Tensor<T> image;        // [3,H,W], values in [0,1]
  T label = T(0);         // 1.0 positive class, 0.0 otherwise
  std::string subclass;
  std::uint64_t seed = 0; // per-image seed for synthetic samples, else 0
};

template <class T>
struct Split {
  std::vector<Sample<T>> train;
  std::vector<Sample<T>> validation;
  std::uint64_t seed = 0;
};

template <class T>
struct Batch {
  Tensor<T> x;  // [B,3,H,W]
  Tensor<T> y;  // [B]
};

// ---------------------------------------------------------------------------
// PPM P6 codec

namespace detail {

inline std::size_t ppm_token(const std::string& bytes, std::size_t pos,
                             std::string& out) {
  // skip whitespace and '#' comments
  while (pos < bytes.size()) {
    char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  out.clear();
  while (pos < bytes.size() &&
         !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
         bytes[pos] != '#')
    out += bytes[pos++];
  if (out.empty()) throw Error("ppm: truncated header");
  return pos;
}

inline std::size_t ppm_uint(const std::string& bytes, std::size_t pos,
                            std::size_t& out) {
  std::string tok;
  pos = ppm_token(bytes, pos, tok);
  out = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') throw Error("ppm: malformed header token '" + tok + "'");
    out = out * 10 + std::size_t(c - '0');
  }
  return pos;
}

}  // namespace detail

template <class T>
Tensor<T> decode_ppm(const std::string& bytes) {
  std::string magic;
  std::size_t pos = detail::ppm_token(bytes, 0, magic);
  if (magic != "P6") throw Error("ppm: expected P6 magic, got '" + magic + "'");
  std::size_t w = 0, h = 0, maxval = 0;
  pos = detail::ppm_uint(bytes, pos, w);
  pos = detail::ppm_uint(bytes, pos, h);
  pos = detail::ppm_uint(bytes, pos, maxval);
  if (maxval != 255)
    throw Error("ppm: unsupported maxval " + std::to_string(maxval));
  if (w == 0 || h == 0) throw Error("ppm: zero image dimension");
  ++pos;  // the single whitespace byte after maxval
  if (bytes.size() < pos + 3 * w * h) throw Error("ppm: truncated pixel data");
  Tensor<T> out = Tensor<T>::zeros({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out[(c * h + y) * w + x] =
            T(static_cast<unsigned char>(bytes[pos + (y * w + x) * 3 + c])) / T(255);
  return out;
}

template <class T>
std::string encode_ppm(const Tensor<T>& img) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw Error("ppm: encode expects a [3,H,W] tensor, got " + shape_str(img.shape()));
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        T v = std::clamp(img[(c * h + y) * w + x], T(0), T(1));
        out += char(static_cast<unsigned char>(std::lround(double(v) * 255.0)));
      }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace detail {

// cos/sin for 0..25 degrees, scaled by 2^16.
inline constexpr std::int64_t kCos16[26] = {
    65536, 65526, 65496, 65446, 65376, 65287, 65177, 65048, 64898,
    64729, 64540, 64332, 64104, 63856, 63589, 63303, 62997, 62672,
    62328, 61966, 61584, 61183, 60764, 60326, 59870, 59396};
inline constexpr std::int64_t kSin16[26] = {
    0,     1144,  2287,  3430,  4572,  5712,  6850,  7987,  9121,
    10252, 11380, 12505, 13626, 14742, 15855, 16962, 18064, 19161,
    20252, 21336, 22415, 23486, 24550, 25607, 26656, 27697};
// unit 12-gon, scaled by 2^16.
inline constexpr std::int64_t kGon12[12][2] = {
    {65536, 0},      {56756, 32768},  {32768, 56756},  {0, 65536},
    {-32768, 56756}, {-56756, 32768}, {-65536, 0},     {-56756, -32768},
    {-32768, -56756}, {0, -65536},    {32768, -56756}, {56756, -32768}};

struct SynthPoly {
  std::vector<std::array<std::int64_t, 2>> v;  // local units, ~[-1200,1200]
  bool accent = false;  // accent shapes blend away as ambiguity rises
};

// Local coordinates: y grows downward, origin at object center, the main body
// spans roughly x in [-900,900], y in [100,800].
inline std::vector<SynthPoly> synth_shapes(std::size_t subclass) {
  std::vector<SynthPoly> polys;
  polys.push_back({{{-900, 100}, {900, 100}, {900, 800}, {-900, 800}}, false});
  auto quad_between = [](std::int64_t x0, std::int64_t y0, std::int64_t x1,
                         std::int64_t y1, std::int64_t half_w) {
    // thick segment as a quad; offset perpendicular, integer normalized-ish
    std::int64_t dx = x1 - x0, dy = y1 - y0;
    std::int64_t len = std::max<std::int64_t>(
        1, std::int64_t(std::sqrt(double(dx * dx + dy * dy))));
    std::int64_t ox = -dy * half_w / len, oy = dx * half_w / len;
    return SynthPoly{{{x0 + ox, y0 + oy},
                      {x1 + ox, y1 + oy},
                      {x1 - ox, y1 - oy},
                      {x0 - ox, y0 - oy}},
                     true};
  };
  switch (subclass) {
    case 0:  // excavator: two-segment arm polyline + bucket triangle
      polys.push_back(quad_between(-100, 150, 450, -650, 90));
      polys.push_back(quad_between(450, -650, 950, -250, 80));
      polys.push_back({{{950, -350}, {1150, -50}, {800, -50}}, true});
      break;
    case 1:  // dump truck: cab + tipper trapezoid
      polys.push_back({{{-900, -400}, {-450, -400}, {-450, 100}, {-900, 100}}, true});
      polys.push_back({{{-300, -250}, {900, -550}, {900, 100}, {-300, 100}}, true});
      break;
    case 2:  // mixer: cab + drum (12-gon ellipse)
      polys.push_back({{{-900, -400}, {-450, -400}, {-450, 100}, {-900, 100}}, true});
      {
        SynthPoly drum;
        drum.accent = true;
        for (auto& p : kGon12)
          drum.v.push_back({250 + p[0] * 560 / 65536, -320 + p[1] * 390 / 65536});
        polys.push_back(drum);
      }
      break;
    case 3:  // dozer: wide front blade
      polys.push_back({{{950, -500}, {1150, -500}, {1150, 500}, {950, 500}}, true});
      break;
    default:
      throw Error("synth: unknown subclass index");
  }
  return polys;
}

inline bool point_in_convex(const std::vector<std::array<std::int64_t, 2>>& v,
                            std::int64_t px, std::int64_t py) {
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    std::int64_t cross =
        (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    if (cross > 0) pos = true;
    if (cross < 0) neg = true;
    if (pos && neg) return false;
  }
  return true;
}

inline double synth_uniform(std::mt19937_64& r) {
  return double(r() >> 11) * 0x1.0p-53;
}

}  // namespace detail

// One image per (seed, subclass, index); fully deterministic.
template <class T>
Sample<T> synth_sample(std::size_t image_size, std::uint64_t image_seed,
                       std::size_t subclass, double ambiguity) {
  if (image_size < 16) throw Error("synth: image_size below minimum 16");
  if (ambiguity < 0.0 || ambiguity > 1.0)
    throw Error("synth: ambiguity outside [0,1]");
  constexpr std::size_t SS = 4;  // supersampling factor per side
  const std::size_t W = image_size * SS;
  std::mt19937_64 rng(image_seed);

  // draws in a fixed order: scale, rotation, position, tints
  const std::int64_t scale_pm = 800 + std::int64_t(rng() % 401);       // 0.8..1.2
  const std::int64_t rot_deg = std::int64_t(rng() % 51) - 25;          // -25..25
  const std::int64_t jitter = std::int64_t(W) * 256 / 10;
  const std::int64_t cx = std::int64_t(W) * 128 + std::int64_t(rng() % std::uint64_t(2 * jitter + 1)) - jitter;
  const std::int64_t cy = std::int64_t(W) * 128 + std::int64_t(rng() % std::uint64_t(2 * jitter + 1)) - jitter;
  double body_tint[3], accent_tint[3];
  for (double& t : body_tint) t = (detail::synth_uniform(rng) - 0.5) * 0.2;
  for (double& t : accent_tint) t = (detail::synth_uniform(rng) - 0.5) * 0.2;

  // transform shapes into supersample coordinates, 8 fractional bits
  const std::int64_t c16 = detail::kCos16[rot_deg < 0 ? -rot_deg : rot_deg];
  const std::int64_t s16 = (rot_deg < 0 ? -1 : 1) * detail::kSin16[rot_deg < 0 ? -rot_deg : rot_deg];
  const std::int64_t half_fp = std::int64_t(W) * 256 * 35 / 100 * scale_pm / 1000;
  const std::int64_t a256 = std::llround(ambiguity * 256.0);
  const std::int64_t anchor[2] = {0, -350};  // common template location
  auto shapes = detail::synth_shapes(subclass);
  for (auto& poly : shapes) {
    for (auto& v : poly.v) {
      if (poly.accent) {
        // ambiguity shrinks class-distinctive geometry toward one shared spot
        v[0] += (anchor[0] - v[0]) * a256 / 256;
        v[1] += (anchor[1] - v[1]) * a256 / 256;
      }
      const std::int64_t rx = v[0] * c16 - v[1] * s16;  // local * 2^16
      const std::int64_t ry = v[0] * s16 + v[1] * c16;
      v[0] = cx + rx / 65536 * half_fp / 1000 + rx % 65536 * half_fp / 1000 / 65536;
      v[1] = cy + ry / 65536 * half_fp / 1000 + ry % 65536 * half_fp / 1000 / 65536;
    }
  }

  const double body_rgb[3] = {0.72, 0.62, 0.20};
  const double accent_rgb[3] = {0.52, 0.42, 0.16};
  const double bg_rgb[3] = {0.34, 0.36, 0.38};

  Sample<T> s;
  s.image = Tensor<T>::zeros({3, image_size, image_size});
  s.label = subclass == 0 ? T(1) : T(0);
  s.subclass = kSubclasses[subclass];
  s.seed = image_seed;
  const std::size_t hw = image_size * image_size;
  for (std::size_t py = 0; py < image_size; ++py) {
    for (std::size_t px = 0; px < image_size; ++px) {
      std::size_t n_body = 0, n_accent = 0;
      for (std::size_t sy = 0; sy < SS; ++sy) {
        for (std::size_t sx = 0; sx < SS; ++sx) {
          const std::int64_t qx = std::int64_t(px * SS + sx) * 256 + 128;
          const std::int64_t qy = std::int64_t(py * SS + sy) * 256 + 128;
          int hit = 0;  // 0 bg, 1 body, 2 accent
          for (const auto& poly : shapes) {
            if (detail::point_in_convex(poly.v, qx, qy)) {
              hit = poly.accent ? 2 : std::max(hit, 1);
              if (hit == 2) break;
            }
          }
          if (hit == 2) ++n_accent;
          else if (hit == 1) ++n_body;
        }
      }
      const double n_bg = double(SS * SS - n_body - n_accent);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = (n_bg * bg_rgb[c] + double(n_body) * (body_rgb[c] + body_tint[c]) +
                    double(n_accent) * (accent_rgb[c] + accent_tint[c])) /
                   double(SS * SS);
        v += (detail::synth_uniform(rng) - 0.5) * 0.12;  // textured noise
        s.image[c * hw + py * image_size + px] = T(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

// Emits 3n positives plus n per negative subclass (6n total), keeping the
// 1:1 positive/negative balance with negatives split three ways.
template <class T>
std::vector<Sample<T>> synth_generate(std::size_t n_per_subclass,
                                      std::size_t image_size, std::uint64_t seed,
                                      double ambiguity) {
  if (n_per_subclass < 1) throw Error("synth: n_per_subclass must be >= 1");
  std::vector<Sample<T>> out;
  out.reserve(6 * n_per_subclass);
  std::size_t index = 0;
  for (std::size_t sub = 0; sub < 4; ++sub) {
    const std::size_t n = sub == 0 ? 3 * n_per_subclass : n_per_subclass;
    for (std::size_t i = 0; i < n; ++i, ++index)
      out.push_back(synth_sample<T>(image_size, mix_seed(seed, index), sub, ambiguity));
  }
  return out;
}

// Writes <root>/<subclass>/<name>.ppm plus manifest.csv (path,subclass,label,seed).
template <class T>
void synth_write(const std::string& root, const std::vector<Sample<T>>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ostringstream manifest;
  manifest << "path,subclass,label,seed\n";
  std::map<std::string, std::size_t> counter;
  for (const Sample<T>& s : samples) {
    char name[32];
    std::snprintf(name, sizeof(name), "%s_%05zu.ppm", s.subclass.c_str(),
                  counter[s.subclass]++);
    const std::string rel = s.subclass + "/" + name;
    fs::create_directories(fs::path(root) / s.subclass);
    std::ofstream os(fs::path(root) / rel, std::ios::binary);
    if (!os) throw Error("synth: cannot write " + rel);
    const std::string bytes = encode_ppm(s.image);
    os.write(bytes.data(), std::streamsize(bytes.size()));
    manifest << rel << "," << s.subclass << "," << (s.label > T(0.5) ? 1 : 0)
             << "," << s.seed << "\n";
  }
  std::ofstream mf(fs::path(root) / "manifest.csv");
  if (!mf) throw Error("synth: cannot write manifest.csv");
  mf << manifest.str();
}

// ---------------------------------------------------------------------------
// Loading and splitting

template <class T>
std::vector<Sample<T>> load_dataset(const std::string& root,
                                    std::size_t image_size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(fs::path(root) / kSubclasses[0]))
    throw Error("dataset: missing subclass directory " +
                (fs::path(root) / kSubclasses[0]).string());
  bool any_negative = false;
  for (std::size_t sub = 1; sub < 4; ++sub)
    any_negative |= fs::is_directory(fs::path(root) / kSubclasses[sub]);
  if (!any_negative)
    throw Error("dataset: no negative subclass directory under " + root +
                " (need at least one of dump_truck, mixer, dozer)");
  std::vector<Sample<T>> out;
  for (std::size_t sub = 0; sub < 4; ++sub) {
    const fs::path dir = fs::path(root) / kSubclasses[sub];
    if (!fs::is_directory(dir)) continue;
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().extension() == ".ppm") paths.push_back(entry.path().string());
    if (paths.empty())
      throw Error("dataset: empty subclass directory " + dir.string());
    std::sort(paths.begin(), paths.end());
    for (const std::string& p : paths) {
      std::ifstream is(p, std::ios::binary);
      std::string bytes((std::istreambuf_iterator<char>(is)),
                        std::istreambuf_iterator<char>());
      Sample<T> s;
      s.image = decode_ppm<T>(bytes);
      if (s.image.dim(1) != image_size || s.image.dim(2) != image_size)
        throw Error("dataset: " + p + " has shape " + shape_str(s.image.shape()) +
                    ", expected " + std::to_string(image_size) + "x" +
                    std::to_string(image_size));
      s.label = sub == 0 ? T(1) : T(0);
      s.subclass = kSubclasses[sub];
      out.push_back(std::move(s));
    }
  }
  return out;
}

// Validation drawn first, then train; both exactly balanced (half positive,
// negatives split equally across the three negative subclasses). `train_seed`
// reshuffles only the post-validation remainder, so repeats can re-draw the
// training subset while keeping one fixed validation pool.
template <class T>
Split<T> make_splits(const std::vector<Sample<T>>& samples, std::size_t n_train,
                     std::size_t n_val, std::uint64_t seed,
                     std::uint64_t train_seed) {
  if (n_train % 6 != 0 || n_val % 6 != 0)
    throw Error("split: sample counts must be divisible by 6 for exact balance");
  std::array<std::vector<std::size_t>, 4> by_sub;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = std::find(kSubclasses.begin(), kSubclasses.end(), samples[i].subclass);
    if (it == kSubclasses.end())
      throw Error("split: unknown subclass '" + samples[i].subclass + "'");
    by_sub[std::size_t(it - kSubclasses.begin())].push_back(i);
  }
  std::string shortfall;
  for (std::size_t sub = 0; sub < 4; ++sub) {
    const std::size_t need = (sub == 0 ? n_train / 2 + n_val / 2
                                       : n_train / 6 + n_val / 6);
    if (by_sub[sub].size() < need)
      shortfall += (shortfall.empty() ? "" : "; ") + kSubclasses[sub] + " needs " +
                   std::to_string(need) + ", has " + std::to_string(by_sub[sub].size());
  }
  if (!shortfall.empty()) throw Error("split: insufficient samples: " + shortfall);

  Split<T> split;
  split.seed = seed;
  for (std::size_t sub = 0; sub < 4; ++sub) {
    auto& idx = by_sub[sub];
    // hand-rolled Fisher-Yates: std::shuffle's draw pattern is unspecified
    std::mt19937_64 rng(mix_seed(seed, 900 + sub));
    for (std::size_t i = idx.size() - 1; i > 0; --i)
      std::swap(idx[i], idx[rng() % (i + 1)]);
    const std::size_t nv = sub == 0 ? n_val / 2 : n_val / 6;
    const std::size_t nt = sub == 0 ? n_train / 2 : n_train / 6;
    for (std::size_t i = 0; i < nv; ++i) split.validation.push_back(samples[idx[i]]);
    std::mt19937_64 trng(mix_seed(train_seed, 950 + sub));
    for (std::size_t i = idx.size() - 1; i > nv; --i)
      std::swap(idx[i], idx[nv + trng() % (i - nv + 1)]);
    for (std::size_t i = 0; i < nt; ++i) split.train.push_back(samples[idx[nv + i]]);
  }
  return split;
}

template <class T>
Split<T> make_splits(const std::vector<Sample<T>>& samples, std::size_t n_train,
                     std::size_t n_val, std::uint64_t seed) {
  return make_splits(samples, n_train, n_val, seed, seed);
}

// Balanced batch with replacement: first half positives, second half negatives.
template <class T>
Batch<T> next_batch(const Split<T>& split, std::size_t batch_size,
                    std::mt19937_64& rng, bool from_validation = false) {
  if (batch_size % 2 != 0) throw Error("batch: batch_size must be even");
  const std::vector<Sample<T>>& pool = from_validation ? split.validation : split.train;
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < pool.size(); ++i)
    (pool[i].label > T(0.5) ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw Error("batch: pool lacks one of the classes");

  const std::size_t hs = pool[0].image.dim(1), ws = pool[0].image.dim(2);
  Batch<T> b;
  b.x = Tensor<T>::zeros({batch_size, 3, hs, ws});
  b.y = Tensor<T>::zeros({batch_size});
  const std::size_t img = 3 * hs * ws;
  for (std::size_t k = 0; k < batch_size; ++k) {
    const auto& ids = k < batch_size / 2 ? pos : neg;
    const Sample<T>& s = pool[ids[rng() % ids.size()]];
    std::copy(s.image.data().begin(), s.image.data().end(),
              b.x.data().begin() + k * img);
    b.y[k] = s.label;
  }
  return b;
}

}  // namespace advaug
