#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/search_space.hpp"
#include "ruas/tensor.hpp"

namespace ruas {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct PngFile {
  std::FILE* fp = nullptr;
  explicit PngFile(const fs::path& p, const char* mode) : fp(std::fopen(p.c_str(), mode)) {}
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
  PngFile(const PngFile&) = delete;
  PngFile& operator=(const PngFile&) = delete;
};

struct DecodedPng {
  std::size_t width = 0, height = 0, channels = 0, bits = 0;
  std::vector<unsigned char> bytes;  // row-major, big-endian samples
};

// Returns an empty string on success, the libpng/format message otherwise.
inline std::string decode_png(std::FILE* fp, DecodedPng& out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return "cannot allocate decoder";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return "cannot allocate decoder";
  }
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return "corrupt PNG data";
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int bits = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_RGB_ALPHA) {
    png_destroy_read_struct(&png, &info, nullptr);
    return "unsupported color type (need RGB or RGBA)";
  }
  if (bits != 8 && bits != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    return "unsupported bit depth " + std::to_string(bits);
  }
  if (color == PNG_COLOR_TYPE_RGB_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = 3;
  out.bits = static_cast<std::size_t>(bits);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.assign(stride * out.height, 0);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return {};
}

inline std::string encode_png(std::FILE* fp, std::size_t width, std::size_t height,
                              const std::vector<unsigned char>& rgb8) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return "cannot allocate encoder";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return "cannot allocate encoder";
  }
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return "write failed";
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(rgb8.data() + y * width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return {};
}

}  // namespace detail

/// Decodes an 8- or 16-bit RGB(A) PNG into a (1, 3, h, w) tensor in [0, 1].
/// Alpha is dropped.
template <std::floating_point T>
Tensor<T> load_png(const fs::path& path) {
  detail::PngFile f(path, "rb");
  if (!f.fp) throw IoError("cannot open " + path.string());
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, f.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + ": not a PNG file");
  }
  std::rewind(f.fp);
  detail::DecodedPng img;
  if (auto err = detail::decode_png(f.fp, img); !err.empty()) throw IoError(path.string() + ": " + err);

  const Shape s{1, 3, img.height, img.width};
  std::vector<T> v(s.numel());
  const double maxv = img.bits == 16 ? 65535.0 : 255.0;
  const std::size_t bps = img.bits / 8;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const unsigned char* p = img.bytes.data() + ((y * img.width + x) * 3 + c) * bps;
        const unsigned raw = bps == 2 ? (unsigned(p[0]) << 8) | p[1] : p[0];
        v[(c * img.height + y) * img.width + x] = static_cast<T>(raw / maxv);
      }
  return Tensor<T>(s, std::move(v));
}

/// Writes the first image of the batch as 8-bit RGB. Values are scaled by
/// `gain`, clamped to [0, 1] and rounded.
template <std::floating_point T>
void save_png(const fs::path& path, const Tensor<T>& img, double gain = 1.0) {
  const Shape s = img.shape();
  if (s.c != 3) throw ShapeError("save_png: expected 3 channels");
  std::vector<unsigned char> rgb(s.h * s.w * 3);
  const auto d = img.data();
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(d[(c * s.h + y) * s.w + x]) * gain, 0.0, 1.0);
        rgb[(y * s.w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::PngFile f(path, "wb");
  if (!f.fp) throw IoError("cannot write " + path.string());
  if (auto err = detail::encode_png(f.fp, s.w, s.h, rgb); !err.empty()) throw IoError(path.string() + ": " + err);
}

/// Writes a nonnegative map scaled so its maximum renders white.
template <std::floating_point T>
void save_png_normalized(const fs::path& path, const Tensor<T>& img) {
  T mx = 0;
  for (T v : img.data()) mx = std::max(mx, v);
  save_png(path, img, mx > T(0) ? 1.0 / static_cast<double>(mx) : 1.0);
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Procedural clean scene: a shaded background with a handful of flat
/// and striped shapes, values inside [0.1, 0.95].
template <std::floating_point T>
Tensor<T> synth_clean(std::size_t h, std::size_t w, Rng& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto color = [&] { return std::array<double, 3>{0.25 + 0.7 * U(rng), 0.25 + 0.7 * U(rng), 0.25 + 0.7 * U(rng)}; };
  const Shape s{1, 3, h, w};
  std::vector<T> v(s.numel());
  auto c0 = color(), c1 = color();
  const double angle = 2 * M_PI * U(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  auto put = [&](std::size_t y, std::size_t x, const std::array<double, 3>& c) {
    for (std::size_t k = 0; k < 3; ++k) v[(k * h + y) * w + x] = static_cast<T>(std::clamp(c[k], 0.1, 0.95));
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double t = 0.5 + 0.5 * (ca * (double(x) / w - 0.5) + sa * (double(y) / h - 0.5));
      put(y, x, {c0[0] + (c1[0] - c0[0]) * t, c0[1] + (c1[1] - c0[1]) * t, c0[2] + (c1[2] - c0[2]) * t});
    }
  std::uniform_int_distribution<int> shapes(3, 6);
  const int count = shapes(rng);
  for (int i = 0; i < count; ++i) {
    auto c = color();
    const bool disk = U(rng) < 0.5;
    const bool striped = U(rng) < 0.3;
    const double period = 3.0 + 5.0 * U(rng);
    const double cy = U(rng) * h, cx = U(rng) * w;
    const double ry = (0.1 + 0.25 * U(rng)) * h, rx = (0.1 + 0.25 * U(rng)) * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        const double f = striped ? 0.8 + 0.2 * std::sin(2 * M_PI * x / period) : 1.0;
        put(y, x, {c[0] * f, c[1] * f, c[2] * f});
      }
  }
  return Tensor<T>(s, std::move(v));
}

struct LowLightParams {
  double gamma_min = 1.0;
  double gamma_max = 1.5;
  double s_min = 0.1;  // illumination field range
  double s_max = 0.6;
  double noise_sigma = 0.03;
  std::size_t grid = 4;  // control points per axis of the illumination field
};

template <std::floating_point T>
struct LowLightPair {
  Tensor<T> dark;
  Tensor<T> clean;
  Tensor<T> dark_noise_free;  // same gamma and illumination, no noise
  double gamma = 1.0;
};

/// dark = clamp(clean^gamma * s + n, 0, 1) with a smooth random field s
/// (bilinear interpolation of a coarse grid) and Gaussian noise n.
template <std::floating_point T>
LowLightPair<T> synth_lowlight(const Tensor<T>& clean, std::uint64_t seed, const LowLightParams& p) {
  if (p.gamma_min > p.gamma_max || p.s_min > p.s_max || p.noise_sigma < 0 || p.grid < 2) {
    throw ConfigError("synth_lowlight: invalid parameters");
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double gamma = p.gamma_min + (p.gamma_max - p.gamma_min) * U(rng);
  std::vector<double> grid(p.grid * p.grid);
  for (double& g : grid) g = p.s_min + (p.s_max - p.s_min) * U(rng);
  std::normal_distribution<double> N(0.0, 1.0);

  const Shape s = clean.shape();
  std::vector<T> dark(s.numel()), quiet(s.numel());
  const auto cv = clean.data();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const double gy = s.h > 1 ? double(y) / (s.h - 1) * (p.grid - 1) : 0.0;
          const double gx = s.w > 1 ? double(x) / (s.w - 1) * (p.grid - 1) : 0.0;
          const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), p.grid - 2);
          const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), p.grid - 2);
          const double fy = gy - y0, fx = gx - x0;
          const double field = (1 - fy) * ((1 - fx) * grid[y0 * p.grid + x0] + fx * grid[y0 * p.grid + x0 + 1]) +
                               fy * ((1 - fx) * grid[(y0 + 1) * p.grid + x0] + fx * grid[(y0 + 1) * p.grid + x0 + 1]);
          const std::size_t i = ((n * s.c + c) * s.h + y) * s.w + x;
          const double base = std::pow(std::max(0.0, static_cast<double>(cv[i])), gamma) * field;
          const double noisy = base + p.noise_sigma * N(rng);
          quiet[i] = static_cast<T>(std::clamp(base, 0.0, 1.0));
          dark[i] = static_cast<T>(std::clamp(noisy, 0.0, 1.0));
        }
  return {Tensor<T>(s, std::move(dark)), clean, Tensor<T>(s, std::move(quiet)), gamma};
}

// ---------------------------------------------------------------------------
// Datasets

template <std::floating_point T>
struct Sample {
  std::string id;
  Tensor<T> input;
  std::optional<Tensor<T>> reference;
  std::optional<Tensor<T>> input_noise_free;  // synthetic data only
};

template <std::floating_point T>
std::vector<Sample<T>> make_synthetic_set(std::size_t count, std::size_t h, std::size_t w, std::uint64_t seed,
                                          const LowLightParams& p) {
  std::vector<Sample<T>> out;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    auto clean = synth_clean<T>(h, w, rng);
    auto pair = synth_lowlight(clean, rng(), p);
    char id[32];
    std::snprintf(id, sizeof id, "syn%04zu", i);
    out.push_back({id, pair.dark, pair.clean, pair.dark_noise_free});
  }
  return out;
}

/// Every *.png in `input_dir` (sorted by name); references are matched by
/// file name in `reference_dir` when given.
template <std::floating_point T>
std::vector<Sample<T>> load_image_dir(const fs::path& input_dir, const std::optional<fs::path>& reference_dir) {
  if (!fs::is_directory(input_dir)) throw IoError("not a directory: " + input_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Sample<T>> out;
  for (const auto& f : files) {
    Sample<T> s{f.stem().string(), load_png<T>(f), std::nullopt, std::nullopt};
    if (reference_dir) {
      auto r = *reference_dir / f.filename();
      if (fs::exists(r)) {
        s.reference = load_png<T>(r);
        if (!(s.reference->shape() == s.input.shape())) {
          throw ShapeError("reference " + r.string() + " does not match its input size");
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<std::string> read_id_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

inline void write_id_list(const fs::path& path, const std::vector<std::string>& ids) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& id : ids) out << id << "\n";
}

}  // namespace ruas
