#pragma once

// Hyperspectral cube ingestion and the preprocessing chain that turns a
// labelled scene into normalized, shuffled train/validation/test pixels.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hsiseg/core.hpp"

namespace hsiseg::data {

namespace fs = std::filesystem;

/// W x H x B radiance tensor stored band-interleaved-by-pixel:
/// value(x, y, band) = data[(y * width + x) * bands + band].
struct HyperCube {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t bands = 0;
  std::vector<float> data;
  std::vector<double> wavelengths;  // empty or one entry per band

  float& at(std::size_t x, std::size_t y, std::size_t band) {
    return data[(y * width + x) * bands + band];
  }
  float at(std::size_t x, std::size_t y, std::size_t band) const {
    return data[(y * width + x) * bands + band];
  }
  std::span<const float> pixel(std::size_t x, std::size_t y) const {
    return {data.data() + (y * width + x) * bands, bands};
  }

  void validate() const {
    if (data.size() != width * height * bands)
      throw Error("HyperCube: data length does not match width*height*bands");
    if (!wavelengths.empty() && wavelengths.size() != bands)
      throw Error("HyperCube: wavelength count does not match band count");
    for (float v : data)
      if (!std::isfinite(v)) throw Error("HyperCube: non-finite value");
  }
};

/// Per-pixel class ids; 0 is background.
struct GroundTruth {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::int32_t> labels;  // row-major, labels[y * width + x]

  std::int32_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
};

struct Coord {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  auto operator<=>(const Coord&) const = default;
};

struct PixelDataset {
  Matrix<float> pixels;  // N x B
  std::vector<std::int32_t> labels;
  std::vector<Coord> coords;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t band_count() const noexcept { return pixels.cols(); }

  PixelDataset subset(std::span<const std::size_t> rows) const {
    PixelDataset out;
    out.pixels = Matrix<float>(rows.size(), band_count());
    out.labels.reserve(rows.size());
    out.coords.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = pixels.row(rows[i]);
      std::copy(src.begin(), src.end(), out.pixels.row(i).begin());
      out.labels.push_back(labels[rows[i]]);
      out.coords.push_back(coords[rows[i]]);
    }
    return out;
  }

  std::size_t class_count() const {
    return std::set<std::int32_t>(labels.begin(), labels.end()).size();
  }
};

struct SplitDataset {
  PixelDataset train;
  PixelDataset validation;
  PixelDataset test;
  std::uint64_t seed = 0;
};

struct MinMaxStats {
  std::vector<float> min;
  std::vector<float> max;
};

// ---------------------------------------------------------------------------
// ENVI raster I/O

enum class Interleave { bsq, bil, bip };

struct EnviHeader {
  std::size_t samples = 0;  // width
  std::size_t lines = 0;    // height
  std::size_t bands = 0;
  int data_type = 0;
  Interleave interleave = Interleave::bsq;
  std::size_t header_offset = 0;
  int byte_order = 0;
  std::vector<double> wavelengths;
};

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key,
                               const fs::path& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(path.string() + ": ENVI header is missing '" + key + "'");
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size() || v < 0) throw Error("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error(path.string() + ": ENVI header field '" + key + "' is not a count");
  }
}

inline std::size_t type_size(int data_type) {
  switch (data_type) {
    case 4: return 4;   // float32
    case 5: return 8;   // float64
    case 12: return 2;  // uint16
    default: throw Error("unsupported ENVI data type " + std::to_string(data_type));
  }
}

template <typename T>
T read_le(const unsigned char* p) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline double decode_value(const unsigned char* p, int data_type) {
  switch (data_type) {
    case 4: return read_le<float>(p);
    case 5: return read_le<double>(p);
    case 12: return read_le<std::uint16_t>(p);
    default: throw Error("unsupported ENVI data type");
  }
}

inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline EnviHeader parse_envi_header(const fs::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw Error("cannot open ENVI header " + header_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (detail::trim(text).rfind("ENVI", 0) != 0)
    throw Error(header_path.string() + ": not an ENVI header (missing 'ENVI' magic)");

  std::map<std::string, std::string> kv;
  std::size_t pos = text.find('\n');
  while (pos != std::string::npos && pos < text.size()) {
    const std::size_t eq = text.find('=', pos);
    if (eq == std::string::npos) break;
    std::string raw_key = text.substr(pos, eq - pos);
    if (auto nl = raw_key.find_last_of('\n'); nl != std::string::npos) raw_key = raw_key.substr(nl + 1);
    const std::string key = detail::lower(detail::trim(raw_key));
    std::size_t value_start = eq + 1;
    while (value_start < text.size() && (text[value_start] == ' ' || text[value_start] == '\t'))
      ++value_start;
    std::size_t end;
    std::string value;
    if (value_start < text.size() && text[value_start] == '{') {
      end = text.find('}', value_start);
      if (end == std::string::npos) throw Error(header_path.string() + ": unterminated '{' block");
      value = text.substr(value_start + 1, end - value_start - 1);
      end = text.find('\n', end);
    } else {
      end = text.find('\n', value_start);
      value = text.substr(value_start, end == std::string::npos ? std::string::npos : end - value_start);
    }
    if (kv.contains(key) && detail::trim(kv[key]) != detail::trim(value))
      throw Error(header_path.string() + ": contradictory values for '" + key + "'");
    kv[key] = detail::trim(value);
    pos = end;
  }

  EnviHeader h;
  h.samples = detail::parse_count(kv, "samples", header_path);
  h.lines = detail::parse_count(kv, "lines", header_path);
  h.bands = detail::parse_count(kv, "bands", header_path);
  h.data_type = static_cast<int>(detail::parse_count(kv, "data type", header_path));
  if (kv.contains("header offset")) h.header_offset = detail::parse_count(kv, "header offset", header_path);
  if (kv.contains("byte order")) h.byte_order = static_cast<int>(detail::parse_count(kv, "byte order", header_path));
  if (h.byte_order != 0) throw Error(header_path.string() + ": only little-endian payloads are supported");
  if (h.samples == 0 || h.lines == 0 || h.bands == 0)
    throw Error(header_path.string() + ": zero-sized dimension");
  detail::type_size(h.data_type);

  auto il = kv.find("interleave");
  if (il == kv.end()) throw Error(header_path.string() + ": ENVI header is missing 'interleave'");
  const std::string mode = detail::lower(il->second);
  if (mode == "bsq") h.interleave = Interleave::bsq;
  else if (mode == "bil") h.interleave = Interleave::bil;
  else if (mode == "bip") h.interleave = Interleave::bip;
  else throw Error(header_path.string() + ": unknown interleave '" + il->second + "'");

  if (auto wl = kv.find("wavelength"); wl != kv.end()) {
    std::stringstream ss(wl->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) h.wavelengths.push_back(std::stod(item));
    }
    if (h.wavelengths.size() != h.bands)
      throw Error(header_path.string() + ": wavelength list length does not match 'bands'");
  }
  return h;
}

/// Locates the binary payload next to a header: same stem with no extension
/// or one of the usual raster extensions.
inline fs::path envi_payload_path(const fs::path& header_path) {
  fs::path base = header_path;
  if (detail::lower(base.extension().string()) == ".hdr") base.replace_extension();
  for (const char* ext : {"", ".img", ".raw", ".dat", ".bsq", ".bil", ".bip", ".float"}) {
    fs::path candidate = base;
    candidate += ext;
    if (candidate != header_path && fs::is_regular_file(candidate)) return candidate;
  }
  throw Error("no ENVI payload found next to " + header_path.string());
}

/// Loads an ENVI raster into (x, y, band) order regardless of interleave.
inline HyperCube load_envi(const fs::path& header_path) {
  const EnviHeader h = parse_envi_header(header_path);
  const auto payload = detail::read_file(envi_payload_path(header_path));
  const std::size_t elem = detail::type_size(h.data_type);
  const std::size_t expected = h.header_offset + h.samples * h.lines * h.bands * elem;
  if (payload.size() < expected)
    throw Error(header_path.string() + ": payload has " + std::to_string(payload.size()) +
                " bytes, header declares " + std::to_string(expected));

  HyperCube cube{h.samples, h.lines, h.bands, {}, h.wavelengths};
  cube.data.resize(h.samples * h.lines * h.bands);
  const unsigned char* base = payload.data() + h.header_offset;
  for (std::size_t y = 0; y < h.lines; ++y) {
    for (std::size_t x = 0; x < h.samples; ++x) {
      for (std::size_t b = 0; b < h.bands; ++b) {
        std::size_t idx = 0;
        switch (h.interleave) {
          case Interleave::bsq: idx = (b * h.lines + y) * h.samples + x; break;
          case Interleave::bil: idx = (y * h.bands + b) * h.samples + x; break;
          case Interleave::bip: idx = (y * h.samples + x) * h.bands + b; break;
        }
        cube.at(x, y, b) = static_cast<float>(detail::decode_value(base + idx * elem, h.data_type));
      }
    }
  }
  cube.validate();
  return cube;
}

/// Writes a float32 ENVI raster (header + payload with the same stem).
inline void write_envi(const HyperCube& cube, const fs::path& header_path,
                       Interleave interleave = Interleave::bsq) {
  cube.validate();
  fs::path payload_path = header_path;
  payload_path.replace_extension(".img");
  {
    std::ofstream hdr(header_path);
    if (!hdr) throw Error("cannot write " + header_path.string());
    const char* il = interleave == Interleave::bsq ? "bsq" : interleave == Interleave::bil ? "bil" : "bip";
    hdr << "ENVI\n"
        << "samples = " << cube.width << "\n"
        << "lines = " << cube.height << "\n"
        << "bands = " << cube.bands << "\n"
        << "header offset = 0\n"
        << "data type = 4\n"
        << "interleave = " << il << "\n"
        << "byte order = 0\n";
    if (!cube.wavelengths.empty()) {
      hdr << "wavelength = {";
      for (std::size_t b = 0; b < cube.wavelengths.size(); ++b)
        hdr << (b ? ", " : "") << cube.wavelengths[b];
      hdr << "}\n";
    }
  }
  std::vector<float> out(cube.data.size());
  for (std::size_t y = 0; y < cube.height; ++y)
    for (std::size_t x = 0; x < cube.width; ++x)
      for (std::size_t b = 0; b < cube.bands; ++b) {
        std::size_t idx = 0;
        switch (interleave) {
          case Interleave::bsq: idx = (b * cube.height + y) * cube.width + x; break;
          case Interleave::bil: idx = (y * cube.bands + b) * cube.width + x; break;
          case Interleave::bip: idx = (y * cube.width + x) * cube.bands + b; break;
        }
        out[idx] = cube.at(x, y, b);
      }
  std::ofstream bin(payload_path, std::ios::binary);
  if (!bin) throw Error("cannot write " + payload_path.string());
  bin.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(float)));
}

/// Single-band ENVI raster read as class ids.
inline GroundTruth load_envi_labels(const fs::path& header_path) {
  const HyperCube raster = load_envi(header_path);
  if (raster.bands != 1) throw Error(header_path.string() + ": ground truth must have one band");
  GroundTruth gt{raster.width, raster.height, {}};
  gt.labels.reserve(raster.data.size());
  for (float v : raster.data) {
    if (v < 0 || v != std::floor(v)) throw Error(header_path.string() + ": ground truth ids must be non-negative integers");
    gt.labels.push_back(static_cast<std::int32_t>(v));
  }
  return gt;
}

inline void write_envi_labels(const GroundTruth& gt, const fs::path& header_path) {
  HyperCube raster{gt.width, gt.height, 1, {}, {}};
  raster.data.assign(gt.labels.begin(), gt.labels.end());
  write_envi(raster, header_path);
}

// ---------------------------------------------------------------------------
// Preprocessing

inline HyperCube remove_bands(const HyperCube& cube, const std::set<std::size_t>& drop) {
  for (auto b : drop)
    if (b >= cube.bands) throw Error("remove_bands: band index " + std::to_string(b) + " out of range");
  if (drop.size() == cube.bands) throw Error("remove_bands: cannot drop every band");
  if (drop.empty()) return cube;
  std::vector<std::size_t> keep;
  for (std::size_t b = 0; b < cube.bands; ++b)
    if (!drop.contains(b)) keep.push_back(b);
  HyperCube out{cube.width, cube.height, keep.size(), {}, {}};
  out.data.reserve(cube.width * cube.height * keep.size());
  for (std::size_t p = 0; p < cube.width * cube.height; ++p)
    for (auto b : keep) out.data.push_back(cube.data[p * cube.bands + b]);
  if (!cube.wavelengths.empty())
    for (auto b : keep) out.wavelengths.push_back(cube.wavelengths[b]);
  return out;
}

/// Keeps the pixels whose ground-truth id is non-zero, scanning rows top to
/// bottom.
inline PixelDataset mask_background(const HyperCube& cube, const GroundTruth& gt) {
  if (cube.width != gt.width || cube.height != gt.height)
    throw Error("mask_background: cube is " + std::to_string(cube.width) + "x" + std::to_string(cube.height) +
                ", ground truth is " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  PixelDataset ds;
  ds.pixels = Matrix<float>(0, cube.bands);
  for (std::size_t y = 0; y < cube.height; ++y) {
    for (std::size_t x = 0; x < cube.width; ++x) {
      const auto label = gt.at(x, y);
      if (label < 0) throw Error("mask_background: negative class id");
      if (label == 0) continue;
      ds.pixels.append_row(cube.pixel(x, y));
      ds.labels.push_back(label);
      ds.coords.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)});
    }
  }
  if (ds.labels.empty()) throw Error("mask_background: ground truth has no foreground pixels");
  return ds;
}

inline MinMaxStats compute_minmax(const PixelDataset& ds) {
  if (ds.size() == 0) throw Error("compute_minmax: empty dataset");
  const std::size_t bands = ds.band_count();
  MinMaxStats s{std::vector<float>(ds.pixels.row(0).begin(), ds.pixels.row(0).end()),
                std::vector<float>(ds.pixels.row(0).begin(), ds.pixels.row(0).end())};
  for (std::size_t i = 1; i < ds.size(); ++i) {
    auto row = ds.pixels.row(i);
    for (std::size_t b = 0; b < bands; ++b) {
      s.min[b] = std::min(s.min[b], row[b]);
      s.max[b] = std::max(s.max[b], row[b]);
    }
  }
  return s;
}

/// Per-band affine map to [0, 1]. Values outside the statistics' range are
/// clamped; a band with max == min maps to 0.
inline std::pair<PixelDataset, MinMaxStats> normalize_minmax(PixelDataset ds,
                                                             std::optional<MinMaxStats> stats = {}) {
  const std::size_t bands = ds.band_count();
  MinMaxStats s = stats ? *std::move(stats) : compute_minmax(ds);
  if (s.min.size() != bands || s.max.size() != bands)
    throw Error("normalize_minmax: statistics do not match band count");
  for (std::size_t b = 0; b < bands; ++b)
    if (s.max[b] < s.min[b]) throw Error("normalize_minmax: band max below min");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.pixels.row(i);
    for (std::size_t b = 0; b < bands; ++b) {
      const double range = static_cast<double>(s.max[b]) - static_cast<double>(s.min[b]);
      if (range == 0.0) {
        row[b] = 0.0f;
        continue;
      }
      const double v = (static_cast<double>(row[b]) - static_cast<double>(s.min[b])) / range;
      row[b] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return {std::move(ds), std::move(s)};
}

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

/// 80/20 into (train+validation)/test, then 80/20 again; remainders go to
/// train and each part keeps at least one pixel.
inline SplitSizes split_sizes(std::size_t n) {
  if (n < 5) throw Error("shuffle_split: need at least 5 pixels, got " + std::to_string(n));
  SplitSizes s;
  s.test = std::max<std::size_t>(1, n / 5);
  const std::size_t rest = n - s.test;
  s.validation = std::max<std::size_t>(1, rest / 5);
  s.train = rest - s.validation;
  return s;
}

inline SplitDataset shuffle_split(const PixelDataset& ds, std::uint64_t seed) {
  const SplitSizes sizes = split_sizes(ds.size());
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::span<const std::size_t> all(order);
  SplitDataset out;
  out.seed = seed;
  out.train = ds.subset(all.subspan(0, sizes.train));
  out.validation = ds.subset(all.subspan(sizes.train, sizes.validation));
  out.test = ds.subset(all.subspan(sizes.train + sizes.validation));
  return out;
}

// ---------------------------------------------------------------------------
// Binary persistence for pixel datasets.
//
// Layout (little-endian): "PXDS", u32 version = 1, u64 N, u32 B, then N
// records of (u32 x, u32 y, i32 label), then N*B float32 pixel values.

inline void save_dataset(const PixelDataset& ds, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write("PXDS", 4);
  put(std::uint32_t{1});
  put(static_cast<std::uint64_t>(ds.size()));
  put(static_cast<std::uint32_t>(ds.band_count()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    put(ds.coords[i].x);
    put(ds.coords[i].y);
    put(ds.labels[i]);
  }
  out.write(reinterpret_cast<const char*>(ds.pixels.data().data()),
            static_cast<std::streamsize>(ds.pixels.data().size() * sizeof(float)));
}

inline PixelDataset load_dataset(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "PXDS", 4) != 0)
    throw Error(path.string() + ": not a pixel dataset file");
  if (detail::read_le<std::uint32_t>(bytes.data() + 4) != 1) throw Error(path.string() + ": unsupported version");
  const auto n = detail::read_le<std::uint64_t>(bytes.data() + 8);
  const auto b = detail::read_le<std::uint32_t>(bytes.data() + 16);
  const std::size_t need = 20 + n * 12 + n * b * sizeof(float);
  if (bytes.size() != need) throw Error(path.string() + ": truncated pixel dataset");
  PixelDataset ds;
  ds.pixels = Matrix<float>(n, b);
  const unsigned char* p = bytes.data() + 20;
  for (std::size_t i = 0; i < n; ++i, p += 12) {
    ds.coords.push_back({detail::read_le<std::uint32_t>(p), detail::read_le<std::uint32_t>(p + 4)});
    ds.labels.push_back(detail::read_le<std::int32_t>(p + 8));
  }
  std::memcpy(ds.pixels.data().data(), p, n * b * sizeof(float));
  return ds;
}

}  // namespace hsiseg::data
