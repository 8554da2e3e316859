#pragma once

// Segmentation maps: per-pixel cluster ids over the scene grid, the SEGM
// label raster, palette PNG renders and ground-truth loading.
//
// SEGM layout (little-endian): "SEGM", u32 width, u32 height, u32 reserved (0),
// then width*height uint8 labels row-major. Label 0 is background.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hsiseg/core.hpp"
#include "hsiseg/hsi_data.hpp"
#include "hsiseg/png_io.hpp"

namespace hsiseg::segmentation {

namespace fs = std::filesystem;
using data::Coord;
using data::GroundTruth;
using png::Rgb;

struct SegmentationMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::int32_t> labels;  // row-major; 0 = background, 1..K = segments
  std::vector<std::int64_t> codes;   // codes[k - 1] is the cluster value behind segment k

  std::size_t segment_count() const noexcept { return codes.size(); }
  std::int32_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
};

/// Places per-pixel cluster values on the grid. Distinct values are numbered
/// 1..K in ascending order; unlisted pixels stay background.
inline SegmentationMap build_map(std::size_t width, std::size_t height, std::span<const Coord> coords,
                                 std::span<const std::int64_t> clusters) {
  if (coords.size() != clusters.size()) throw Error("build_map: coords and clusters differ in length");
  SegmentationMap map{width, height, std::vector<std::int32_t>(width * height, 0), {}};
  map.codes.assign(clusters.begin(), clusters.end());
  std::sort(map.codes.begin(), map.codes.end());
  map.codes.erase(std::unique(map.codes.begin(), map.codes.end()), map.codes.end());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i].x >= width || coords[i].y >= height) throw Error("build_map: coordinate outside the scene");
    auto& cell = map.labels[coords[i].y * width + coords[i].x];
    if (cell != 0) throw Error("build_map: pixel assigned twice");
    const auto k = std::lower_bound(map.codes.begin(), map.codes.end(), clusters[i]) - map.codes.begin();
    cell = static_cast<std::int32_t>(k + 1);
  }
  return map;
}

/// Labelled pixels must coincide with the ground-truth foreground, so the
/// segments are disjoint and cover it.
inline void check_partition(const SegmentationMap& map, const GroundTruth& gt) {
  if (map.width != gt.width || map.height != gt.height) throw Error("segmentation: dimensions differ from ground truth");
  std::vector<bool> used(map.segment_count() + 1, false);
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    const bool fg = gt.labels[i] != 0;
    const auto l = map.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) > map.segment_count()) throw Error("segmentation: label out of range");
    if (fg != (l != 0)) {
      std::ostringstream os;
      os << "segmentation: pixel (" << i % map.width << ", " << i / map.width << ") "
         << (fg ? "is foreground but unlabelled" : "is background but labelled");
      throw Error(os.str());
    }
    used[static_cast<std::size_t>(l)] = true;
  }
  for (std::size_t k = 1; k < used.size(); ++k)
    if (!used[k]) throw Error("segmentation: empty segment " + std::to_string(k));
}

// ---------------------------------------------------------------------------
// SEGM raster

struct RasterEncoding {
  std::vector<std::uint8_t> values;           // row-major
  std::map<std::int32_t, std::uint8_t> ids;   // segment -> raster value
};

/// Up to 255 segments are stored as-is. Beyond that the 254 largest segments
/// (ties to the lower id) get 1..254 in segment order and the rest share 255.
inline RasterEncoding encode_raster(const SegmentationMap& map) {
  RasterEncoding enc;
  const std::size_t k = map.segment_count();
  std::vector<std::uint64_t> size(k + 1, 0);
  for (auto l : map.labels) ++size[static_cast<std::size_t>(l)];
  std::vector<std::int32_t> kept;
  if (k <= 255) {
    for (std::size_t s = 1; s <= k; ++s) kept.push_back(static_cast<std::int32_t>(s));
  } else {
    std::vector<std::int32_t> order(k);
    for (std::size_t s = 0; s < k; ++s) order[s] = static_cast<std::int32_t>(s + 1);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return size[a] > size[b]; });
    kept.assign(order.begin(), order.begin() + 254);
    std::sort(kept.begin(), kept.end());
  }
  enc.ids[0] = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) enc.ids[kept[i]] = static_cast<std::uint8_t>(i + 1);
  enc.values.resize(map.labels.size());
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    auto it = enc.ids.find(map.labels[i]);
    enc.values[i] = it == enc.ids.end() ? 255 : it->second;
  }
  return enc;
}

inline void write_raster_bytes(const fs::path& path, std::size_t width, std::size_t height,
                               const std::vector<std::uint8_t>& values) {
  if (values.size() != width * height) throw Error("write_raster: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  auto put32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  out.write("SEGM", 4);
  put32(static_cast<std::uint32_t>(width));
  put32(static_cast<std::uint32_t>(height));
  put32(0);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline RasterEncoding write_raster(const fs::path& path, const SegmentationMap& map) {
  auto enc = encode_raster(map);
  write_raster_bytes(path, map.width, map.height, enc.values);
  return enc;
}

inline GroundTruth read_raster(const fs::path& path) {
  const auto bytes = data::detail::read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "SEGM", 4) != 0) throw Error(path.string() + ": not a SEGM raster");
  auto get32 = [&](std::size_t off) {
    return static_cast<std::uint32_t>(bytes[off]) | static_cast<std::uint32_t>(bytes[off + 1]) << 8 |
           static_cast<std::uint32_t>(bytes[off + 2]) << 16 | static_cast<std::uint32_t>(bytes[off + 3]) << 24;
  };
  GroundTruth gt{get32(4), get32(8), {}};
  if (get32(12) != 0) throw Error(path.string() + ": reserved header field is not zero");
  if (bytes.size() != 16 + gt.width * gt.height) throw Error(path.string() + ": payload size does not match header");
  gt.labels.assign(bytes.begin() + 16, bytes.end());
  return gt;
}

/// CSV of raster value -> cluster code, one row per segment.
inline std::string codes_csv(const SegmentationMap& map, const RasterEncoding& enc) {
  std::ostringstream os;
  os << "segment,raster_value,code\n";
  for (std::size_t k = 1; k <= map.segment_count(); ++k) {
    auto it = enc.ids.find(static_cast<std::int32_t>(k));
    os << k << "," << (it == enc.ids.end() ? 255 : static_cast<int>(it->second)) << "," << map.codes[k - 1] << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Palette and PNG rendering

/// Reads "index,r,g,b" rows (header line optional). Indices must run 0..n-1.
inline std::vector<Rgb> load_palette(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open palette " + path.string());
  std::vector<Rgb> palette;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("index", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    int idx, r, g, b;
    if (!(is >> idx >> r >> g >> b)) throw Error(path.string() + ": malformed palette row '" + line + "'");
    if (idx != static_cast<int>(palette.size())) throw Error(path.string() + ": palette indices must be consecutive");
    for (int c : {r, g, b})
      if (c < 0 || c > 255) throw Error(path.string() + ": colour component out of range");
    palette.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
  }
  if (palette.size() < 2 || palette.size() > 256) throw Error(path.string() + ": palette needs 2..256 colours");
  return palette;
}

/// Background uses entry 0; segments cycle through the remaining entries.
inline std::uint8_t palette_index(std::int32_t label, std::size_t palette_size) {
  if (label == 0) return 0;
  return static_cast<std::uint8_t>(1 + static_cast<std::size_t>(label - 1) % (palette_size - 1));
}

inline void render_png(const fs::path& path, const SegmentationMap& map, const std::vector<Rgb>& palette) {
  if (palette.size() < 2) throw Error("render_png: palette too small");
  png::IndexedImage img{map.width, map.height, std::vector<std::uint8_t>(map.labels.size())};
  for (std::size_t i = 0; i < map.labels.size(); ++i) img.indices[i] = palette_index(map.labels[i], palette.size());
  png::write_indexed(path, img, palette);
}

// ---------------------------------------------------------------------------
// Label rasters from disk

/// ENVI header (.hdr), palette/grayscale PNG, or SEGM raster.
inline GroundTruth load_label_raster(const fs::path& path) {
  const auto ext = data::detail::lower(path.extension().string());
  if (ext == ".hdr") return data::load_envi_labels(path);
  if (ext == ".png") {
    const auto img = png::read_indexed(path);
    return {img.width, img.height, std::vector<std::int32_t>(img.indices.begin(), img.indices.end())};
  }
  return read_raster(path);
}

/// Truth and prediction restricted to truth-foreground pixels.
inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> foreground_pairs(const GroundTruth& truth,
                                                                                      const GroundTruth& pred) {
  if (truth.width != pred.width || truth.height != pred.height) {
    std::ostringstream os;
    os << "dimension mismatch: truth " << truth.width << "x" << truth.height << ", prediction " << pred.width << "x"
       << pred.height;
    throw Error(os.str());
  }
  std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> out;
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    if (truth.labels[i] == 0) continue;
    out.first.push_back(truth.labels[i]);
    out.second.push_back(pred.labels[i]);
  }
  if (out.first.empty()) throw Error("ground truth has no foreground pixels");
  return out;
}

}  // namespace hsiseg::segmentation
