#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidrep/tensor.hpp"

namespace vidrep {

namespace detail {

inline void png_be32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline void png_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& payload) {
  png_be32(out, static_cast<uint32_t>(payload.size()));
  const size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = crc32(crc32(0L, nullptr, 0), out.data() + crc_start,
                          static_cast<uInt>(out.size() - crc_start));
  png_be32(out, static_cast<uint32_t>(crc));
}

}  // namespace detail

// 8-bit RGB PNG (filter 0 scanlines, fixed zlib level): identical input bytes
// give identical files.
inline void write_png_rgb8(const std::filesystem::path& path, int H, int W,
                           const std::vector<unsigned char>& rgb) {
  if (static_cast<int64_t>(rgb.size()) != static_cast<int64_t>(H) * W * 3)
    throw std::invalid_argument("write_png_rgb8: buffer size mismatch");
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<size_t>(H) * (static_cast<size_t>(W) * 3 + 1));
  for (int y = 0; y < H; ++y) {
    raw.push_back(0);  // filter none
    raw.insert(raw.end(), rgb.begin() + static_cast<int64_t>(y) * W * 3,
               rgb.begin() + static_cast<int64_t>(y + 1) * W * 3);
  }
  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(comp_size);
  if (compress2(compressed.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png_rgb8: deflate failed");
  compressed.resize(comp_size);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<unsigned char> ihdr;
  detail::png_be32(ihdr, static_cast<uint32_t>(W));
  detail::png_be32(ihdr, static_cast<uint32_t>(H));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // filter method
  ihdr.push_back(0);   // no interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", compressed);
  detail::png_chunk(out, "IEND", {});

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

// [3,H,W] or [1,H,W] float tensor in [0,1] -> 8-bit RGB rows.
inline std::vector<unsigned char> tensor_to_rgb8(const Tensor& img) {
  if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1))
    throw std::invalid_argument("tensor_to_rgb8: need [3,H,W] or [1,H,W], got " +
                                shape_str(img.shape()));
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int64_t plane = static_cast<int64_t>(H) * W;
  std::vector<unsigned char> out(static_cast<size_t>(plane) * 3);
  for (int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(img.data()[(C == 1 ? 0 : c) * plane + i], 0.0, 1.0);
      out[static_cast<size_t>(i * 3 + c)] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Tensor& img) {
  write_png_rgb8(path, img.dim(1), img.dim(2), tensor_to_rgb8(img));
}

// Tile same-sized [C,h,w] images into a grid with a 2-pixel gutter.
inline Tensor make_grid(const std::vector<Tensor>& tiles, int cols) {
  if (tiles.empty()) throw std::invalid_argument("make_grid: no tiles");
  const int h = tiles[0].dim(1), w = tiles[0].dim(2);
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  const int pad = 2;
  const int H = rows * (h + pad) + pad;
  const int W = cols * (w + pad) + pad;
  Tensor grid = Tensor::full({3, H, W}, 1.0);
  for (size_t i = 0; i < tiles.size(); ++i) {
    const Tensor& t = tiles[i];
    if (t.dim(1) != h || t.dim(2) != w)
      throw std::invalid_argument("make_grid: tile size mismatch");
    const int r = static_cast<int>(i) / cols;
    const int c = static_cast<int>(i) % cols;
    const int y0 = pad + r * (h + pad);
    const int x0 = pad + c * (w + pad);
    const int64_t tplane = static_cast<int64_t>(h) * w;
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          grid.data()[(static_cast<int64_t>(ch) * H + y0 + y) * W + x0 + x] =
              t.data()[(t.dim(0) == 1 ? 0 : ch) * tplane + static_cast<int64_t>(y) * w + x];
  }
  return grid;
}

}  // namespace vidrep
