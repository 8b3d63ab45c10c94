#pragma once

// PNG (via libpng) and RIFF/WAVE persistence for masks, images and audio.

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "colseg/core/error.hpp"
#include "colseg/core/mask.hpp"
#include "colseg/core/media.hpp"

namespace colseg::io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error("cannot open " + path.string());
  return f;
}

// 8-bit PNG writer; channels is 1 (gray) or 3 (rgb).
inline void write_png8(const std::filesystem::path& path, int height, int width, int channels,
                       const std::vector<std::uint8_t>& interleaved) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r) {
    auto* row = const_cast<std::uint8_t*>(interleaved.data() +
                                          static_cast<std::size_t>(r) * width * channels);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads any 8-bit PNG, expanded to gray or RGB (alpha stripped).
inline std::vector<std::uint8_t> read_png8(const std::filesystem::path& path, int& height,
                                           int& width, int& channels) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("failed reading PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
      png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  channels = static_cast<int>(png_get_channels(png, info));
  out.resize(static_cast<std::size_t>(height) * width * channels);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r)
    rows[r] = out.data() + static_cast<std::size_t>(r) * width * channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void put_u32(std::ofstream& os, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  os.write(b, 4);
}
inline void put_u16(std::ofstream& os, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  os.write(b, 2);
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// Masks are stored as single-channel PNGs with values {0,255}.
inline void write_mask_png(const std::filesystem::path& path, const BinaryMask& m) {
  std::vector<std::uint8_t> buf(m.size());
  auto v = m.values();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = v[i] ? 255 : 0;
  detail::write_png8(path, m.height(), m.width(), 1, buf);
}

inline BinaryMask read_mask_png(const std::filesystem::path& path) {
  int h = 0, w = 0, ch = 0;
  auto buf = detail::read_png8(path, h, w, ch);
  BinaryMask m(h, w);
  auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = buf[i * ch] >= 128 ? 1 : 0;
  return m;
}

inline void write_image_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> buf(img.plane_size() * 3);
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(img.at(ch, r, c), 0.0f, 1.0f);
        buf[(static_cast<std::size_t>(r) * img.width() + c) * 3 + ch] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  detail::write_png8(path, img.height(), img.width(), 3, buf);
}

inline Image read_image_png(const std::filesystem::path& path) {
  int h = 0, w = 0, ch = 0;
  auto buf = detail::read_png8(path, h, w, ch);
  Image img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int k = 0; k < 3; ++k) {
        const int src = ch == 1 ? 0 : k;
        img.at(k, r, c) = buf[(static_cast<std::size_t>(r) * w + c) * ch + src] / 255.0f;
      }
  return img;
}

// Mono 32-bit float WAV.
inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string());
  const auto n = static_cast<std::uint32_t>(clip.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate()));
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + n * 4);
  os.write("WAVEfmt ", 8);
  detail::put_u32(os, 16);
  detail::put_u16(os, 3);  // IEEE float
  detail::put_u16(os, 1);
  detail::put_u32(os, rate);
  detail::put_u32(os, rate * 4);
  detail::put_u16(os, 4);
  detail::put_u16(os, 32);
  os.write("data", 4);
  detail::put_u32(os, n * 4);
  os.write(reinterpret_cast<const char*>(clip.samples().data()),
           static_cast<std::streamsize>(n * 4));
}

// Reads PCM16 or float32 WAV; multi-channel input is averaged to mono.
inline AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), {});
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path.string() + " is not a RIFF/WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t len = detail::get_u32(chunk + 4);
    if (pos + 8 + len > bytes.size()) throw FormatError("truncated WAV chunk in " + path.string());
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      format = detail::get_u16(chunk + 8);
      channels = detail::get_u16(chunk + 10);
      rate = detail::get_u32(chunk + 12);
      bits = detail::get_u16(chunk + 22);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (channels == 0 || rate == 0) throw FormatError("WAV data before fmt chunk");
      const std::uint8_t* data = chunk + 8;
      std::vector<float> samples;
      if (format == 1 && bits == 16) {
        const std::size_t frames = len / (2u * channels);
        samples.resize(frames);
        for (std::size_t i = 0; i < frames; ++i) {
          double acc = 0.0;
          for (int c = 0; c < channels; ++c)
            acc += static_cast<std::int16_t>(detail::get_u16(data + (i * channels + c) * 2)) /
                   32768.0;
          samples[i] = static_cast<float>(acc / channels);
        }
      } else if (format == 3 && bits == 32) {
        const std::size_t frames = len / (4u * channels);
        samples.resize(frames);
        for (std::size_t i = 0; i < frames; ++i) {
          double acc = 0.0;
          for (int c = 0; c < channels; ++c) {
            float v;
            std::memcpy(&v, data + (i * channels + c) * 4, 4);
            acc += v;
          }
          samples[i] = static_cast<float>(acc / channels);
        }
      } else {
        throw FormatError("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits)");
      }
      return AudioClip(std::move(samples), rate);
    }
    pos += 8 + len + (len & 1);
  }
  throw FormatError("WAV file without data chunk: " + path.string());
}

}  // namespace colseg::io
