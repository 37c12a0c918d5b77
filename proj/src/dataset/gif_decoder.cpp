#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "retseg/errors.hpp"
#include "retseg/image_io.hpp"

namespace retseg::io {
namespace {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    if (pos_ >= bytes_.size()) throw IoError("gif: unexpected end of stream");
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (u8() << 8));
  }
  void skip(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("gif: unexpected end of stream");
    pos_ += n;
  }
  // Concatenated payload of a data sub-block chain.
  std::vector<std::uint8_t> sub_blocks() {
    std::vector<std::uint8_t> out;
    for (std::uint8_t len = u8(); len != 0; len = u8()) {
      if (pos_ + len > bytes_.size()) throw IoError("gif: truncated data sub-block");
      out.insert(out.end(), bytes_.begin() + pos_, bytes_.begin() + pos_ + len);
      pos_ += len;
    }
    return out;
  }
  void skip_sub_blocks() {
    for (std::uint8_t len = u8(); len != 0; len = u8()) skip(len);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

using Palette = std::vector<std::array<std::uint8_t, 3>>;

Palette read_palette(ByteReader& in, int size_bits) {
  Palette palette(std::size_t{1} << (size_bits + 1));
  for (auto& entry : palette) {
    entry[0] = in.u8();
    entry[1] = in.u8();
    entry[2] = in.u8();
  }
  return palette;
}

std::vector<std::uint8_t> lzw_decode(const std::vector<std::uint8_t>& data, int min_code_size,
                                     std::size_t expected) {
  if (min_code_size < 2 || min_code_size > 8) throw IoError("gif: bad LZW minimum code size");
  constexpr int kMaxCodes = 4096;
  std::array<std::uint16_t, kMaxCodes> prefix{};
  std::array<std::uint8_t, kMaxCodes> suffix{};
  std::array<std::uint8_t, kMaxCodes> first{};
  std::array<std::uint16_t, kMaxCodes> length{};

  const int clear = 1 << min_code_size;
  const int end_of_info = clear + 1;
  for (int i = 0; i < clear; ++i) {
    suffix[i] = first[i] = static_cast<std::uint8_t>(i);
    length[i] = 1;
  }

  std::vector<std::uint8_t> out;
  out.reserve(expected);
  std::vector<std::uint8_t> scratch;

  int code_size = min_code_size + 1;
  int next = clear + 2;
  int prev = -1;
  std::uint32_t bit_buffer = 0;
  int bit_count = 0;
  std::size_t byte_pos = 0;

  auto emit = [&](int code) {
    scratch.resize(length[code]);
    for (int c = code, i = length[code] - 1; i >= 0; --i, c = prefix[c]) scratch[i] = suffix[c];
    out.insert(out.end(), scratch.begin(), scratch.end());
  };

  while (out.size() < expected) {
    while (bit_count < code_size) {
      if (byte_pos >= data.size()) return out;  // tolerate missing end-of-info
      bit_buffer |= static_cast<std::uint32_t>(data[byte_pos++]) << bit_count;
      bit_count += 8;
    }
    const int code = static_cast<int>(bit_buffer & ((1u << code_size) - 1));
    bit_buffer >>= code_size;
    bit_count -= code_size;

    if (code == clear) {
      code_size = min_code_size + 1;
      next = clear + 2;
      prev = -1;
      continue;
    }
    if (code == end_of_info) break;
    if (prev < 0) {
      if (code >= clear) throw IoError("gif: first code after clear is not a literal");
      emit(code);
      prev = code;
      continue;
    }
    std::uint8_t k;
    if (code < next) {
      emit(code);
      k = first[code];
    } else if (code == next) {
      k = first[prev];
      emit(prev);
      out.push_back(k);
    } else {
      throw IoError("gif: LZW code out of range");
    }
    if (next < kMaxCodes) {
      prefix[next] = static_cast<std::uint16_t>(prev);
      suffix[next] = k;
      first[next] = first[prev];
      length[next] = static_cast<std::uint16_t>(length[prev] + 1);
      ++next;
      if (next == (1 << code_size) && code_size < 12) ++code_size;
    }
    prev = code;
  }
  return out;
}

// Row order of an interlaced frame: passes start at 0,4,2,1 with strides 8,8,4,2.
std::vector<int> interlaced_rows(int height) {
  std::vector<int> rows;
  rows.reserve(height);
  constexpr std::array<std::pair<int, int>, 4> passes{{{0, 8}, {4, 8}, {2, 4}, {1, 2}}};
  for (auto [start, step] : passes) {
    for (int y = start; y < height; y += step) rows.push_back(y);
  }
  return rows;
}

}  // namespace

cv::Mat decode_gif(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  std::string magic;
  for (int i = 0; i < 6; ++i) magic.push_back(static_cast<char>(in.u8()));
  if (magic != "GIF87a" && magic != "GIF89a") throw IoError("gif: bad signature");

  const int screen_w = in.u16();
  const int screen_h = in.u16();
  const std::uint8_t packed = in.u8();
  const std::uint8_t background = in.u8();
  in.u8();  // pixel aspect ratio
  Palette global;
  if (packed & 0x80) global = read_palette(in, packed & 0x07);

  while (true) {
    const std::uint8_t block = in.u8();
    if (block == 0x21) {
      in.u8();  // extension label
      in.skip_sub_blocks();
    } else if (block == 0x2C) {
      const int left = in.u16();
      const int top = in.u16();
      const int w = in.u16();
      const int h = in.u16();
      const std::uint8_t flags = in.u8();
      Palette local;
      if (flags & 0x80) local = read_palette(in, flags & 0x07);
      const Palette& palette = local.empty() ? global : local;
      if (palette.empty()) throw IoError("gif: frame has no color table");
      const int min_code = in.u8();
      const auto data = in.sub_blocks();
      const auto indices = lzw_decode(data, min_code, static_cast<std::size_t>(w) * h);
      if (indices.size() < static_cast<std::size_t>(w) * h) throw IoError("gif: truncated image data");

      cv::Mat canvas(screen_h, screen_w, CV_8UC3);
      const auto& bg = palette[background < palette.size() ? background : 0];
      canvas.setTo(cv::Scalar(bg[0], bg[1], bg[2]));
      std::vector<int> rows(h);
      if (flags & 0x40) {
        rows = interlaced_rows(h);
      } else {
        for (int y = 0; y < h; ++y) rows[y] = y;
      }
      for (int r = 0; r < h; ++r) {
        const int y = top + rows[r];
        if (y < 0 || y >= screen_h) continue;
        auto* dst = canvas.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
          const int cx = left + x;
          if (cx < 0 || cx >= screen_w) continue;
          const std::uint8_t idx = indices[static_cast<std::size_t>(r) * w + x];
          if (idx >= palette.size()) throw IoError("gif: palette index out of range");
          dst[cx] = cv::Vec3b(palette[idx][0], palette[idx][1], palette[idx][2]);
        }
      }
      return canvas;
    } else if (block == 0x3B) {
      throw IoError("gif: no image frame");
    } else {
      throw IoError("gif: unknown block type");
    }
  }
}

}  // namespace retseg::io
