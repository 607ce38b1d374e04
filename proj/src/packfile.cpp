// Copyright 2026 The QSV Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qsv/packfile.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace qsv {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

// Bounds-checked little-endian reader that tracks its byte offset for
// corruption diagnostics.
class Reader {
 public:
  Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}

  uint64_t offset() const { return pos_; }

  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::span<const uint8_t> bytes(size_t n) {
    need(n);
    std::span<const uint8_t> s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == size_; }

 private:
  void need(size_t n) {
    if (pos_ + n > size_)
      throw PackError("truncated packfile", pos_);
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

const uint32_t* crc_table() {
  static uint32_t table[256];
  static bool built = false;
  if (!built) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
      table[i] = c;
    }
    built = true;
  }
  return table;
}

}  // namespace

uint32_t crc32(std::span<const uint8_t> data) {
  const uint32_t* table = crc_table();
  uint32_t c = 0xffffffffu;
  for (uint8_t b : data) c = table[(c ^ b) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

int64_t TensorRecord::num_elements() const {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

TensorRecord TensorRecord::quantized(std::string name,
                                     const QuantizedTensor& q) {
  TensorRecord r;
  r.name = std::move(name);
  r.shape = q.shape;
  r.scheme = static_cast<uint8_t>(q.config.scheme);
  r.bits = static_cast<uint8_t>(q.config.bits);
  r.alpha = q.config.alpha;
  r.mu = q.config.mu;
  r.sigma = q.config.sigma;
  r.codes = q.codes;
  return r;
}

TensorRecord TensorRecord::fp32(std::string name, std::vector<int> shape,
                                std::vector<float> values) {
  TensorRecord r;
  r.name = std::move(name);
  r.shape = std::move(shape);
  r.floats = std::move(values);
  return r;
}

std::vector<float> TensorRecord::dequantized() const {
  if (is_fp32()) return floats;
  QuantLevels levels = make_levels(static_cast<QuantScheme>(scheme), alpha,
                                   bits);
  std::vector<float> out(static_cast<size_t>(num_elements()));
  dequantize_values(codes, levels, mu, sigma, out);
  return out;
}

size_t payload_bytes(int64_t num_elements, int bits, bool fp32) {
  if (fp32) return static_cast<size_t>(num_elements) * 4;
  return static_cast<size_t>((num_elements * bits + 7) / 8);
}

size_t record_bytes(size_t name_len, int rank, size_t payload) {
  return 2 + name_len + 4 * (1 + static_cast<size_t>(rank)) +
         kRecordFixedBytes + payload;
}

std::vector<uint8_t> pack_codes(std::span<const uint8_t> codes, int bits) {
  if (bits < 2 || bits > 8)
    throw std::invalid_argument("pack_codes: bits must be in 2..8");
  const uint8_t reserved = static_cast<uint8_t>((1 << bits) - 1);
  std::vector<uint8_t> out(
      payload_bytes(static_cast<int64_t>(codes.size()), bits, false), 0);
  for (size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= reserved)
      throw std::invalid_argument("pack_codes: code exceeds level count");
    const size_t bit = i * static_cast<size_t>(bits);
    const size_t byte = bit / 8;
    const int shift = static_cast<int>(bit % 8);
    out[byte] |= static_cast<uint8_t>(codes[i] << shift);
    if (shift + bits > 8)
      out[byte + 1] |= static_cast<uint8_t>(codes[i] >> (8 - shift));
  }
  return out;
}

std::vector<uint8_t> unpack_codes(std::span<const uint8_t> bytes, int bits,
                                  int64_t count) {
  std::vector<uint8_t> codes(static_cast<size_t>(count));
  const uint8_t mask = static_cast<uint8_t>((1 << bits) - 1);
  for (int64_t i = 0; i < count; ++i) {
    const size_t bit = static_cast<size_t>(i) * static_cast<size_t>(bits);
    const size_t byte = bit / 8;
    const int shift = static_cast<int>(bit % 8);
    unsigned v = bytes[byte] >> shift;
    if (shift + bits > 8) v |= static_cast<unsigned>(bytes[byte + 1])
                               << (8 - shift);
    codes[static_cast<size_t>(i)] = static_cast<uint8_t>(v & mask);
  }
  return codes;
}

uint64_t write_pack(const std::string& path,
                    const std::vector<TensorRecord>& records) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kPackMagic, kPackMagic + 4);
  buf.push_back(kPackVersion);
  put_u32(buf, static_cast<uint32_t>(records.size()));

  for (const TensorRecord& r : records) {
    if (r.name.size() > 0xffff)
      throw std::invalid_argument("write_pack: tensor name too long");
    std::vector<uint8_t> payload;
    if (r.is_fp32()) {
      if (static_cast<int64_t>(r.floats.size()) != r.num_elements())
        throw std::invalid_argument("write_pack: fp32 payload size mismatch");
      payload.reserve(r.floats.size() * 4);
      for (float f : r.floats) put_f32(payload, f);
    } else {
      if (r.bits < 2 || r.bits > 8)
        throw std::invalid_argument("write_pack: invalid bitwidth");
      if (static_cast<int64_t>(r.codes.size()) != r.num_elements())
        throw std::invalid_argument("write_pack: code count mismatch");
      payload = pack_codes(r.codes, r.bits);
    }
    put_u16(buf, static_cast<uint16_t>(r.name.size()));
    buf.insert(buf.end(), r.name.begin(), r.name.end());
    put_u32(buf, static_cast<uint32_t>(r.shape.size()));
    for (int d : r.shape) put_u32(buf, static_cast<uint32_t>(d));
    buf.push_back(r.scheme);
    buf.push_back(r.bits);
    put_f32(buf, r.alpha);
    put_f32(buf, r.mu);
    put_f32(buf, r.sigma);
    put_u32(buf, crc32(payload));
    buf.insert(buf.end(), payload.begin(), payload.end());
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_pack: cannot open " + tmp);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write_pack: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("write_pack: rename failed for " + path);
  return buf.size();
}

std::vector<TensorRecord> read_pack(const std::string& path,
                                    const UnpackOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pack: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  Reader rd(buf.data(), buf.size());

  if (buf.size() < kPackHeaderBytes) throw PackError("truncated header", 0);
  auto magic = rd.bytes(4);
  if (std::memcmp(magic.data(), kPackMagic, 4) != 0)
    throw PackError("bad magic", 0);
  const uint8_t version = rd.u8();
  if (version != kPackVersion)
    throw PackError("unsupported version " + std::to_string(version), 4);
  const uint32_t count = rd.u32();

  std::vector<TensorRecord> records;
  records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const uint16_t name_len = rd.u16();
    auto name = rd.bytes(name_len);
    r.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    const uint32_t rank = rd.u32();
    if (rank > 8) throw PackError("implausible tensor rank", rd.offset() - 4);
    int64_t n = rank == 0 ? 0 : 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = rd.u32();
      if (dim == 0) throw PackError("zero extent", rd.offset() - 4);
      r.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    r.scheme = rd.u8();
    r.bits = rd.u8();
    const bool fp32 = r.scheme == kSchemeFp32;
    if (!fp32 && (r.scheme > 1 || r.bits < 2 || r.bits > 8))
      throw PackError("invalid scheme/bitwidth", rd.offset() - 2);
    r.alpha = rd.f32();
    r.mu = rd.f32();
    r.sigma = rd.f32();
    const uint32_t stored_crc = rd.u32();
    const uint64_t payload_off = rd.offset();
    auto payload = rd.bytes(payload_bytes(n, r.bits, fp32));
    if (opts.verify_crc && crc32(payload) != stored_crc)
      throw PackError("payload checksum mismatch for '" + r.name + "'",
                      payload_off);
    if (fp32) {
      r.floats.resize(static_cast<size_t>(n));
      std::memcpy(r.floats.data(), payload.data(), payload.size());
    } else {
      r.codes = unpack_codes(payload, r.bits, n);
      const uint8_t reserved = static_cast<uint8_t>((1 << r.bits) - 1);
      if (opts.verify_crc)
        for (uint8_t c : r.codes)
          if (c >= reserved)
            throw PackError("reserved code value in '" + r.name + "'",
                            payload_off);
    }
    records.push_back(std::move(r));
  }
  if (!rd.at_end()) throw PackError("trailing bytes", rd.offset());
  return records;
}

}  // namespace qsv
