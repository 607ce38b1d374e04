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

// On-disk container for quantized and full-precision tensors.
//
// All integers and floats little-endian. Layout:
//
//   header:  magic "QSVW" (4) | version u8 | tensor count u32
//   record:  name_len u16 | name bytes (UTF-8)
//          | rank u32 | dims u32 x rank
//          | scheme u8 (0 = uniform, 1 = pot, 255 = fp32)
//          | bits u8 (2..8, or 32 for fp32 records)
//          | alpha f32 | mu f32 | sigma f32
//          | payload crc32 u32
//          | payload
//
// Quantized payloads hold level codes packed `bits` bits each, LSB-first
// within bytes, final byte zero-padded: ceil(n * bits / 8) bytes. Codes are
// indices into the ascending level set and must stay below 2^bits - 1 (the
// top code value is reserved). fp32 payloads are raw IEEE-754 floats,
// 4 * n bytes. Level values are recomputed from (scheme, bits, alpha) at
// load time, never stored.

#ifndef QSV_PACKFILE_HPP
#define QSV_PACKFILE_HPP

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsv/quantizer.hpp"

namespace qsv {

inline constexpr char kPackMagic[4] = {'Q', 'S', 'V', 'W'};
inline constexpr uint8_t kPackVersion = 1;
inline constexpr uint8_t kSchemeFp32 = 255;
inline constexpr size_t kPackHeaderBytes = 9;
// scheme + bits + alpha/mu/sigma + crc32
inline constexpr size_t kRecordFixedBytes = 18;

class PackError : public std::runtime_error {
 public:
  PackError(const std::string& msg, uint64_t offset)
      : std::runtime_error(msg + " (offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  uint64_t offset;
};

struct TensorRecord {
  std::string name;
  std::vector<int> shape;
  uint8_t scheme = kSchemeFp32;
  uint8_t bits = 32;
  float alpha = 0.0f;
  float mu = 0.0f;
  float sigma = 1.0f;
  std::vector<uint8_t> codes;  // quantized records
  std::vector<float> floats;   // fp32 records

  bool is_fp32() const { return scheme == kSchemeFp32; }
  int64_t num_elements() const;

  static TensorRecord quantized(std::string name, const QuantizedTensor& q);
  static TensorRecord fp32(std::string name, std::vector<int> shape,
                           std::vector<float> values);
  // Reconstructs level values from (scheme, bits, alpha); fp32 passthrough.
  std::vector<float> dequantized() const;
};

uint32_t crc32(std::span<const uint8_t> data);

// ceil(n * bits / 8) for quantized records, 4n for fp32.
size_t payload_bytes(int64_t num_elements, int bits, bool fp32);
size_t record_bytes(size_t name_len, int rank, size_t payload);

std::vector<uint8_t> pack_codes(std::span<const uint8_t> codes, int bits);
std::vector<uint8_t> unpack_codes(std::span<const uint8_t> bytes, int bits,
                                  int64_t count);

// Serializes records; write is atomic (temp file + rename). Returns bytes
// written, which equals the sum of header and record sizes exactly.
uint64_t write_pack(const std::string& path,
                    const std::vector<TensorRecord>& records);

struct UnpackOptions {
  // Disabled only by fault-injection tests that inspect corrupt payloads.
  bool verify_crc = true;
};

std::vector<TensorRecord> read_pack(const std::string& path,
                                    const UnpackOptions& opts = {});

}  // namespace qsv

#endif  // QSV_PACKFILE_HPP
