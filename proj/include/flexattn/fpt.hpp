// Copyright 2026 The flexattn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// FPT v1 tensor container.
//
// A file is a sequence of records. Each record is
//   8 bytes   magic "FLEXFPT1"
//   4 bytes   header length L, unsigned little-endian
//   L bytes   UTF-8 JSON header, keys in this order:
//             {"version":1,"name":...,"dtype":"f32",
//              "byte_order":"little-endian","layout":"row-major",
//              "shape":[heads,rows,cols],"payload_bytes":...,
//              "checksum":"crc32:xxxxxxxx"}
//   payload   heads*rows*cols IEEE-754 binary32 values, little-endian,
//             row-major, CRC-32 (zlib polynomial) as recorded in the header.
// A workload file holds three records named "q", "k" and "v".

#ifndef FLEXATTN_FPT_HPP_
#define FLEXATTN_FPT_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexattn/tensor.hpp"

namespace flexattn {

inline constexpr char kFptMagic[8] = {'F', 'L', 'E', 'X', 'F', 'P', 'T', '1'};
inline constexpr int kFptVersion = 1;

class FptError : public std::runtime_error {
 public:
  enum class Kind {
    kIo,
    kBadMagic,
    kMalformedHeader,
    kHeaderValidation,
    kTruncatedPayload,
    kChecksumMismatch,
    kNonFinite,
  };
  FptError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// A stack of equally shaped heads: shape [heads, rows, cols].
struct TensorRecord {
  std::string name;
  std::vector<Tensor2D> heads;
};

std::uint32_t crc32_of(std::span<const std::byte> bytes);

// Serialized bytes of one record.
std::vector<std::byte> encode_record(const TensorRecord& record);

// Writes to a temporary sibling and renames it over `path`.
void save_tensors(const std::filesystem::path& path,
                  std::span<const TensorRecord> records);
std::vector<TensorRecord> load_tensors(const std::filesystem::path& path);
std::vector<TensorRecord> decode_records(std::span<const std::byte> bytes);

// CRC-32 of every payload in the file, chained in record order.
std::uint32_t payload_digest(std::span<const TensorRecord> records);

// Writes `contents` atomically (temporary file, then rename).
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::byte> contents);
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& contents);

}  // namespace flexattn

#endif  // FLEXATTN_FPT_HPP_
