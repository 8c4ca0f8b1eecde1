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

#include "flexattn/fpt.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace flexattn {
namespace {

using Json = nlohmann::ordered_json;

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::byte>(v >> s));
}

std::uint32_t get_u32(std::span<const std::byte> in) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) {
    v |= static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(in[b]))
         << (8 * b);
  }
  return v;
}

std::vector<std::byte> payload_bytes(const TensorRecord& record) {
  std::vector<std::byte> out;
  std::size_t total = 0;
  for (const auto& h : record.heads) total += h.size();
  out.reserve(total * 4);
  for (const auto& h : record.heads) {
    for (float x : h.data()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  return out;
}

FptError header_error(const std::string& what) {
  return FptError(FptError::Kind::kHeaderValidation, "FPT header: " + what);
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::byte> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t len = std::min(kChunk, bytes.size() - off);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off),
                static_cast<uInt>(len));
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::byte> encode_record(const TensorRecord& record) {
  if (record.heads.empty()) throw std::invalid_argument("record has no heads");
  const std::size_t rows = record.heads[0].rows();
  const std::size_t cols = record.heads[0].cols();
  for (const auto& h : record.heads) {
    if (h.rows() != rows || h.cols() != cols) {
      throw std::invalid_argument("record heads differ in shape");
    }
  }
  const std::vector<std::byte> payload = payload_bytes(record);
  Json header;
  header["version"] = kFptVersion;
  header["name"] = record.name;
  header["dtype"] = "f32";
  header["byte_order"] = "little-endian";
  header["layout"] = "row-major";
  header["shape"] = {record.heads.size(), rows, cols};
  header["payload_bytes"] = payload.size();
  header["checksum"] = "crc32:" + hex32(crc32_of(payload));
  const std::string text = header.dump();

  std::vector<std::byte> out;
  out.reserve(sizeof(kFptMagic) + 4 + text.size() + payload.size());
  for (char c : kFptMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::vector<TensorRecord> decode_records(std::span<const std::byte> bytes) {
  std::vector<TensorRecord> records;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < sizeof(kFptMagic) ||
        std::memcmp(bytes.data() + pos, kFptMagic, sizeof(kFptMagic)) != 0) {
      throw FptError(FptError::Kind::kBadMagic,
                     "FPT: bad magic at offset " + std::to_string(pos));
    }
    pos += sizeof(kFptMagic);
    if (bytes.size() - pos < 4) {
      throw FptError(FptError::Kind::kMalformedHeader,
                     "FPT: missing header length");
    }
    const std::uint32_t header_len = get_u32(bytes.subspan(pos, 4));
    pos += 4;
    if (bytes.size() - pos < header_len) {
      throw FptError(FptError::Kind::kMalformedHeader,
                     "FPT: header extends past end of file");
    }
    const std::string text(reinterpret_cast<const char*>(bytes.data() + pos),
                           header_len);
    pos += header_len;

    Json header;
    try {
      header = Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw FptError(FptError::Kind::kMalformedHeader,
                     std::string("FPT: malformed header JSON: ") + e.what());
    }
    if (!header.is_object()) {
      throw FptError(FptError::Kind::kMalformedHeader,
                     "FPT: header is not a JSON object");
    }

    TensorRecord record;
    std::size_t heads = 0, rows = 0, cols = 0, payload_len = 0;
    std::string checksum;
    try {
      if (header.at("version").get<int>() != kFptVersion) {
        throw header_error("unsupported version");
      }
      if (header.at("dtype").get<std::string>() != "f32") {
        throw header_error("dtype must be f32");
      }
      if (header.at("byte_order").get<std::string>() != "little-endian") {
        throw header_error("byte_order must be little-endian");
      }
      if (header.at("layout").get<std::string>() != "row-major") {
        throw header_error("layout must be row-major");
      }
      const auto& shape = header.at("shape");
      if (!shape.is_array() || shape.size() != 3) {
        throw header_error("shape must be [heads, rows, cols]");
      }
      heads = shape[0].get<std::size_t>();
      rows = shape[1].get<std::size_t>();
      cols = shape[2].get<std::size_t>();
      payload_len = header.at("payload_bytes").get<std::size_t>();
      checksum = header.at("checksum").get<std::string>();
      record.name = header.value("name", std::string());
    } catch (const nlohmann::json::exception& e) {
      throw header_error(e.what());
    }
    if (heads == 0 || rows == 0 || cols == 0) {
      throw header_error("shape entries must be positive");
    }
    if (heads * rows * cols * 4 != payload_len) {
      throw header_error("shape [" + std::to_string(heads) + ", " +
                         std::to_string(rows) + ", " + std::to_string(cols) +
                         "] does not match payload_bytes " +
                         std::to_string(payload_len));
    }
    if (checksum.size() != 14 || checksum.rfind("crc32:", 0) != 0) {
      throw header_error("checksum must be crc32:xxxxxxxx");
    }
    if (bytes.size() - pos < payload_len) {
      throw FptError(FptError::Kind::kTruncatedPayload,
                     "FPT: truncated payload (expected " +
                         std::to_string(payload_len) + " bytes, found " +
                         std::to_string(bytes.size() - pos) + ")");
    }
    const auto payload = bytes.subspan(pos, payload_len);
    pos += payload_len;
    if (checksum.substr(6) != hex32(crc32_of(payload))) {
      throw FptError(FptError::Kind::kChecksumMismatch,
                     "FPT: checksum mismatch in record '" + record.name + "'");
    }

    std::size_t off = 0;
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<float> data(rows * cols);
      for (float& x : data) {
        x = std::bit_cast<float>(get_u32(payload.subspan(off, 4)));
        off += 4;
      }
      Tensor2D t(rows, cols, std::move(data));
      if (!t.all_finite()) {
        throw FptError(FptError::Kind::kNonFinite,
                       "FPT: non-finite value in record '" + record.name + "'");
      }
      record.heads.push_back(std::move(t));
    }
    records.push_back(std::move(record));
  }
  if (records.empty()) {
    throw FptError(FptError::Kind::kBadMagic, "FPT: empty file");
  }
  return records;
}

void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::byte> contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw FptError(FptError::Kind::kIo, "cannot open " + tmp.string());
    }
    out.write(reinterpret_cast<const char*>(contents.data()),
              static_cast<std::streamsize>(contents.size()));
    if (!out) throw FptError(FptError::Kind::kIo, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FptError(FptError::Kind::kIo, "cannot rename onto " + path.string());
  }
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& contents) {
  write_file_atomic(path, std::span<const std::byte>(
                              reinterpret_cast<const std::byte*>(contents.data()),
                              contents.size()));
}

void save_tensors(const std::filesystem::path& path,
                  std::span<const TensorRecord> records) {
  std::vector<std::byte> bytes;
  for (const auto& r : records) {
    const auto encoded = encode_record(r);
    bytes.insert(bytes.end(), encoded.begin(), encoded.end());
  }
  write_file_atomic(path, bytes);
}

std::vector<TensorRecord> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FptError(FptError::Kind::kIo, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  return decode_records(std::span<const std::byte>(
      reinterpret_cast<const std::byte*>(raw.data()), raw.size()));
}

std::uint32_t payload_digest(std::span<const TensorRecord> records) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& r : records) {
    const auto payload = payload_bytes(r);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data()),
                static_cast<uInt>(payload.size()));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace flexattn
