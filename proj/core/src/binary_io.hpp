// Copyright 2026 The udfup Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "udfup/error.hpp"

namespace udfup::detail {

// Little-endian hosts only; checkpoints are not meant to cross architectures.
template <typename T>
void write_pod(std::ostream& out, const T& value) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  static_assert(std::is_trivially_copyable_v<T>);
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw DataError("truncated binary stream at byte " +
                    std::to_string(static_cast<long long>(in.tellg())));
  }
  return value;
}

inline void write_doubles(std::ostream& out, const double* data,
                          std::size_t n) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::istream& in, double* data, std::size_t n) {
  if (!in.read(reinterpret_cast<char*>(data),
               static_cast<std::streamsize>(n * sizeof(double)))) {
    throw DataError("truncated parameter block");
  }
}

inline void write_magic(std::ostream& out, const char (&magic)[9],
                        std::uint32_t version) {
  out.write(magic, 8);
  write_pod(out, version);
}

inline void expect_magic(std::istream& in, const char (&magic)[9],
                         std::uint32_t version, const char* what) {
  char buf[8];
  if (!in.read(buf, 8) || std::string(buf, 8) != std::string(magic, 8)) {
    throw DataError(std::string("not a ") + what + " file");
  }
  const auto v = read_pod<std::uint32_t>(in);
  if (v != version) {
    throw DataError(std::string("unsupported ") + what + " format version " +
                    std::to_string(v));
  }
}

}  // namespace udfup::detail
