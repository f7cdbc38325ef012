/*
 * Copyright (c) The arkv authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

namespace arkv::detail {

// Little-endian primitives, independent of host byte order.

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline void put_f32s(std::ostream& os, std::span<const float> xs) {
  for (float x : xs) put_u32(os, std::bit_cast<std::uint32_t>(x));
}

/// Returns false on a short read.
inline bool get_u32(std::istream& is, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline bool get_f32s(std::istream& is, std::span<float> xs) {
  for (float& x : xs) {
    std::uint32_t u = 0;
    if (!get_u32(is, u)) return false;
    x = std::bit_cast<float>(u);
  }
  return true;
}

}  // namespace arkv::detail
