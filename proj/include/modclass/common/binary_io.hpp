#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace modclass {

// A file does not follow the expected binary layout.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian primitive encoding on top of an ostream.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out_.write(bytes.data(), sizeof(T));
  }

  void put_bytes(std::span<const char> bytes) { out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); }

  void put_floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    } else {
      for (float v : values) put(v);
    }
  }

  // u16 byte length followed by the UTF-8 bytes.
  void put_string16(const std::string& s) {
    if (s.size() > 0xFFFF) throw std::invalid_argument("string too long for u16 length prefix");
    put(static_cast<std::uint16_t>(s.size()));
    put_bytes(s);
  }

  bool good() const { return out_.good(); }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    std::array<char, sizeof(T)> bytes;
    read(bytes.data(), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }

  void get_floats(std::span<float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      read(reinterpret_cast<char*>(values.data()), values.size() * 4);
    } else {
      for (float& v : values) v = get<float>();
    }
  }

  std::string get_string(std::size_t n) {
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  std::string get_string16() { return get_string(get<std::uint16_t>()); }

 private:
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(what_ + ": unexpected end of file");
  }

  std::istream& in_;
  std::string what_;
};

}  // namespace modclass
