#pragma once

// Versioned binary container:
//   "KATSUMCK" | u32 version | u64 payload size | payload | u64 fnv1a(payload)
// The payload is a sorted list of named entries, each either a UTF-8 string or
// a row-major float64 tensor. Integers are little-endian.

#include <bit>
#include <cstring>
#include <map>
#include <string>

#include <Eigen/Dense>

#include "katsum/common.hpp"

namespace katsum {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class Archive {
 public:
  static constexpr char magic[9] = "KATSUMCK";
  static constexpr std::uint32_t version = 1;

  using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  std::map<std::string, std::string> strings;
  std::map<std::string, Tensor> tensors;

  const std::string& string(const std::string& key) const {
    auto it = strings.find(key);
    if (it == strings.end()) throw format_error("checkpoint has no entry '" + key + "'");
    return it->second;
  }

  const Tensor& tensor(const std::string& key) const {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw format_error("checkpoint has no tensor '" + key + "'");
    return it->second;
  }

  std::string serialize() const {
    std::string payload;
    put<std::uint64_t>(payload, strings.size());
    for (const auto& [k, v] : strings) {
      put_str(payload, k);
      put_str(payload, v);
    }
    put<std::uint64_t>(payload, tensors.size());
    for (const auto& [k, t] : tensors) {
      put_str(payload, k);
      put<std::uint64_t>(payload, static_cast<std::uint64_t>(t.rows()));
      put<std::uint64_t>(payload, static_cast<std::uint64_t>(t.cols()));
      payload.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(double));
    }
    std::string out(magic, 8);
    put<std::uint32_t>(out, version);
    put<std::uint64_t>(out, payload.size());
    out += payload;
    put<std::uint64_t>(out, fnv1a(payload));
    return out;
  }

  /// Validates magic, version, length and checksum before decoding anything.
  static Archive parse(const std::string& bytes, const std::string& name = "checkpoint") {
    if (bytes.size() < 20 || bytes.compare(0, 8, magic) != 0) throw format_error(name + ": not a checkpoint file");
    std::size_t pos = 8;
    const auto ver = get<std::uint32_t>(bytes, pos, name);
    if (ver != version)
      throw format_error(name + ": checkpoint version " + std::to_string(ver) + " unsupported (expected " +
                         std::to_string(version) + ")");
    const auto size = get<std::uint64_t>(bytes, pos, name);
    if (bytes.size() != pos + size + 8) throw format_error(name + ": truncated or corrupt checkpoint (size mismatch)");
    const std::string payload = bytes.substr(pos, size);
    pos += size;
    if (get<std::uint64_t>(bytes, pos, name) != fnv1a(payload))
      throw format_error(name + ": corrupt checkpoint (checksum mismatch)");

    Archive a;
    std::size_t p = 0;
    const auto ns = get<std::uint64_t>(payload, p, name);
    for (std::uint64_t i = 0; i < ns; ++i) {
      auto k = get_str(payload, p, name);
      a.strings.emplace(std::move(k), get_str(payload, p, name));
    }
    const auto nt = get<std::uint64_t>(payload, p, name);
    for (std::uint64_t i = 0; i < nt; ++i) {
      auto k = get_str(payload, p, name);
      const auto rows = get<std::uint64_t>(payload, p, name);
      const auto cols = get<std::uint64_t>(payload, p, name);
      const std::size_t nbytes = rows * cols * sizeof(double);
      if (p + nbytes > payload.size()) throw format_error(name + ": corrupt tensor '" + k + "'");
      Tensor t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      std::memcpy(t.data(), payload.data() + p, nbytes);
      p += nbytes;
      a.tensors.emplace(std::move(k), std::move(t));
    }
    if (p != payload.size()) throw format_error(name + ": trailing bytes in checkpoint payload");
    return a;
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static Archive load(const std::string& path) { return parse(read_file(path), path); }

 private:
  template <typename U>
  static void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
  }
  static void put_str(std::string& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out += s;
  }
  template <typename U>
  static U get(const std::string& in, std::size_t& pos, const std::string& name) {
    if (pos + sizeof(U) > in.size()) throw format_error(name + ": truncated checkpoint");
    U v;
    std::memcpy(&v, in.data() + pos, sizeof(U));
    pos += sizeof(U);
    return v;
  }
  static std::string get_str(const std::string& in, std::size_t& pos, const std::string& name) {
    const auto n = get<std::uint64_t>(in, pos, name);
    if (pos + n > in.size()) throw format_error(name + ": truncated checkpoint string");
    std::string s = in.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace katsum
