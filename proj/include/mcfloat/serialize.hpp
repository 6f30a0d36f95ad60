#pragma once

/// JSON blob format for MCTensors. Component data is stored as hex bit
/// patterns of the target format (component index fastest-varying, elements
/// row-major), so round-trips are bit-exact by construction.

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcfloat/mctensor.hpp"

namespace mcf {

using Json = nlohmann::json;

namespace detail {

template <class P>
std::string bits_to_hex(double v) {
  char buf[2 * sizeof(typename P::bits_type) + 1];
  const auto bits = P::to_bits(v);
  std::snprintf(buf, sizeof buf, "%0*llx",
                static_cast<int>(2 * sizeof(typename P::bits_type)),
                static_cast<unsigned long long>(bits));
  return buf;
}

template <class P>
double hex_to_bits(const std::string& s) {
  const auto v = std::stoull(s, nullptr, 16);
  return P::from_bits(static_cast<typename P::bits_type>(v));
}

}  // namespace detail

template <class P>
Json mct_to_json(const MCTensor<P>& x) {
  Json j;
  j["format"] = "mct";
  j["version"] = 1;
  j["precision"] = P::name;
  j["shape"] = x.shape();
  j["nc"] = x.nc();
  std::vector<std::string> data;
  data.reserve(x.raw().size());
  for (const double v : x.raw()) data.push_back(detail::bits_to_hex<P>(v));
  j["data"] = std::move(data);
  return j;
}

template <class P>
MCTensor<P> mct_from_json(const Json& j) {
  if (!j.is_object() || j.value("format", "") != "mct") {
    throw std::invalid_argument("mct_from_json: not an mct blob");
  }
  if (j.value("precision", "") != P::name) {
    throw std::invalid_argument("mct_from_json: precision tag '" +
                                j.value("precision", std::string()) +
                                "' does not match requested " + P::name);
  }
  const Shape shape = j.at("shape").get<Shape>();
  const int nc = j.at("nc").get<int>();
  MCTensor<P> out(shape, nc);
  const auto& data = j.at("data");
  if (data.size() != out.raw().size()) {
    throw std::invalid_argument("mct_from_json: data length mismatch");
  }
  for (std::size_t i = 0; i < out.raw().size(); ++i) {
    out.raw()[i] = detail::hex_to_bits<P>(data[i].get<std::string>());
  }
  return out;
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

inline Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  Json j;
  is >> j;
  return j;
}

}  // namespace mcf
