#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "iwsm/error.hpp"
#include "iwsm/numerics.hpp"

namespace iwsm {

/// N x d matrix of samples in physical coordinates plus provenance.
struct SampleSet {
  Points points;
  std::uint64_t seed = 0;
  std::string source;
  std::string benchmark;

  std::size_t size() const noexcept { return static_cast<std::size_t>(points.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(points.cols()); }
};

inline std::string format_real(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw IoError("format_real: conversion failed");
  return std::string(buf, end);
}

/// Header `dim_0,...,dim_{d-1}`, one row per sample, shortest round-trip
/// decimal representation of each double.
inline void write_csv(const std::filesystem::path& path, const Points& points) {
  std::ostringstream os;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    if (j) os << ',';
    os << "dim_" << j;
  }
  os << '\n';
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      if (j) os << ',';
      os << format_real(points(i, j));
    }
    os << '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  const std::string s = os.str();
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline Points read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV: " + path.string());
  std::size_t dim = 1;
  for (char c : line)
    if (c == ',') ++dim;
  if (line.rfind("dim_0", 0) != 0) throw IoError("CSV header must start with dim_0: " + path.string());
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t fields = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(p, comma, v);
      if (ec != std::errc{} || ptr != comma)
        throw IoError("malformed CSV value in " + path.string() + " at row " + std::to_string(rows + 1));
      values.push_back(v);
      ++fields;
      p = comma + 1;
      if (comma == end) break;
    }
    if (fields != dim)
      throw IoError("CSV row " + std::to_string(rows + 1) + " has " + std::to_string(fields) +
                    " fields, expected " + std::to_string(dim));
    ++rows;
  }
  Points pts(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < dim; ++j) pts(i, j) = values[i * dim + j];
  return pts;
}

}  // namespace iwsm
