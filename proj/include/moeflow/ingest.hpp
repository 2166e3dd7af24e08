#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "moeflow/errors.hpp"

namespace moeflow {

// Multivariate series, one row per entity, entity-major storage.
struct RawSeries {
  std::vector<std::string> entity_names;
  std::vector<std::vector<double>> values;  // K rows, each length L_obs
  std::vector<std::uint8_t> labels;         // empty or length L_obs, 1 = anomalous

  std::size_t entities() const { return values.size(); }
  std::size_t length() const { return values.empty() ? 0 : values[0].size(); }
  bool has_labels() const { return !labels.empty(); }
};

// Sliding windows cut from a normalized series. windows is (N_w, K, T)
// row-major; a window is labeled anomalous if any covered point is.
struct WindowBatch {
  std::vector<double> windows;
  std::vector<std::uint8_t> window_labels;
  std::size_t count = 0;
  std::size_t entities = 0;
  int window_size = 0;
  int stride = 0;

  const double* window_ptr(std::size_t c) const {
    return windows.data() + c * entities * static_cast<std::size_t>(window_size);
  }
  std::size_t start_index(std::size_t c) const {
    return c * static_cast<std::size_t>(stride);
  }
};

namespace detail {

inline bool parse_double(std::string_view cell, double& out) {
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline std::string_view trim(std::string_view v) {
  while (!v.empty() && (v.front() == ' ' || v.front() == '\t' || v.front() == '\r'))
    v.remove_prefix(1);
  while (!v.empty() && (v.back() == ' ' || v.back() == '\t' || v.back() == '\r'))
    v.remove_suffix(1);
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return cells;
}

}  // namespace detail

// CSV: UTF-8, comma separated, header row naming entities, one time step per
// row, optional trailing "label" column of {0,1}. Column order is preserved
// as entity order.
inline RawSeries load_csv(const std::string& path) {
  if (!std::filesystem::exists(path))
    raise(ErrorKind::MissingFile, "no such file: " + path);
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) raise(ErrorKind::EmptyInput, "empty file: " + path);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB &&
      static_cast<unsigned char>(line[2]) == 0xBF)
    line.erase(0, 3);

  auto header = detail::split_csv_line(line);
  if (header.empty() || (header.size() == 1 && header[0].empty()))
    raise(ErrorKind::Parse, path + ": empty header row");

  RawSeries out;
  bool has_label_col = !header.empty() && header.back() == "label";
  const std::size_t k = header.size() - (has_label_col ? 1 : 0);
  if (k == 0) raise(ErrorKind::Parse, path + ": no entity columns");
  for (std::size_t i = 0; i < k; ++i) out.entity_names.emplace_back(header[i]);
  out.values.assign(k, {});

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      raise(ErrorKind::Parse, path + ":" + std::to_string(line_no) +
                                  ": expected " + std::to_string(header.size()) +
                                  " columns, got " + std::to_string(cells.size()));
    for (std::size_t i = 0; i < k; ++i) {
      double v;
      if (cells[i].empty() || !detail::parse_double(cells[i], v))
        raise(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": column " +
                                    std::to_string(i + 1) + " ('" +
                                    std::string(cells[i]) + "') is not a number");
      if (!std::isfinite(v))
        raise(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": column " +
                                    std::to_string(i + 1) + " is not finite");
      out.values[i].push_back(v);
    }
    if (has_label_col) {
      std::string_view cell = cells.back();
      if (cell == "0")
        out.labels.push_back(0);
      else if (cell == "1")
        out.labels.push_back(1);
      else
        raise(ErrorKind::Parse, path + ":" + std::to_string(line_no) +
                                    ": label must be 0 or 1, got '" +
                                    std::string(cell) + "'");
    }
  }
  if (out.length() == 0) raise(ErrorKind::EmptyInput, path + ": no data rows");
  return out;
}

// Per-entity z-score with population standard deviation and a 1e-8 floor for
// constant entities.
inline RawSeries zscore_normalize(const RawSeries& series) {
  constexpr double kStdFloor = 1e-8;
  if (series.length() < 2)
    raise(ErrorKind::InsufficientData,
          "z-score normalization needs at least 2 observations");
  RawSeries out = series;
  for (auto& row : out.values) {
    const double n = static_cast<double>(row.size());
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    const double denom = std::max(std::sqrt(var), kStdFloor);
    for (double& v : row) v = (v - mean) / denom;
  }
  return out;
}

// Window c covers [c*stride, c*stride + window); a trailing remainder shorter
// than the window is dropped.
inline WindowBatch slide_windows(const RawSeries& series, int window, int stride) {
  const std::size_t length = series.length();
  if (window <= 0 || stride < 1)
    raise(ErrorKind::Config, "window must be positive and stride >= 1");
  if (static_cast<std::size_t>(window) > length)
    raise(ErrorKind::InsufficientData,
          "window " + std::to_string(window) + " exceeds series length " +
              std::to_string(length));
  const std::size_t k = series.entities();
  const std::size_t count = (length - static_cast<std::size_t>(window)) /
                                static_cast<std::size_t>(stride) +
                            1;
  WindowBatch out;
  out.count = count;
  out.entities = k;
  out.window_size = window;
  out.stride = stride;
  out.windows.resize(count * k * static_cast<std::size_t>(window));
  out.window_labels.assign(count, 0);
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t start = c * static_cast<std::size_t>(stride);
    for (std::size_t i = 0; i < k; ++i) {
      const double* src = series.values[i].data() + start;
      double* dst = out.windows.data() +
                    (c * k + i) * static_cast<std::size_t>(window);
      std::copy(src, src + window, dst);
    }
    if (series.has_labels()) {
      for (int t = 0; t < window; ++t)
        if (series.labels[start + static_cast<std::size_t>(t)]) {
          out.window_labels[c] = 1;
          break;
        }
    }
  }
  return out;
}

// Contiguous temporal split; each part gets floor(ratio * L) observations and
// the last part absorbs the remainder.
inline std::vector<RawSeries> split_dataset(const RawSeries& series,
                                            const std::vector<double>& ratios) {
  if (ratios.size() < 2)
    raise(ErrorKind::Config, "split needs at least two ratios");
  double sum = 0.0;
  for (double r : ratios) {
    if (r <= 0.0) raise(ErrorKind::Config, "split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    raise(ErrorKind::Config, "split ratios must sum to 1");

  const std::size_t length = series.length();
  std::vector<std::size_t> sizes;
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < ratios.size(); ++i) {
    auto n = static_cast<std::size_t>(
        std::floor(ratios[i] * static_cast<double>(length)));
    sizes.push_back(n);
    used += n;
  }
  sizes.push_back(length - used);

  std::vector<RawSeries> parts;
  std::size_t offset = 0;
  for (std::size_t n : sizes) {
    RawSeries part;
    part.entity_names = series.entity_names;
    part.values.reserve(series.entities());
    for (const auto& row : series.values)
      part.values.emplace_back(row.begin() + static_cast<std::ptrdiff_t>(offset),
                               row.begin() + static_cast<std::ptrdiff_t>(offset + n));
    if (series.has_labels())
      part.labels.assign(series.labels.begin() + static_cast<std::ptrdiff_t>(offset),
                         series.labels.begin() + static_cast<std::ptrdiff_t>(offset + n));
    parts.push_back(std::move(part));
    offset += n;
  }
  return parts;
}

}  // namespace moeflow
