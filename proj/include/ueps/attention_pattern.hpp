#pragma once

#include <cstddef>
#include <string>
#include <utility>

namespace ueps::vit {

enum class PatternKind { full, row_band };

/// Which keys each query may attend to on an R_p x C_p patch grid whose
/// tokens are numbered row-major. row_band(n) admits every key whose patch
/// row is within n of the query's row, across all columns.
struct AttentionPattern {
  std::size_t rows = 0;
  std::size_t cols = 0;
  PatternKind kind = PatternKind::full;
  std::size_t halfwidth = 0;

  static AttentionPattern full(std::size_t rows, std::size_t cols) { return {rows, cols, PatternKind::full, 0}; }
  static AttentionPattern row_band(std::size_t rows, std::size_t cols, std::size_t n) {
    return {rows, cols, PatternKind::row_band, n};
  }

  std::size_t tokens() const { return rows * cols; }

  bool admits(std::size_t query, std::size_t key) const {
    if (kind == PatternKind::full) return true;
    const std::size_t rq = query / cols;
    const std::size_t rk = key / cols;
    return (rq > rk ? rq - rk : rk - rq) <= halfwidth;
  }

  /// Admitted keys of `query` as a contiguous half-open token range.
  std::pair<std::size_t, std::size_t> key_range(std::size_t query) const {
    if (kind == PatternKind::full) return {0, tokens()};
    const std::size_t r = query / cols;
    const std::size_t lo = r > halfwidth ? r - halfwidth : 0;
    const std::size_t hi = std::min(rows - 1, r + halfwidth);
    return {lo * cols, (hi + 1) * cols};
  }

  /// True when the band reaches every row, i.e. the pattern equals full.
  bool covers_all() const { return kind == PatternKind::full || halfwidth + 1 >= rows; }

  std::string name() const {
    return kind == PatternKind::full ? "full" : "row-band(" + std::to_string(halfwidth) + ")";
  }
};

}  // namespace ueps::vit
