#include "dws/exact_rank.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dws {

namespace {

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("integer elimination overflowed int64");
  return r;
}

std::int64_t checked_sub(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_sub_overflow(a, b, &r)) throw std::overflow_error("integer elimination overflowed int64");
  return r;
}

// a*x - b*y, dropping zeros
SparseRow combine(std::int64_t a, const SparseRow& x, std::int64_t b, const SparseRow& y) {
  SparseRow out;
  out.reserve(x.size() + y.size());
  std::size_t i = 0, j = 0;
  while (i < x.size() || j < y.size()) {
    std::uint32_t col;
    std::int64_t v;
    if (j == y.size() || (i < x.size() && x[i].first < y[j].first)) {
      col = x[i].first;
      v = checked_mul(a, x[i++].second);
    } else if (i == x.size() || y[j].first < x[i].first) {
      col = y[j].first;
      v = checked_sub(0, checked_mul(b, y[j++].second));
    } else {
      col = x[i].first;
      v = checked_sub(checked_mul(a, x[i++].second), checked_mul(b, y[j++].second));
    }
    if (v != 0) out.emplace_back(col, v);
  }
  return out;
}

void make_primitive(SparseRow& row) {
  std::int64_t g = 0;
  for (const auto& [c, v] : row) g = std::gcd(g, v);
  if (row.front().second < 0) g = -g;
  if (g != 1)
    for (auto& [c, v] : row) v /= g;
}

}  // namespace

IntegerEliminator::IntegerEliminator(std::size_t columns) : pivots_(columns) {}

bool IntegerEliminator::add_row(SparseRow row) {
  std::sort(row.begin(), row.end());
  SparseRow merged;
  for (const auto& e : row) {
    if (e.first >= pivots_.size()) throw std::out_of_range("row entry beyond column count");
    if (!merged.empty() && merged.back().first == e.first)
      merged.back().second += e.second;
    else
      merged.push_back(e);
  }
  std::erase_if(merged, [](const auto& e) { return e.second == 0; });
  row = std::move(merged);

  while (!row.empty()) {
    make_primitive(row);
    const auto lead = row.front().first;
    auto& pivot = pivots_[lead];
    if (pivot.empty()) {
      pivot = std::move(row);
      ++rank_;
      return true;
    }
    const std::int64_t a = row.front().second, b = pivot.front().second;
    const std::int64_t g = std::gcd(a, b);
    row = combine(b / g, row, a / g, pivot);
  }
  return false;
}

bool IntegerEliminator::add_dense_row(const std::vector<std::int64_t>& row) {
  if (row.size() != pivots_.size()) throw std::invalid_argument("dense row length differs from column count");
  SparseRow s;
  for (std::size_t c = 0; c < row.size(); ++c)
    if (row[c] != 0) s.emplace_back(static_cast<std::uint32_t>(c), row[c]);
  return add_row(std::move(s));
}

namespace {

using u128 = unsigned __int128;
constexpr std::uint64_t P = ModularEliminator::kPrime;

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b) { return static_cast<std::uint64_t>(u128(a) * b % P); }

std::uint64_t powmod(std::uint64_t a, std::uint64_t e) {
  std::uint64_t r = 1;
  for (; e; e >>= 1, a = mulmod(a, a))
    if (e & 1) r = mulmod(r, a);
  return r;
}

std::uint64_t to_mod(std::int64_t v) {
  const auto m = static_cast<std::int64_t>(P);
  auto r = v % m;
  return static_cast<std::uint64_t>(r < 0 ? r + m : r);
}

}  // namespace

ModularEliminator::ModularEliminator(std::size_t columns) : pivots_(columns) {}

bool ModularEliminator::add_row(const SparseRow& row) {
  const std::size_t n = pivots_.size();
  std::vector<std::uint64_t> r(n, 0);
  for (const auto& [c, v] : row) {
    if (c >= n) throw std::out_of_range("row entry beyond column count");
    r[c] = (r[c] + to_mod(v)) % P;
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (r[c] == 0) continue;
    if (pivots_[c].empty()) {
      const auto inv = powmod(r[c], P - 2);
      for (std::size_t k = c; k < n; ++k) r[k] = mulmod(r[k], inv);
      pivots_[c] = std::move(r);
      ++rank_;
      return true;
    }
    const auto f = r[c];
    const auto& p = pivots_[c];
    for (std::size_t k = c; k < n; ++k)
      if (p[k]) r[k] = (r[k] + P - mulmod(f, p[k])) % P;
  }
  return false;
}

std::size_t integer_rank(const std::vector<std::vector<std::int64_t>>& rows) {
  if (rows.empty()) return 0;
  IntegerEliminator e(rows.front().size());
  for (const auto& r : rows) e.add_dense_row(r);
  return e.rank();
}

}  // namespace dws
