#include "nlfs/multiindex.hpp"

#include <algorithm>

#include "nlfs/errors.hpp"

namespace nlfs {

MultiIndex::MultiIndex(std::vector<int> entries) : e_(std::move(entries)) {
  for (int v : e_)
    if (v < 0) throw ConfigError("MultiIndex: negative entry");
}

MultiIndex::MultiIndex(std::initializer_list<int> entries)
    : MultiIndex(std::vector<int>(entries)) {}

MultiIndex MultiIndex::zeros(int len) {
  if (len <= 0) throw ConfigError("MultiIndex: length must be positive");
  return MultiIndex(std::vector<int>(static_cast<std::size_t>(len), 0));
}

MultiIndex MultiIndex::unit(int len, int slot) {
  MultiIndex a = zeros(len);
  if (slot < 0 || slot >= len) throw ConfigError("MultiIndex::unit: slot out of range");
  a.e_[static_cast<std::size_t>(slot)] = 1;
  return a;
}

int MultiIndex::order() const {
  int s = 0;
  for (int v : e_) s += v;
  return s;
}

bool MultiIndex::is_binary() const {
  for (int v : e_)
    if (v > 1) return false;
  return true;
}

bool MultiIndex::leq(const MultiIndex& other) const {
  if (size() != other.size()) throw ConfigError("MultiIndex: length mismatch");
  for (int i = 0; i < size(); ++i)
    if (e_[static_cast<std::size_t>(i)] > other[i]) return false;
  return true;
}

MultiIndex MultiIndex::plus(const MultiIndex& other) const {
  if (size() != other.size()) throw ConfigError("MultiIndex: length mismatch");
  std::vector<int> r = e_;
  for (int i = 0; i < size(); ++i) r[static_cast<std::size_t>(i)] += other[i];
  return MultiIndex(std::move(r));
}

MultiIndex MultiIndex::minus(const MultiIndex& other) const {
  if (!other.leq(*this)) throw ConfigError("MultiIndex::minus: result would be negative");
  std::vector<int> r = e_;
  for (int i = 0; i < size(); ++i) r[static_cast<std::size_t>(i)] -= other[i];
  return MultiIndex(std::move(r));
}

std::vector<int> MultiIndex::support() const {
  std::vector<int> s;
  for (int i = 0; i < size(); ++i)
    if (e_[static_cast<std::size_t>(i)] != 0) s.push_back(i);
  return s;
}

std::string MultiIndex::to_string() const {
  std::string s = "(";
  for (int i = 0; i < size(); ++i) {
    if (i) s += ',';
    s += std::to_string(e_[static_cast<std::size_t>(i)]);
  }
  s += ')';
  return s;
}

std::int64_t factorial(int n) {
  if (n < 0) throw ConfigError("factorial: negative argument");
  if (n > 20) throw ConfigError("factorial: argument too large for int64");
  std::int64_t r = 1;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}

std::int64_t multi_factorial(const MultiIndex& alpha) {
  std::int64_t r = 1;
  for (int v : alpha.entries()) r *= factorial(v);
  return r;
}

std::int64_t binomial(const MultiIndex& alpha, const MultiIndex& beta) {
  if (!beta.leq(alpha)) throw ConfigError("binomial: requires beta <= alpha");
  std::int64_t r = 1;
  for (int i = 0; i < alpha.size(); ++i) {
    const int a = alpha[i], b = beta[i];
    r *= factorial(a) / (factorial(b) * factorial(a - b));
  }
  return r;
}

std::int64_t multinomial(const MultiIndex& beta, std::span<const MultiIndex> parts) {
  MultiIndex sum = MultiIndex::zeros(beta.size());
  for (const auto& p : parts) {
    if (p.is_zero()) throw ConfigError("multinomial: zero part");
    sum = sum.plus(p);
  }
  if (sum != beta) throw ConfigError("multinomial: parts do not sum to beta");
  std::int64_t r = multi_factorial(beta);
  for (const auto& p : parts) r /= multi_factorial(p);
  return r;
}

std::int64_t multinomial_weight(const MultiIndex& alpha, const MultiIndex& beta,
                                std::span<const MultiIndex> parts) {
  if (alpha.order() > 12)
    throw ConfigError("multinomial_weight: |alpha| > 12 would overflow downstream products");
  return binomial(alpha, beta) * multinomial(beta, parts);
}

namespace {

void enumerate_rec(int len, int remaining, std::vector<int>& cur,
                   std::vector<MultiIndex>& out) {
  const int pos = static_cast<int>(cur.size());
  if (pos == len - 1) {
    cur.push_back(remaining);
    out.emplace_back(cur);
    cur.pop_back();
    return;
  }
  for (int v = 0; v <= remaining; ++v) {
    cur.push_back(v);
    enumerate_rec(len, remaining - v, cur, out);
    cur.pop_back();
  }
}

}  // namespace

std::vector<MultiIndex> indices_with_order(int len, int order) {
  if (len <= 0) throw ConfigError("indices_with_order: length must be positive");
  if (order < 0) return {};
  std::vector<MultiIndex> out;
  std::vector<int> cur;
  enumerate_rec(len, order, cur, out);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<MultiIndex> indices_up_to_order(int len, int max_order) {
  std::vector<MultiIndex> out;
  for (int k = 0; k <= max_order; ++k) {
    auto level = indices_with_order(len, k);
    out.insert(out.end(), level.begin(), level.end());
  }
  return out;
}

std::vector<MultiIndex> strict_lower_indices(const MultiIndex& alpha) {
  std::vector<MultiIndex> out;
  std::vector<int> cur(static_cast<std::size_t>(alpha.size()), 0);
  // Odometer over the box [0, alpha], skipping 0 and alpha itself.
  while (true) {
    int i = 0;
    for (; i < alpha.size(); ++i) {
      if (cur[static_cast<std::size_t>(i)] < alpha[i]) {
        ++cur[static_cast<std::size_t>(i)];
        for (int j = 0; j < i; ++j) cur[static_cast<std::size_t>(j)] = 0;
        break;
      }
    }
    if (i == alpha.size()) break;
    MultiIndex b{std::vector<int>(cur)};
    if (!b.is_zero() && b != alpha) out.push_back(std::move(b));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace nlfs
