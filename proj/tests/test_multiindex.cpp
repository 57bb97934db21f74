#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "nlfs/errors.hpp"
#include "nlfs/multiindex.hpp"

using nlfs::MultiIndex;

TEST_CASE("factorials are exact") {
  CHECK(nlfs::factorial(0) == 1);
  CHECK(nlfs::factorial(1) == 1);
  CHECK(nlfs::factorial(5) == 120);
  CHECK(nlfs::factorial(12) == 479001600LL);
  CHECK(nlfs::factorial(20) == 2432902008176640000LL);
  CHECK_THROWS_AS(nlfs::factorial(21), nlfs::ConfigError);
  CHECK_THROWS_AS(nlfs::factorial(-1), nlfs::ConfigError);

  CHECK(nlfs::multi_factorial(MultiIndex{2, 1, 3}) == 2 * 1 * 6);
  CHECK(nlfs::multi_factorial(MultiIndex{0, 0}) == 1);
}

TEST_CASE("basic index algebra") {
  const MultiIndex a{2, 0, 1};
  CHECK(a.order() == 3);
  CHECK(a.size() == 3);
  CHECK_FALSE(a.is_binary());
  CHECK(MultiIndex{1, 0, 1}.is_binary());
  CHECK(MultiIndex{1, 0, 1}.leq(a));
  CHECK_FALSE(MultiIndex{0, 1, 0}.leq(a));
  CHECK(a.minus(MultiIndex{1, 0, 1}) == MultiIndex{1, 0, 0});
  CHECK_THROWS_AS(a.minus(MultiIndex{3, 0, 0}), nlfs::ConfigError);
  CHECK(a.plus(MultiIndex{0, 2, 0}) == MultiIndex{2, 2, 1});
  CHECK(a.support() == std::vector<int>{0, 2});
  CHECK(MultiIndex::unit(4, 2) == MultiIndex{0, 0, 1, 0});
  CHECK(MultiIndex::zeros(2).is_zero());
  CHECK_THROWS_AS((MultiIndex{1, -1}), nlfs::ConfigError);
}

// Oracle: independent odometer enumeration of the box [0, alpha].
static std::vector<MultiIndex> box_enumeration(const MultiIndex& alpha) {
  std::vector<MultiIndex> out;
  std::vector<int> cur(static_cast<std::size_t>(alpha.size()), 0);
  while (true) {
    out.emplace_back(std::vector<int>(cur));
    int i = 0;
    for (; i < alpha.size(); ++i) {
      if (cur[static_cast<std::size_t>(i)] < alpha[i]) {
        ++cur[static_cast<std::size_t>(i)];
        for (int j = 0; j < i; ++j) cur[static_cast<std::size_t>(j)] = 0;
        break;
      }
    }
    if (i == alpha.size()) break;
  }
  return out;
}

TEST_CASE("binomial sum over the sub-box equals 2^|alpha|") {
  const MultiIndex alpha{2, 1, 3};
  long long sum = 0;
  for (const auto& beta : box_enumeration(alpha)) sum += nlfs::binomial(alpha, beta);
  CHECK(sum == (1LL << alpha.order()));
}

TEST_CASE("multinomial ordered-tuple weights") {
  // beta = (2): split into two unit parts -> 2!/(1! 1!) = 2.
  const MultiIndex b1{2};
  const std::vector<MultiIndex> parts1{MultiIndex{1}, MultiIndex{1}};
  CHECK(nlfs::multinomial(b1, parts1) == 2);

  // beta = (1,1): each ordered split into distinct units has weight 1; the
  // two orderings together give the 2 of the symmetrized pair.
  const MultiIndex b2{1, 1};
  const std::vector<MultiIndex> parts2{MultiIndex{1, 0}, MultiIndex{0, 1}};
  CHECK(nlfs::multinomial(b2, parts2) == 1);

  // beta = (2,1) into ((1,0),(1,1)) -> (2! 1!)/(1! * 1! 1!) = 2.
  const MultiIndex b3{2, 1};
  const std::vector<MultiIndex> parts3{MultiIndex{1, 0}, MultiIndex{1, 1}};
  CHECK(nlfs::multinomial(b3, parts3) == 2);

  const std::vector<MultiIndex> bad{MultiIndex{1, 0}};
  CHECK_THROWS_AS(nlfs::multinomial(b3, bad), nlfs::ConfigError);
  const std::vector<MultiIndex> zero_part{MultiIndex{0, 0}, MultiIndex{2, 1}};
  CHECK_THROWS_AS(nlfs::multinomial(b3, zero_part), nlfs::ConfigError);
}

TEST_CASE("combined cascade weight and its overflow guard") {
  const MultiIndex alpha{2, 1};
  const MultiIndex beta{1, 1};
  const std::vector<MultiIndex> parts{MultiIndex{1, 0}, MultiIndex{0, 1}};
  // binom((2,1),(1,1)) = 2 * 1 = 2, multinomial = 1.
  CHECK(nlfs::multinomial_weight(alpha, beta, parts) == 2);

  const MultiIndex huge{7, 6};
  CHECK_THROWS_AS(nlfs::multinomial_weight(huge, beta, parts), nlfs::ConfigError);
}

TEST_CASE("order enumerations are complete, sorted, unique") {
  const auto level = nlfs::indices_with_order(3, 2);
  CHECK(level.size() == 6);  // C(2+3-1, 3-1)
  for (const auto& a : level) CHECK(a.order() == 2);
  std::set<MultiIndex> dedup(level.begin(), level.end());
  CHECK(dedup.size() == level.size());
  CHECK(std::is_sorted(level.begin(), level.end()));

  const auto all = nlfs::indices_up_to_order(2, 3);
  CHECK(all.size() == 1 + 2 + 3 + 4);

  const MultiIndex alpha{2, 1};
  const auto lower = nlfs::strict_lower_indices(alpha);
  CHECK(lower.size() == box_enumeration(alpha).size() - 2);
  for (const auto& b : lower) {
    CHECK(b.leq(alpha));
    CHECK_FALSE(b.is_zero());
    CHECK(b != alpha);
  }
}
