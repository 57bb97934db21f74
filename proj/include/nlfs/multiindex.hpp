#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nlfs {

/// Multi-index in N_0^len. Two roles share this type: derivative orders
/// (len = grid dimension) and polarization slots of the linearization
/// cascade (len = number of boundary data).
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> entries);
  MultiIndex(std::initializer_list<int> entries);

  static MultiIndex zeros(int len);
  /// Unit index e_slot (0-based slot).
  static MultiIndex unit(int len, int slot);

  int size() const { return static_cast<int>(e_.size()); }
  /// |alpha| = sum of entries.
  int order() const;
  int operator[](int i) const { return e_[static_cast<std::size_t>(i)]; }

  bool is_zero() const { return order() == 0; }
  /// All entries in {0, 1}.
  bool is_binary() const;
  /// Componentwise <=.
  bool leq(const MultiIndex& other) const;
  MultiIndex plus(const MultiIndex& other) const;
  /// Requires other.leq(*this).
  MultiIndex minus(const MultiIndex& other) const;

  /// 0-based positions of nonzero entries.
  std::vector<int> support() const;
  const std::vector<int>& entries() const { return e_; }
  std::string to_string() const;  // "(1,0,2)"

  auto operator<=>(const MultiIndex&) const = default;

 private:
  std::vector<int> e_;
};

/// Exact n! as int64; throws for n > 20.
std::int64_t factorial(int n);
/// alpha! = product of entry factorials.
std::int64_t multi_factorial(const MultiIndex& alpha);
/// Componentwise product of binomial coefficients; requires beta <= alpha.
std::int64_t binomial(const MultiIndex& alpha, const MultiIndex& beta);
/// beta! / (parts_1! ... parts_l!) with parts summing to beta (checked).
std::int64_t multinomial(const MultiIndex& beta, std::span<const MultiIndex> parts);
/// binomial(alpha, beta) * multinomial(beta; parts): the integer weight of
/// one ordered tuple in the cascade source. Guards |alpha| > 12 against
/// overflow in downstream products.
std::int64_t multinomial_weight(const MultiIndex& alpha, const MultiIndex& beta,
                                std::span<const MultiIndex> parts);

/// All indices of length len with |alpha| == order, lexicographically sorted.
std::vector<MultiIndex> indices_with_order(int len, int order);
/// All indices of length len with 0 <= |alpha| <= max_order.
std::vector<MultiIndex> indices_up_to_order(int len, int max_order);
/// Nonzero beta with beta <= alpha and beta != alpha.
std::vector<MultiIndex> strict_lower_indices(const MultiIndex& alpha);

}  // namespace nlfs
