#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "balloonseg/rng.hpp"

namespace bseg {

/// Books with fewer pages than this are pooled into one stratum.
inline constexpr std::size_t kMinBookPages = 7;

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per-stratum train count: ratio * n rounded half up.
inline std::size_t stratum_train_count(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
}

/// Splits sample indices by book: each book (small books pooled together)
/// contributes round-half-up(ratio * n) pages to train, chosen by a seeded
/// shuffle. Output index lists are sorted.
inline SplitIndices stratified_split(const std::vector<std::string>& book_ids, double ratio, std::uint64_t seed) {
  if (book_ids.empty()) throw std::invalid_argument("stratified_split: no samples");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("stratified_split: ratio must lie in (0,1]");
  std::map<std::string, std::vector<std::size_t>> books;
  for (std::size_t i = 0; i < book_ids.size(); ++i) books[book_ids[i]].push_back(i);

  std::map<std::string, std::vector<std::size_t>> strata;
  for (auto& [book, idx] : books) {
    // The leading NUL keeps the pooled key from colliding with a real book id.
    const std::string key = idx.size() < kMinBookPages ? std::string("\0pooled", 7) : book;
    auto& s = strata[key];
    s.insert(s.end(), idx.begin(), idx.end());
  }

  SplitIndices out;
  for (auto& [key, idx] : strata) {
    std::sort(idx.begin(), idx.end());
    std::mt19937_64 rng(derive_seed(seed, key));
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_train = std::min(idx.size(), stratum_train_count(idx.size(), ratio));
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

/// Convenience overload for any sample type with a `book_id` member.
template <typename Sample>
std::pair<std::vector<Sample>, std::vector<Sample>> stratified_split(const std::vector<Sample>& samples, double ratio,
                                                                     std::uint64_t seed) {
  std::vector<std::string> books;
  for (const auto& s : samples) books.push_back(s.book_id);
  const auto idx = stratified_split(books, ratio, seed);
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (auto i : idx.train) out.first.push_back(samples[i]);
  for (auto i : idx.val) out.second.push_back(samples[i]);
  return out;
}

}  // namespace bseg
