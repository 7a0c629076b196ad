// SPDX-License-Identifier: Apache-2.0
#include "smad/cer.hpp"

#include <algorithm>

namespace smad {

CerReport cer(const std::vector<int>& reference,
              const std::vector<int>& hypothesis) {
  const std::size_t n = reference.size(), m = hypothesis.size();
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& {
    return dp[i * (m + 1) + j];
  };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub =
          at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  CerReport r;
  r.ref_len = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) +
                        (reference[i - 1] == hypothesis[j - 1] ? 0u : 1u)) {
      if (reference[i - 1] != hypothesis[j - 1]) ++r.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  return r;
}

CerReport aggregate_cer(const std::vector<CerReport>& reports) {
  CerReport total;
  for (const auto& r : reports) {
    total.substitutions += r.substitutions;
    total.deletions += r.deletions;
    total.insertions += r.insertions;
    total.ref_len += r.ref_len;
  }
  return total;
}

}  // namespace smad
