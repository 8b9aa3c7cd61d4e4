#pragma once

#include <cstddef>
#include <functional>

namespace sechyp {

/// Worker count used by parallel_for; 0 means hardware concurrency.
void set_default_threads(int n);
int default_threads();

/// Runs body(i) for i in [0, n). Items must write only to their own slot;
/// results are then independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace sechyp
