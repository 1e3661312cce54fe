#pragma once

#include <functional>

namespace flow4dsr {

/// Worker cap: min(hardware_concurrency, FLOW4DSR_THREADS env var if set).
int max_threads();

/// Run fn(i) for i in [0, n). Work is split into contiguous index chunks;
/// results that depend on evaluation order are the caller's responsibility
/// (use per-index output slots and reduce in index order for determinism).
void parallel_for(int n, const std::function<void(int)>& fn);

} // namespace flow4dsr
