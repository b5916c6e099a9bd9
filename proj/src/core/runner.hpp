#pragma once

#include "core/config.hpp"

namespace mppm {

// Executes the configured job end to end, writing every artifact under
// cfg.out_dir. A manifest.txt is written as `running` before work starts and
// finalized as `complete` or `failed` (with the error) afterwards; failures
// still propagate to the caller.
void run(const RunConfig& cfg);

}  // namespace mppm
