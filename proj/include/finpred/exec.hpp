#pragma once

namespace finpred {

/// Execution policy for the data-parallel kernels. Both paths produce
/// bitwise-identical results; Serial is the reference.
enum class Exec { Serial, Parallel };

}  // namespace finpred
