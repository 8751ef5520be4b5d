#pragma once

namespace bec {

// Execution policy of the data-parallel kernels. `serial` is the reference
// implementation the parallel one is tested against.
enum class Exec { serial, parallel };

}  // namespace bec
