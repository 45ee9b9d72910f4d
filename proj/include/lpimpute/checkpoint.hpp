#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lpimpute/neural.hpp"

namespace lpimpute::nn {

/// Text container of named arrays:
///
///   lpimpute-params 1 <array-count>
///   <name> <rank> <dim>...
///   <values, %.17g, space separated>
///
/// Values are written with 17 significant digits so load(save(p)) == p bit-exactly.
void save_params(std::ostream& out, const NetSpec& spec, const NetParams& params);

/// Throws DataError on a malformed container or shapes that disagree with `spec`.
NetParams load_params(std::istream& in, const NetSpec& spec);

/// NetSpec as `key value` lines (one `layer ...` line per layer), readable by read_spec.
void save_spec(std::ostream& out, const NetSpec& spec);
NetSpec load_spec(std::istream& in);

}  // namespace lpimpute::nn
