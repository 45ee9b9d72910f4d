#pragma once

#include <iosfwd>

#include "lpimpute/eval.hpp"

namespace lpimpute::eval {

/// dataset,method,max_attempts,rmse_mean,rmse_std
void write_rmse_csv(std::ostream& out, const BenchmarkReport& r);
/// dataset,method,spearman_rho ("NA" when undefined)
void write_spearman_csv(std::ostream& out, const BenchmarkReport& r);
/// dataset,max_attempts,sparsity
void write_sparsity_csv(std::ostream& out, const BenchmarkReport& r);
/// dataset,method,iteration,rmse
void write_curves_csv(std::ostream& out, const BenchmarkReport& r);
/// Hierarchical JSON document holding every table plus the plan and failures.
void write_report_json(std::ostream& out, const BenchmarkReport& r);

}  // namespace lpimpute::eval
