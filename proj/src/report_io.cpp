#include "lpimpute/report_io.hpp"

#include <ostream>

#include <json.hpp>

#include "lpimpute/curve.hpp"
#include "lpimpute/format.hpp"

namespace lpimpute {

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "iteration,rmse\n";
  for (const auto& p : curve) out << p.iteration << ',' << format_double(p.rmse) << '\n';
}

}  // namespace lpimpute

namespace lpimpute::eval {

void write_rmse_csv(std::ostream& out, const BenchmarkReport& r) {
  out << "dataset,method,max_attempts,rmse_mean,rmse_std\n";
  for (const auto& row : r.rmse) {
    out << row.dataset << ',' << row.method << ',' << row.max_attempts << ',' << format_double(row.rmse_mean) << ','
        << format_double(row.rmse_std) << '\n';
  }
}

void write_spearman_csv(std::ostream& out, const BenchmarkReport& r) {
  out << "dataset,method,spearman_rho\n";
  for (const auto& row : r.spearman) {
    out << row.dataset << ',' << row.method << ',' << (row.rho ? format_double(*row.rho) : "NA") << '\n';
  }
}

void write_sparsity_csv(std::ostream& out, const BenchmarkReport& r) {
  out << "dataset,max_attempts,sparsity\n";
  for (const auto& row : r.sparsity) {
    out << row.dataset << ',' << row.max_attempts << ',' << format_double(row.sparsity) << '\n';
  }
}

void write_curves_csv(std::ostream& out, const BenchmarkReport& r) {
  out << "dataset,method,iteration,rmse\n";
  for (const auto& row : r.curves)
    for (const auto& p : row.curve) {
      out << row.dataset << ',' << row.method << ',' << p.iteration << ',' << format_double(p.rmse) << '\n';
    }
}

void write_report_json(std::ostream& out, const BenchmarkReport& r) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["plan"] = {{"cycles", r.plan.cycles}, {"folds", r.plan.folds}, {"base_seed", r.plan.base_seed}};
  doc["attempts"] = r.attempts;
  doc["rmse_std_definition"] = "sample standard deviation over all cycles x folds runs";
  auto& rmse = doc["rmse"] = ordered_json::array();
  for (const auto& row : r.rmse) {
    rmse.push_back({{"dataset", row.dataset},
                    {"method", row.method},
                    {"max_attempts", row.max_attempts},
                    {"rmse_mean", row.rmse_mean},
                    {"rmse_std", row.rmse_std},
                    {"runs", row.runs}});
  }
  auto& sp = doc["spearman"] = ordered_json::array();
  for (const auto& row : r.spearman) {
    sp.push_back({{"dataset", row.dataset},
                  {"method", row.method},
                  {"spearman_rho", row.rho ? ordered_json(*row.rho) : ordered_json(nullptr)}});
  }
  auto& sparsity = doc["sparsity"] = ordered_json::array();
  for (const auto& row : r.sparsity) {
    sparsity.push_back({{"dataset", row.dataset}, {"max_attempts", row.max_attempts}, {"sparsity", row.sparsity}});
  }
  auto& curves = doc["curves"] = ordered_json::array();
  for (const auto& row : r.curves) {
    ordered_json pts = ordered_json::array();
    for (const auto& p : row.curve) pts.push_back({p.iteration, p.rmse});
    curves.push_back({{"dataset", row.dataset}, {"method", row.method}, {"points", pts}});
  }
  auto& failures = doc["failures"] = ordered_json::array();
  for (const auto& f : r.failures) {
    failures.push_back({{"dataset", f.dataset},
                        {"method", f.method},
                        {"max_attempts", f.max_attempts},
                        {"cycle", f.cycle},
                        {"fold", f.fold},
                        {"kind", f.kind},
                        {"message", f.message}});
  }
  out << doc.dump(2) << '\n';
}

}  // namespace lpimpute::eval
