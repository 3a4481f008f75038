#pragma once

#include "fairstg/dataset.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fairstg {

// MAPE values are percentages; -1 is the sentinel for "every entry masked".
constexpr double kMapeSentinel = -1.0;

struct HorizonMetrics {
    double mae = 0.0;
    double mape = 0.0;
    double rmse = 0.0;
    double mae_var = 0.0;
    double mape_var = 0.0;
};

struct SubgroupStats {
    double mae = 0.0;
    double mae_var = 0.0;
};

struct FairnessReport {
    std::map<int, HorizonMetrics> horizons; // requested steps that fit within h
    HorizonMetrics overall;                 // across all h steps
    SubgroupStats easy30;
    SubgroupStats challenging30;
    std::optional<double> delta;
    std::optional<double> recognizer_accuracy;
    std::vector<double> per_node_mape; // percent, aligned with node_ids
    std::vector<std::string> node_ids;
    std::string mode;
    std::string ablation;
};

// Metrics at the k-th prediction step (1-indexed), per benchmark convention.
HorizonMetrics step_metrics(const Matrix& pred, const Matrix& truth, int horizon,
                            double mape_epsilon);

// Metrics across the full horizon; the variance terms are over per-sample
// full-horizon errors.
HorizonMetrics overall_metrics(const Matrix& pred, const Matrix& truth, double mape_epsilon);

std::pair<SubgroupStats, SubgroupStats> subgroup_breakdown(const Vector& per_sample_errors,
                                                           double fraction = 0.3);

double delta_ratio(double mae_fair, double mae_base);

std::vector<double> per_node_mape_percent(const Matrix& pred, const Matrix& truth,
                                          const std::vector<int>& node_index, int num_nodes,
                                          double mape_epsilon);

FairnessReport build_report(const Matrix& pred, const Matrix& truth,
                            const std::vector<int>& node_index,
                            const std::vector<std::string>& node_ids, double mape_epsilon,
                            const std::vector<int>& horizons = {3, 6, 12});

std::string report_to_json(const FairnessReport& report);
FairnessReport report_from_json_text(const std::string& text);
FairnessReport load_report(const std::string& path);
void save_report(const FairnessReport& report, const std::string& path);

// CSV of per-node MAPE as fractions: node_id[,lon,lat],mape[,mape_improvement].
void emit_error_map(const std::string& path, const FairnessReport& report,
                    const FairnessReport* baseline, const Matrix* coordinates);

} // namespace fairstg
