#include "fairstg/evaluation.hpp"

#include "fairstg/csv.hpp"
#include "fairstg/errors.hpp"
#include "fairstg/objectives.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

namespace fairstg {

namespace {

using nlohmann::json;

double population_variance(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(xs.size());
}

void check_shapes(const Matrix& pred, const Matrix& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw DataError("prediction/truth shape mismatch");
    }
    if (pred.rows() < 1) throw DataError("empty prediction matrix");
}

json horizon_to_json(const HorizonMetrics& m) {
    return json{{"mae", m.mae},
                {"mape", m.mape},
                {"rmse", m.rmse},
                {"mae_var", m.mae_var},
                {"mape_var", m.mape_var}};
}

HorizonMetrics horizon_from_json(const json& j) {
    HorizonMetrics m;
    m.mae = j.at("mae").get<double>();
    m.mape = j.at("mape").get<double>();
    m.rmse = j.at("rmse").get<double>();
    m.mae_var = j.at("mae_var").get<double>();
    m.mape_var = j.at("mape_var").get<double>();
    return m;
}

} // namespace

HorizonMetrics step_metrics(const Matrix& pred, const Matrix& truth, int horizon,
                            double mape_epsilon) {
    check_shapes(pred, truth);
    if (horizon < 1 || horizon > pred.cols()) {
        throw ConfigError("horizon " + std::to_string(horizon) + " outside 1.." +
                          std::to_string(pred.cols()));
    }
    const Eigen::Index k = horizon - 1;
    HorizonMetrics out;
    std::vector<double> abs_errors;
    std::vector<double> mapes;
    abs_errors.reserve(static_cast<std::size_t>(pred.rows()));
    double sq_sum = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        double diff = pred(i, k) - truth(i, k);
        abs_errors.push_back(std::abs(diff));
        sq_sum += diff * diff;
        if (std::abs(truth(i, k)) >= mape_epsilon) {
            mapes.push_back(std::abs(diff) / std::abs(truth(i, k)) * 100.0);
        }
    }
    out.mae = std::accumulate(abs_errors.begin(), abs_errors.end(), 0.0) /
              static_cast<double>(abs_errors.size());
    out.rmse = std::sqrt(sq_sum / static_cast<double>(pred.rows()));
    out.mae_var = population_variance(abs_errors);
    if (mapes.empty()) {
        std::cerr << "warning: every truth value is below the MAPE mask at horizon "
                  << horizon << "; reporting sentinel\n";
        out.mape = kMapeSentinel;
        out.mape_var = kMapeSentinel;
    } else {
        out.mape = std::accumulate(mapes.begin(), mapes.end(), 0.0) /
                   static_cast<double>(mapes.size());
        out.mape_var = population_variance(mapes);
    }
    return out;
}

HorizonMetrics overall_metrics(const Matrix& pred, const Matrix& truth, double mape_epsilon) {
    check_shapes(pred, truth);
    HorizonMetrics out;
    Matrix diff = pred - truth;
    out.mae = diff.cwiseAbs().mean();
    out.rmse = std::sqrt(diff.array().square().mean());

    Vector sample_mae = per_sample_mae(pred, truth);
    std::vector<double> mae_list(sample_mae.data(), sample_mae.data() + sample_mae.size());
    out.mae_var = population_variance(mae_list);

    std::vector<double> entry_mapes;
    std::vector<double> sample_mapes;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        double acc = 0.0;
        int used = 0;
        for (Eigen::Index k = 0; k < pred.cols(); ++k) {
            if (std::abs(truth(i, k)) < mape_epsilon) continue;
            double m = std::abs(diff(i, k)) / std::abs(truth(i, k)) * 100.0;
            entry_mapes.push_back(m);
            acc += m;
            ++used;
        }
        if (used > 0) sample_mapes.push_back(acc / used);
    }
    if (entry_mapes.empty()) {
        std::cerr << "warning: every truth value is below the MAPE mask; reporting sentinel\n";
        out.mape = kMapeSentinel;
        out.mape_var = kMapeSentinel;
    } else {
        out.mape = std::accumulate(entry_mapes.begin(), entry_mapes.end(), 0.0) /
                   static_cast<double>(entry_mapes.size());
        out.mape_var = population_variance(sample_mapes);
    }
    return out;
}

std::pair<SubgroupStats, SubgroupStats> subgroup_breakdown(const Vector& per_sample_errors,
                                                           double fraction) {
    const int m = static_cast<int>(per_sample_errors.size());
    if (m < 4) throw DataError("subgroup breakdown needs at least 4 samples");
    if (!(fraction > 0.0 && fraction <= 0.5)) {
        throw ConfigError("subgroup fraction must be in (0,0.5]");
    }
    const int n = std::max(1, static_cast<int>(std::floor(fraction * m)));
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return per_sample_errors(a) < per_sample_errors(b);
    });
    auto stats_of = [&](int first, int count) {
        std::vector<double> xs;
        xs.reserve(static_cast<std::size_t>(count));
        for (int r = first; r < first + count; ++r) {
            xs.push_back(per_sample_errors(order[static_cast<std::size_t>(r)]));
        }
        SubgroupStats s;
        s.mae = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
        s.mae_var = population_variance(xs);
        return s;
    };
    return {stats_of(0, n), stats_of(m - n, n)};
}

double delta_ratio(double mae_fair, double mae_base) {
    if (mae_base <= 0.0) {
        std::cerr << "warning: base MAE is zero; delta undefined\n";
        return -1.0;
    }
    return mae_fair / mae_base;
}

std::vector<double> per_node_mape_percent(const Matrix& pred, const Matrix& truth,
                                          const std::vector<int>& node_index, int num_nodes,
                                          double mape_epsilon) {
    check_shapes(pred, truth);
    if (static_cast<Eigen::Index>(node_index.size()) != pred.rows()) {
        throw DataError("node_index length mismatch");
    }
    std::vector<double> acc(static_cast<std::size_t>(num_nodes), 0.0);
    std::vector<int> used(static_cast<std::size_t>(num_nodes), 0);
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        int node = node_index[static_cast<std::size_t>(i)];
        if (node < 0 || node >= num_nodes) throw DataError("node index out of range");
        for (Eigen::Index k = 0; k < pred.cols(); ++k) {
            if (std::abs(truth(i, k)) < mape_epsilon) continue;
            acc[static_cast<std::size_t>(node)] +=
                std::abs(pred(i, k) - truth(i, k)) / std::abs(truth(i, k)) * 100.0;
            ++used[static_cast<std::size_t>(node)];
        }
    }
    std::vector<double> out(static_cast<std::size_t>(num_nodes), kMapeSentinel);
    for (int n = 0; n < num_nodes; ++n) {
        if (used[static_cast<std::size_t>(n)] > 0) {
            out[static_cast<std::size_t>(n)] =
                acc[static_cast<std::size_t>(n)] / used[static_cast<std::size_t>(n)];
        }
    }
    return out;
}

FairnessReport build_report(const Matrix& pred, const Matrix& truth,
                            const std::vector<int>& node_index,
                            const std::vector<std::string>& node_ids, double mape_epsilon,
                            const std::vector<int>& horizons) {
    FairnessReport report;
    for (int k : horizons) {
        if (k >= 1 && k <= pred.cols()) {
            report.horizons[k] = step_metrics(pred, truth, k, mape_epsilon);
        }
    }
    report.overall = overall_metrics(pred, truth, mape_epsilon);
    Vector sample_mae = per_sample_mae(pred, truth);
    auto [easy, challenging] = subgroup_breakdown(sample_mae, 0.3);
    report.easy30 = easy;
    report.challenging30 = challenging;
    report.per_node_mape = per_node_mape_percent(pred, truth, node_index,
                                                 static_cast<int>(node_ids.size()),
                                                 mape_epsilon);
    report.node_ids = node_ids;
    return report;
}

std::string report_to_json(const FairnessReport& report) {
    json j;
    json horizons = json::object();
    for (const auto& [k, m] : report.horizons) horizons[std::to_string(k)] = horizon_to_json(m);
    j["horizons"] = horizons;
    j["overall"] = horizon_to_json(report.overall);
    j["easy30"] = json{{"mae", report.easy30.mae}, {"mae_var", report.easy30.mae_var}};
    j["challenging30"] =
        json{{"mae", report.challenging30.mae}, {"mae_var", report.challenging30.mae_var}};
    if (report.delta) j["delta"] = *report.delta;
    if (report.recognizer_accuracy) j["recognizer_accuracy"] = *report.recognizer_accuracy;
    j["per_node_mape"] = report.per_node_mape;
    j["node_ids"] = report.node_ids;
    j["mode"] = report.mode;
    j["ablation"] = report.ablation;
    return j.dump(2);
}

FairnessReport report_from_json_text(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw DataError("corrupt report JSON");
    FairnessReport report;
    for (auto& [key, value] : j.at("horizons").items()) {
        report.horizons[std::stoi(key)] = horizon_from_json(value);
    }
    report.overall = horizon_from_json(j.at("overall"));
    report.easy30 = {j.at("easy30").at("mae").get<double>(),
                     j.at("easy30").at("mae_var").get<double>()};
    report.challenging30 = {j.at("challenging30").at("mae").get<double>(),
                            j.at("challenging30").at("mae_var").get<double>()};
    if (j.contains("delta")) report.delta = j.at("delta").get<double>();
    if (j.contains("recognizer_accuracy")) {
        report.recognizer_accuracy = j.at("recognizer_accuracy").get<double>();
    }
    report.per_node_mape = j.at("per_node_mape").get<std::vector<double>>();
    report.node_ids = j.at("node_ids").get<std::vector<std::string>>();
    report.mode = j.value("mode", "");
    report.ablation = j.value("ablation", "");
    return report;
}

FairnessReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return report_from_json_text(text);
}

void save_report(const FairnessReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << report_to_json(report) << '\n';
    if (!out) throw DataError("report write failed: " + path);
}

void emit_error_map(const std::string& path, const FairnessReport& report,
                    const FairnessReport* baseline, const Matrix* coordinates) {
    const std::size_t n = report.node_ids.size();
    if (report.per_node_mape.size() != n) throw DataError("per-node MAPE length mismatch");
    if (baseline && baseline->node_ids != report.node_ids) {
        throw DataError("baseline report covers different nodes");
    }
    const bool coords = coordinates != nullptr;
    std::vector<std::string> header = {"node_id"};
    if (coords) {
        header.push_back("lon");
        header.push_back("lat");
    }
    header.push_back("mape");
    if (baseline) header.push_back("mape_improvement");

    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    std::vector<std::vector<std::string>> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::string> row = {report.node_ids[i]};
        if (coords) {
            row.push_back(fmt((*coordinates)(static_cast<Eigen::Index>(i), 0)));
            row.push_back(fmt((*coordinates)(static_cast<Eigen::Index>(i), 1)));
        }
        row.push_back(fmt(report.per_node_mape[i] / 100.0)); // fraction in the map file
        if (baseline) {
            row.push_back(fmt((baseline->per_node_mape[i] - report.per_node_mape[i]) / 100.0));
        }
        rows.push_back(std::move(row));
    }
    csv::write_rows(path, header, rows);
}

} // namespace fairstg
