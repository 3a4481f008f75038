#include "fairstg/dataset.hpp"

#include "fairstg/csv.hpp"
#include "fairstg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>

namespace fairstg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = static_cast<int>(yy + (m <= 2));
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

void fill_missing(Matrix& values, MissingPolicy policy, const std::string& path) {
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index t = 0; t < values.cols(); ++t) {
            if (!std::isnan(values(i, t))) continue;
            if (policy == MissingPolicy::error) {
                throw DataError("missing value for node row " + std::to_string(i + 1) +
                                " in " + path + " (missing_policy=error)");
            }
            if (t > 0) {
                values(i, t) = values(i, t - 1); // forward fill
            }
        }
        // back-fill a missing series head from the first observed value
        Eigen::Index first_ok = -1;
        for (Eigen::Index t = 0; t < values.cols(); ++t) {
            if (!std::isnan(values(i, t))) {
                first_ok = t;
                break;
            }
        }
        if (first_ok < 0) {
            throw DataError("node row " + std::to_string(i + 1) + " in " + path +
                            " has no observed values");
        }
        for (Eigen::Index t = 0; t < first_ok; ++t) values(i, t) = values(i, first_ok);
    }
}

void validate_timeline(const std::vector<std::int64_t>& ts, RawDataset& ds) {
    if (ts.size() < 2) {
        ds.interval_seconds = 0;
        return;
    }
    std::int64_t interval = ts[1] - ts[0];
    for (std::size_t i = 1; i < ts.size(); ++i) {
        std::int64_t diff = ts[i] - ts[i - 1];
        if (diff <= 0) {
            throw DataError("timestamps not strictly increasing at position " +
                            std::to_string(i + 1));
        }
        if (diff != interval) {
            throw DataError("sampling interval changes at position " + std::to_string(i + 1) +
                            " (" + std::to_string(diff) + "s vs " + std::to_string(interval) +
                            "s)");
        }
    }
    ds.interval_seconds = interval;
}

RawDataset load_wide(const std::vector<std::vector<std::string>>& rows,
                     const LoadSchema& schema, const std::string& path) {
    if (rows.size() < 2) throw DataError("wide CSV needs a header and at least one row: " + path);
    const auto& header = rows[0];
    if (header.size() < 2) throw DataError("wide CSV needs at least one node column: " + path);
    const int n = static_cast<int>(header.size()) - 1;
    const int t_len = static_cast<int>(rows.size()) - 1;

    RawDataset ds;
    ds.node_ids.assign(header.begin() + 1, header.end());
    ds.values = Matrix::Constant(n, t_len, kNaN);
    ds.timestamps.resize(static_cast<std::size_t>(t_len));
    for (int t = 0; t < t_len; ++t) {
        const auto& row = rows[static_cast<std::size_t>(t) + 1];
        if (static_cast<int>(row.size()) != n + 1) {
            throw DataError("row " + std::to_string(t + 2) + " has " +
                            std::to_string(row.size()) + " fields, expected " +
                            std::to_string(n + 1) + ": " + path);
        }
        ds.timestamps[static_cast<std::size_t>(t)] = parse_timestamp(row[0]);
        for (int i = 0; i < n; ++i) {
            const std::string& cell = row[static_cast<std::size_t>(i) + 1];
            if (cell.empty() || cell == "nan" || cell == "NaN") continue;
            ds.values(i, t) = csv::parse_double(cell, t + 2, i + 2);
        }
    }
    fill_missing(ds.values, schema.missing, path);
    validate_timeline(ds.timestamps, ds);
    return ds;
}

RawDataset load_long(const std::vector<std::vector<std::string>>& rows,
                     const LoadSchema& schema, const std::string& path) {
    if (rows.size() < 2) throw DataError("long CSV needs a header and at least one row: " + path);
    std::vector<std::int64_t> timestamps;
    std::map<std::int64_t, int> ts_index;
    std::vector<std::string> node_ids;
    std::map<std::string, int> node_index;
    struct Cell {
        int node;
        int t;
        double value;
    };
    std::vector<Cell> cells;
    cells.reserve(rows.size() - 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != 3) {
            throw DataError("row " + std::to_string(r + 1) +
                            " must have timestamp,node,value: " + path);
        }
        std::int64_t ts = parse_timestamp(row[0]);
        auto [it, inserted] = ts_index.try_emplace(ts, static_cast<int>(timestamps.size()));
        if (inserted) timestamps.push_back(ts);
        auto [nit, ninserted] = node_index.try_emplace(row[1], static_cast<int>(node_ids.size()));
        if (ninserted) node_ids.push_back(row[1]);
        cells.push_back({nit->second, it->second,
                         csv::parse_double(row[2], static_cast<int>(r) + 1, 3)});
    }
    if (!std::is_sorted(timestamps.begin(), timestamps.end())) {
        throw DataError("long CSV timestamps must appear in chronological order: " + path);
    }

    RawDataset ds;
    ds.node_ids = std::move(node_ids);
    ds.timestamps = std::move(timestamps);
    ds.values = Matrix::Constant(static_cast<Eigen::Index>(ds.node_ids.size()),
                                 static_cast<Eigen::Index>(ds.timestamps.size()), kNaN);
    for (const auto& c : cells) {
        if (!std::isnan(ds.values(c.node, c.t))) {
            throw DataError("duplicate (timestamp,node) entry for node '" +
                            ds.node_ids[static_cast<std::size_t>(c.node)] + "': " + path);
        }
        ds.values(c.node, c.t) = c.value;
    }
    fill_missing(ds.values, schema.missing, path);
    validate_timeline(ds.timestamps, ds);
    return ds;
}

} // namespace

std::int64_t parse_timestamp(const std::string& text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    int n = std::sscanf(text.c_str(), "%d-%d-%d%*1[T ]%d:%d:%d", &y, &mo, &d, &h, &mi, &s);
    if (n < 5) {
        n = std::sscanf(text.c_str(), "%d-%d-%d", &y, &mo, &d);
        if (n != 3) throw DataError("unparseable timestamp '" + text + "'");
        h = mi = s = 0;
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 ||
        s < 0 || s > 60) {
        throw DataError("timestamp field out of range: '" + text + "'");
    }
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t epoch_seconds) {
    std::int64_t days = floor_div(epoch_seconds, 86400);
    std::int64_t rem = epoch_seconds - days * 86400;
    int y;
    unsigned mo, d;
    civil_from_days(days, y, mo, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", y, mo, d,
                  static_cast<int>(rem / 3600), static_cast<int>((rem % 3600) / 60),
                  static_cast<int>(rem % 60));
    return buf;
}

int day_of_week_from_epoch(std::int64_t epoch_seconds) {
    std::int64_t days = floor_div(epoch_seconds, 86400);
    return static_cast<int>(((days % 7) + 7 + 3) % 7); // 1970-01-01 was a Thursday
}

double time_of_day_from_epoch(std::int64_t epoch_seconds) {
    std::int64_t days = floor_div(epoch_seconds, 86400);
    return static_cast<double>(epoch_seconds - days * 86400) / 86400.0;
}

RawDataset load_dataset(const std::string& path, const LoadSchema& schema) {
    auto rows = csv::read_rows(path);
    if (schema.format == LoadSchema::Format::wide) return load_wide(rows, schema, path);
    return load_long(rows, schema, path);
}

std::vector<int> window_starts(const RawDataset& ds, int w, int h) {
    if (w < 1 || h < 1) throw ConfigError("window sizes must be >= 1");
    const int count = ds.num_steps() - w - h + 1;
    if (count < 1) {
        throw DataError("dataset too short: T=" + std::to_string(ds.num_steps()) +
                        " < w+h=" + std::to_string(w + h));
    }
    std::vector<int> starts(static_cast<std::size_t>(count));
    std::iota(starts.begin(), starts.end(), 0);
    return starts;
}

SplitStarts split_starts(const std::vector<int>& starts, double train_ratio, double val_ratio,
                         double test_ratio) {
    if (train_ratio <= 0 || val_ratio <= 0 || test_ratio <= 0) {
        throw ConfigError("split ratios must be positive");
    }
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
    const int s = static_cast<int>(starts.size());
    const int n_train = static_cast<int>(std::floor(train_ratio * s));
    const int n_val = static_cast<int>(std::floor(val_ratio * s));
    const int n_test = s - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1) {
        throw ConfigError("a split is empty: train=" + std::to_string(n_train) +
                          " val=" + std::to_string(n_val) + " test=" + std::to_string(n_test));
    }
    SplitStarts out;
    out.train.assign(starts.begin(), starts.begin() + n_train);
    out.val.assign(starts.begin() + n_train, starts.begin() + n_train + n_val);
    out.test.assign(starts.begin() + n_train + n_val, starts.end());
    return out;
}

NormalizationState fit_normalization(const RawDataset& ds, const std::vector<int>& train_starts,
                                     int w) {
    if (train_starts.empty()) throw ConfigError("empty training split");
    const int last = *std::max_element(train_starts.begin(), train_starts.end());
    const int cols = last + w; // observations any training input window can see
    const auto block = ds.values.leftCols(cols);
    NormalizationState norm;
    norm.mean = block.mean();
    norm.std = std::sqrt((block.array() - norm.mean).square().mean());
    if (!(norm.std > 1e-12)) {
        throw DataError("training series is constant; normalization undefined");
    }
    return norm;
}

SampleBatch make_batch(const RawDataset& ds, const NormalizationState& norm,
                       const std::vector<int>& starts, int w, int h) {
    const int n = ds.num_nodes();
    const int m = static_cast<int>(starts.size()) * n;
    SampleBatch batch;
    batch.num_nodes = n;
    batch.inputs.resize(m, w);
    batch.targets.resize(m, h);
    batch.node_index.resize(static_cast<std::size_t>(m));
    batch.window_start.resize(static_cast<std::size_t>(m));
    batch.stats_mean.resize(m);
    batch.stats_var.resize(m);
    batch.time_of_day.resize(m);
    batch.day_of_week.resize(static_cast<std::size_t>(m));

    int row = 0;
    for (int s : starts) {
        if (s < 0 || s + w + h > ds.num_steps()) {
            throw DataError("window start " + std::to_string(s) + " out of range");
        }
        const std::int64_t now = ds.timestamps[static_cast<std::size_t>(s + w - 1)];
        for (int i = 0; i < n; ++i, ++row) {
            const auto raw_in = ds.values.row(i).segment(s, w);
            batch.stats_mean(row) = raw_in.mean();
            batch.stats_var(row) = (raw_in.array() - batch.stats_mean(row)).square().mean();
            batch.inputs.row(row) = (raw_in.array() - norm.mean) / norm.std;
            batch.targets.row(row) = ds.values.row(i).segment(s + w, h);
            batch.node_index[static_cast<std::size_t>(row)] = i;
            batch.window_start[static_cast<std::size_t>(row)] = s;
            batch.time_of_day(row) = time_of_day_from_epoch(now);
            batch.day_of_week[static_cast<std::size_t>(row)] = day_of_week_from_epoch(now);
        }
    }
    return batch;
}

Matrix pairwise_distances(const Matrix& coords) {
    const Eigen::Index n = coords.rows();
    Matrix d = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double dist = (coords.row(i) - coords.row(j)).norm();
            d(i, j) = dist;
            d(j, i) = dist;
        }
    }
    return d;
}

Matrix build_gaussian_adjacency(const Matrix& distances, double sigma, double threshold) {
    if (sigma <= 0.0) throw ConfigError("gaussian adjacency sigma must be > 0");
    if (distances.rows() != distances.cols()) throw DataError("distance matrix must be square");
    for (Eigen::Index i = 0; i < distances.rows(); ++i) {
        if (distances(i, i) != 0.0) throw DataError("distance matrix diagonal must be zero");
        for (Eigen::Index j = 0; j < distances.cols(); ++j) {
            if (distances(i, j) < 0.0) throw DataError("distances must be nonnegative");
            if (std::abs(distances(i, j) - distances(j, i)) > 1e-9) {
                throw DataError("distance matrix must be symmetric");
            }
        }
    }
    Matrix w(distances.rows(), distances.cols());
    for (Eigen::Index i = 0; i < distances.rows(); ++i) {
        for (Eigen::Index j = 0; j < distances.cols(); ++j) {
            if (i == j) {
                w(i, j) = 1.0;
                continue;
            }
            double v = std::exp(-(distances(i, j) * distances(i, j)) / (sigma * sigma));
            w(i, j) = (v >= threshold) ? v : 0.0;
        }
    }
    return w;
}

Matrix build_topk_adjacency(const Matrix& history, double k_fraction) {
    if (history.cols() < 2) throw DataError("top-k adjacency needs at least 2 time steps");
    if (!(k_fraction > 0.0 && k_fraction <= 1.0)) {
        throw ConfigError("k_fraction must be in (0,1]");
    }
    const Eigen::Index n = history.rows();
    Vector norms(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        norms(i) = history.row(i).norm();
        if (norms(i) == 0.0) {
            std::cerr << "warning: node row " << i << " has zero norm; similarities set to 0\n";
        }
    }
    Matrix sim = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j || norms(i) == 0.0 || norms(j) == 0.0) continue;
            sim(i, j) = history.row(i).dot(history.row(j)) / (norms(i) * norms(j));
        }
    }
    const int keep = static_cast<int>(std::ceil(k_fraction * static_cast<double>(n - 1)));
    Matrix out = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<int> order;
        order.reserve(static_cast<std::size_t>(n) - 1);
        for (int j = 0; j < n; ++j) {
            if (j != i) order.push_back(j);
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return sim(i, a) > sim(i, b); });
        for (int r = 0; r < keep && r < static_cast<int>(order.size()); ++r) {
            out(i, order[static_cast<std::size_t>(r)]) = sim(i, order[static_cast<std::size_t>(r)]);
        }
    }
    return out;
}

} // namespace fairstg
