#include "fairstg/params.hpp"

#include "fairstg/errors.hpp"

#include <cmath>

namespace fairstg {

int ParamStore::add(std::string name, ad::Matrix init) {
    if (find(name) >= 0) throw ConfigError("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return static_cast<int>(values_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return static_cast<int>(i);
    }
    return -1;
}

std::vector<ad::Var> ParamStore::bind(ad::Tape& t) const {
    std::vector<ad::Var> vars;
    vars.reserve(values_.size());
    for (const auto& v : values_) vars.push_back(t.leaf(v, true));
    return vars;
}

double uniform53(std::mt19937& rng) {
    std::uint64_t hi = rng() >> 5; // 27 bits
    std::uint64_t lo = rng() >> 6; // 26 bits
    return (static_cast<double>(hi) * 67108864.0 + static_cast<double>(lo)) *
           (1.0 / 9007199254740992.0);
}

ad::Matrix uniform_matrix(int rows, int cols, double lo, double hi, std::mt19937& rng) {
    ad::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = lo + (hi - lo) * uniform53(rng);
        }
    }
    return m;
}

ad::Matrix glorot_uniform(int rows, int cols, std::mt19937& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    return uniform_matrix(rows, cols, -limit, limit, rng);
}

} // namespace fairstg
