#pragma once

#include "fairstg/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace fairstg {

// Flat registry of named learnable matrices. Modules register parameters at
// construction and keep integer handles; the trainer binds the whole store
// onto a tape once per step, so handle i corresponds to bound[i].
class ParamStore {
public:
    int add(std::string name, ad::Matrix init);
    int find(const std::string& name) const; // -1 when absent

    ad::Matrix& value(int id) { return values_[static_cast<std::size_t>(id)]; }
    const ad::Matrix& value(int id) const { return values_[static_cast<std::size_t>(id)]; }
    const std::string& name(int id) const { return names_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(values_.size()); }

    std::vector<ad::Var> bind(ad::Tape& t) const;

private:
    std::vector<std::string> names_;
    std::vector<ad::Matrix> values_;
};

// 53-bit uniform in [0,1) built from raw draws so results do not depend on
// the standard library's distribution implementation.
double uniform53(std::mt19937& rng);

ad::Matrix glorot_uniform(int rows, int cols, std::mt19937& rng);
ad::Matrix uniform_matrix(int rows, int cols, double lo, double hi, std::mt19937& rng);

} // namespace fairstg
