#pragma once

#include <string>
#include <vector>

#include "stats.hpp"

namespace latentdyn {

/// One subject's T x V signal matrix, time-major.
struct SubjectTimeseries {
    std::string id;
    std::string split; // "train", "val" or "test"
    RowMatrix values;

    Eigen::Index frames() const { return values.rows(); }
    Eigen::Index vertices() const { return values.cols(); }
};

inline std::vector<const SubjectTimeseries*> select_split(const std::vector<SubjectTimeseries>& all,
                                                          const std::string& split) {
    std::vector<const SubjectTimeseries*> out;
    for (const auto& s : all)
        if (s.split == split) out.push_back(&s);
    return out;
}

} // namespace latentdyn
