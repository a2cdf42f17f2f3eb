#pragma once

#include <kleinlab/schottky.hpp>

#include <gtest/gtest.h>

#include <vector>

namespace kltest {

using kleinlab::cplx;
using kleinlab::DiskPair;

inline std::vector<DiskPair> symmetric_pairs(double radius) {
    return {{{cplx(-2, 0), radius}, {cplx(2, 0), radius}, 0.0}, {{cplx(0, -2), radius}, {cplx(0, 2), radius}, 0.0}};
}

inline std::vector<DiskPair> fuchsian_pairs() {
    return {{{cplx(-3, 0), 1.0}, {cplx(3, 0), 1.0}, 0.0}, {{cplx(-1, 0), 0.5}, {cplx(1, 0), 0.5}, 0.0}};
}

inline void expect_mobius_near(const kleinlab::Mobius& g, const kleinlab::Mobius& h, double tol) {
    EXPECT_LE(kleinlab::sign_distance(g, h), tol);
}

} // namespace kltest
