#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pflow/error.hpp"

namespace pflow {

/// Dense row-major [rows x cols] feature matrix tied to a particle ordering.
template <class Real>
struct MatT {
    std::size_t rows = 0;
    int cols = 0;
    std::vector<Real> v;

    MatT() = default;
    MatT(std::size_t r, int c) : rows(r), cols(c), v(r * static_cast<std::size_t>(c), Real(0)) {}

    Real* row(std::size_t r) { return v.data() + r * cols; }
    const Real* row(std::size_t r) const { return v.data() + r * cols; }
    Real& at(std::size_t r, int c) { return v[r * cols + c]; }
    Real at(std::size_t r, int c) const { return v[r * cols + c]; }

    void fill(Real x) { std::fill(v.begin(), v.end(), x); }
};

using Mat = MatT<float>;

/// Channel-wise concatenation [A | B]; rows must match.
template <class Real>
MatT<Real> hcat(const MatT<Real>& a, const MatT<Real>& b) {
    PFLOW_CHECK(a.rows == b.rows, "hcat: row count mismatch");
    MatT<Real> out(a.rows, a.cols + b.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
        Real* dst = out.row(r);
        const Real* pa = a.row(r);
        const Real* pb = b.row(r);
        for (int c = 0; c < a.cols; ++c) dst[c] = pa[c];
        for (int c = 0; c < b.cols; ++c) dst[a.cols + c] = pb[c];
    }
    return out;
}

}  // namespace pflow
