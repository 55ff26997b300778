#pragma once

#include <cmath>

namespace pflow {

/// Cubic spline kernel with compact support `s`: W = 0 for r >= s and the
/// integral over R^3 is 1. With q = r/s:
///   W = sigma (6 q^3 - 6 q^2 + 1)   for q <= 1/2
///   W = 2 sigma (1 - q)^3           for 1/2 < q < 1
/// where sigma = 8 / (pi s^3).
inline float cubic_spline(float r, float support) {
    const float q = r / support;
    if (q >= 1.f) return 0.f;
    const float sigma = 8.f / (3.14159265358979323846f * support * support * support);
    if (q <= 0.5f) return sigma * (6.f * q * q * q - 6.f * q * q + 1.f);
    const float t = 1.f - q;
    return sigma * 2.f * t * t * t;
}

/// dW/dr of the cubic spline above.
inline float cubic_spline_deriv(float r, float support) {
    const float q = r / support;
    if (q >= 1.f) return 0.f;
    const float sigma = 8.f / (3.14159265358979323846f * support * support * support);
    float dq;
    if (q <= 0.5f)
        dq = sigma * (18.f * q * q - 12.f * q);
    else {
        const float t = 1.f - q;
        dq = -6.f * sigma * t * t;
    }
    return dq / support;
}

}  // namespace pflow
