#pragma once

#include <cmath>

#include "pflow/vec3.hpp"

namespace pflow {

/// Scalar with three partial derivatives carried along. Used only to
/// evaluate the Jacobian of the ball-to-cube map inside the convolution
/// backward pass; it is not a general differentiation facility.
struct Jet3 {
    double v = 0;
    double d[3] = {0, 0, 0};

    Jet3() = default;
    Jet3(double value) : v(value) {}
    Jet3(double value, int seed) : v(value) { d[seed] = 1; }

    friend Jet3 operator+(const Jet3& a, const Jet3& b) {
        Jet3 r(a.v + b.v);
        for (int k = 0; k < 3; ++k) r.d[k] = a.d[k] + b.d[k];
        return r;
    }
    friend Jet3 operator-(const Jet3& a, const Jet3& b) {
        Jet3 r(a.v - b.v);
        for (int k = 0; k < 3; ++k) r.d[k] = a.d[k] - b.d[k];
        return r;
    }
    friend Jet3 operator-(const Jet3& a) {
        Jet3 r(-a.v);
        for (int k = 0; k < 3; ++k) r.d[k] = -a.d[k];
        return r;
    }
    friend Jet3 operator*(const Jet3& a, const Jet3& b) {
        Jet3 r(a.v * b.v);
        for (int k = 0; k < 3; ++k) r.d[k] = a.d[k] * b.v + a.v * b.d[k];
        return r;
    }
    friend Jet3 operator/(const Jet3& a, const Jet3& b) {
        Jet3 r(a.v / b.v);
        const double ib2 = 1.0 / (b.v * b.v);
        for (int k = 0; k < 3; ++k) r.d[k] = (a.d[k] * b.v - a.v * b.d[k]) * ib2;
        return r;
    }
    friend bool operator<(const Jet3& a, const Jet3& b) { return a.v < b.v; }
    friend bool operator>(const Jet3& a, const Jet3& b) { return a.v > b.v; }
    friend bool operator>=(const Jet3& a, const Jet3& b) { return a.v >= b.v; }
};

inline Jet3 sqrt(const Jet3& a) {
    Jet3 r(std::sqrt(a.v));
    const double g = r.v > 0 ? 0.5 / r.v : 0.0;  // subgradient 0 at the origin kink
    for (int k = 0; k < 3; ++k) r.d[k] = g * a.d[k];
    return r;
}

inline Jet3 abs(const Jet3& a) {
    const double s = a.v < 0 ? -1.0 : 1.0;
    Jet3 r(std::fabs(a.v));
    for (int k = 0; k < 3; ++k) r.d[k] = s * a.d[k];
    return r;
}

/// Magnitude of a, sign taken from b's value.
inline Jet3 copysign(const Jet3& a, const Jet3& b) {
    const double s = std::signbit(b.v) ? -1.0 : 1.0;
    Jet3 r(s * std::fabs(a.v));
    const double sa = a.v < 0 ? -s : s;
    for (int k = 0; k < 3; ++k) r.d[k] = sa * a.d[k];
    return r;
}

inline Jet3 atan2(const Jet3& y, const Jet3& x) {
    Jet3 r(std::atan2(y.v, x.v));
    const double den = x.v * x.v + y.v * y.v;
    const double g = den > 0 ? 1.0 / den : 0.0;
    for (int k = 0; k < 3; ++k) r.d[k] = g * (x.v * y.d[k] - y.v * x.d[k]);
    return r;
}

namespace ballcube_detail {

using std::abs;
using std::atan2;
using std::copysign;
using std::sqrt;

inline double value_of(double x) { return x; }
inline float value_of(float x) { return x; }
inline double value_of(const Jet3& x) { return x.v; }

template <class S>
struct Pair {
    S a, b;
};

/// Area-preserving concentric map from the disc of radius r to the square
/// [-r, r]^2 (up to the constant factor 4/pi). Odd and continuous; branches
/// on |u| vs |v|.
template <class S>
Pair<S> disc_to_square(const S& u, const S& v) {
    const S n2 = u * u + v * v;
    if (!(static_cast<double>(value_of(n2)) > 0)) return {S(0), S(0)};
    const S s = sqrt(n2);
    const S au = abs(u);
    const S av = abs(v);
    const S four_over_pi = S(4.0 / 3.14159265358979323846);
    if (au >= av) {
        const S t = atan2(av, au);  // in [0, pi/4]
        return {copysign(s, u), copysign(s * four_over_pi * t, v)};
    }
    const S t = atan2(au, av);
    return {copysign(s * four_over_pi * t, u), copysign(s, v)};
}

}  // namespace ballcube_detail

/// Odd bijection from the unit ball onto the unit cube (max-norm <= 1),
/// built as ball -> cylinder -> cube with each stage volume preserving up
/// to a constant. Inputs beyond the unit sphere are radially clamped onto
/// it. Works on float, double, and Jet3 scalars; the Jet3 instantiation
/// yields the Jacobian used by the convolution backward pass.
template <class S>
Vec3T<S> ball_to_cube(Vec3T<S> p) {
    using ballcube_detail::value_of;
    using std::abs;
    using std::copysign;
    using std::sqrt;

    S r2_all = p.x * p.x + p.y * p.y + p.z * p.z;
    if (!(value_of(r2_all) > 1e-30)) return {S(0), S(0), S(0)};
    S radius = sqrt(r2_all);
    if (value_of(radius) > 1.0) {
        const S inv = S(1) / radius;
        p.x = p.x * inv;
        p.y = p.y * inv;
        p.z = p.z * inv;
        radius = S(1);
    }

    const S r2_xy = p.x * p.x + p.y * p.y;
    S u, v, w;
    if (S(1.25) * p.z * p.z >= r2_xy) {
        // Polar cap: maps onto the flat disc of the cylinder. The xy scale
        // sqrt(3R/(R+|z|)) equals sqrt(3R(R-|z|))/r_xy without cancellation.
        if (!(value_of(r2_xy) > 1e-30)) {
            u = S(0);
            v = S(0);
        } else {
            const S scale = sqrt(S(3) * radius / (radius + abs(p.z)));
            u = p.x * scale;
            v = p.y * scale;
        }
        w = copysign(S(2.0 / 3.0) * radius, p.z);
    } else {
        // Equatorial band: maps onto the lateral surface, z unchanged.
        const S scale = radius / sqrt(r2_xy);
        u = p.x * scale;
        v = p.y * scale;
        w = p.z;
    }

    const auto sq = ballcube_detail::disc_to_square(u, v);
    return {sq.a, sq.b, S(1.5) * w};
}

/// 3x3 Jacobian of ball_to_cube at r, rows = output components, columns =
/// input components. Undefined (returns a subgradient choice) exactly on
/// the measure-zero branch boundaries.
inline void ball_to_cube_jacobian(const Vec3d& r, double jac[3][3]) {
    Vec3T<Jet3> p{Jet3(r.x, 0), Jet3(r.y, 1), Jet3(r.z, 2)};
    const Vec3T<Jet3> out = ball_to_cube(p);
    for (int col = 0; col < 3; ++col) {
        jac[0][col] = out.x.d[col];
        jac[1][col] = out.y.d[col];
        jac[2][col] = out.z.d[col];
    }
}

}  // namespace pflow
