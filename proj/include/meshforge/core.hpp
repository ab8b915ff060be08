#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace meshforge {

/// Base class for every error raised by the library. `name()` is the stable
/// identifier the CLI prints on stage failure.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& what)
        : std::runtime_error(name + ": " + what), name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

#define MESHFORGE_DEFINE_ERROR(Type)                                        \
    class Type : public Error {                                             \
    public:                                                                 \
        explicit Type(const std::string& what) : Error(#Type, what) {}      \
    }

MESHFORGE_DEFINE_ERROR(DegenerateInput);
MESHFORGE_DEFINE_ERROR(EmptySurface);
MESHFORGE_DEFINE_ERROR(ShapeError);
MESHFORGE_DEFINE_ERROR(DomainError);
MESHFORGE_DEFINE_ERROR(NonFiniteGradient);
MESHFORGE_DEFINE_ERROR(NonFiniteLoss);
MESHFORGE_DEFINE_ERROR(NonFiniteState);
MESHFORGE_DEFINE_ERROR(NotWatertight);
MESHFORGE_DEFINE_ERROR(MissingUVs);
MESHFORGE_DEFINE_ERROR(FormatError);
MESHFORGE_DEFINE_ERROR(Divergence);

#undef MESHFORGE_DEFINE_ERROR

inline constexpr double kPi = std::numbers::pi;

struct Vec2 {
    double x = 0, y = 0;

    friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend constexpr Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
    friend constexpr Vec2 operator*(double s, Vec2 a) { return {a.x * s, a.y * s}; }
    friend constexpr bool operator==(Vec2, Vec2) = default;
};

struct Vec3 {
    double x = 0, y = 0, z = 0;

    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3& operator+=(Vec3 o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(Vec3 o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return {a.x * s, a.y * s, a.z * s}; }
    friend constexpr Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
    friend constexpr bool operator==(Vec3, Vec3) = default;

    friend std::ostream& operator<<(std::ostream& os, Vec3 v) {
        return os << '(' << v.x << ", " << v.y << ", " << v.z << ')';
    }
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
constexpr double norm2(Vec3 a) { return dot(a, a); }
inline Vec3 normalized(Vec3 a) {
    const double n = norm(a);
    return n > 0 ? a / n : Vec3{};
}
constexpr Vec3 cwise_min(Vec3 a, Vec3 b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
constexpr Vec3 cwise_max(Vec3 a, Vec3 b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}
inline bool is_finite(Vec3 a) {
    return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

/// Per-axis integer extent used by grids and images.
struct Extent3 {
    int nx = 0, ny = 0, nz = 0;

    constexpr std::size_t count() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    constexpr std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * static_cast<std::size_t>(ny) +
                static_cast<std::size_t>(j)) * static_cast<std::size_t>(nx) +
               static_cast<std::size_t>(i);
    }
    constexpr int operator[](int a) const { return a == 0 ? nx : (a == 1 ? ny : nz); }
    friend constexpr bool operator==(Extent3, Extent3) = default;

    static constexpr Extent3 cube(int n) { return {n, n, n}; }
};

}  // namespace meshforge
