#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dehaze/error.hpp"

namespace dehaze {

/// Row-major 2-D grid. `Raster` carries intensities, `Mask` carries {0,1} labels.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width),
          data_(static_cast<std::size_t>(checked(height, width)), fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int r, int c) { return data_[index(r, c)]; }
    const T& operator()(int r, int c) const { return data_[index(r, c)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> pixels() { return data_; }
    std::span<const T> pixels() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    bool same_shape(int h, int w) const { return height_ == h && width_ == w; }
    template <typename U>
    bool same_shape(const Grid<U>& other) const {
        return height_ == other.height() && width_ == other.width();
    }

    bool operator==(const Grid&) const = default;

private:
    static long checked(int h, int w) {
        if (h < 0 || w < 0) throw ParameterError("negative raster dimension");
        return static_cast<long>(h) * w;
    }
    std::size_t index(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(c);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using Raster = Grid<float>;
using Mask = Grid<std::uint8_t>;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ContractError(std::string(what) + ": shape mismatch (" +
                            std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                            " vs " + std::to_string(b.height()) + "x" +
                            std::to_string(b.width()) + ")");
    }
}

inline Raster to_raster(const Mask& m) {
    Raster r(m.height(), m.width());
    for (std::size_t i = 0; i < m.size(); ++i) r[i] = m[i] ? 1.0f : 0.0f;
    return r;
}

inline Raster clamp01(const Raster& r) {
    Raster out = r;
    for (auto& v : out.storage()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

inline std::size_t count_nonzero(const Mask& m) {
    return static_cast<std::size_t>(
        std::count_if(m.storage().begin(), m.storage().end(), [](auto v) { return v != 0; }));
}

/// Pixels of `r` where `m` is set, in row-major order.
inline std::vector<double> masked_values(const Raster& r, const Mask& m) {
    require_same_shape(r, m, "masked_values");
    std::vector<double> out;
    for (std::size_t i = 0; i < r.size(); ++i)
        if (m[i]) out.push_back(r[i]);
    return out;
}

} // namespace dehaze
