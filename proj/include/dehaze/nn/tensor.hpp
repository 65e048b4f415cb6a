#pragma once

#include <cstddef>
#include <new>
#include <string>
#include <vector>

namespace dehaze::nn {

/// Allocates on 64-byte boundaries. Vectorised matrix kernels pick their loop
/// split from the buffer address, so a fixed alignment keeps float results
/// identical from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

/// NCHW extent. Matrices use {rows, cols, 1, 1}; scalars are {1,1,1,1}.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    std::size_t per_sample() const { return static_cast<std::size_t>(c) * plane(); }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

struct Tensor {
    Shape shape;
    FloatBuffer data;

    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.0f) : shape(s), data(s.numel(), fill) {}
    Tensor(Shape s, std::vector<float> values);

    std::size_t numel() const { return data.size(); }
    float* sample(int n) { return data.data() + static_cast<std::size_t>(n) * shape.per_sample(); }
    const float* sample(int n) const {
        return data.data() + static_cast<std::size_t>(n) * shape.per_sample();
    }
    float& at(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
    float at(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
    bool operator==(const Tensor&) const = default;
};

double squared_norm(const Tensor& t);
bool all_finite(const Tensor& t);

} // namespace dehaze::nn
