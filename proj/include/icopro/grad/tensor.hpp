#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <vector>

namespace icopro::grad {

// Cache-line aligned buffers keep vectorized kernels on the same code path from run to run,
// so results are bitwise reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Row-major tensor of doubles. Rank 1 is a vector, rank 2 a [rows, cols] matrix.
class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(std::vector<std::size_t> shape, double fill = 0.0);
    DenseTensor(std::vector<std::size_t> shape, const std::vector<double>& data);
    DenseTensor(std::vector<std::size_t> shape, Storage data);

    static DenseTensor vector(std::initializer_list<double> values);
    static DenseTensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
    static DenseTensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Leading dimension for rank 2, 1 for rank 1.
    std::size_t rows() const noexcept;
    // Trailing dimension.
    std::size_t cols() const noexcept;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    Storage& storage() noexcept { return data_; }
    const Storage& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols(), cols());
    }

    void fill(double value);
    bool all_finite() const noexcept;
    // Index of the first non-finite entry, or size() if none.
    std::size_t first_non_finite() const noexcept;

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    std::vector<std::size_t> shape_;
    Storage data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

} // namespace icopro::grad
