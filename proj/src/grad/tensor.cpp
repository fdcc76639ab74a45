#include "icopro/grad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "icopro/errors.hpp"

namespace icopro::grad {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

DenseTensor::DenseTensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

DenseTensor::DenseTensor(std::vector<std::size_t> shape, const std::vector<double>& data)
    : DenseTensor(std::move(shape), Storage(data.begin(), data.end())) {}

DenseTensor::DenseTensor(std::vector<std::size_t> shape, Storage data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw ConfigError("tensor data length does not match shape");
    }
}

DenseTensor DenseTensor::vector(std::initializer_list<double> values) {
    return DenseTensor({values.size()}, std::vector<double>(values));
}

DenseTensor DenseTensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return DenseTensor({rows, cols}, std::vector<double>(values));
}

DenseTensor DenseTensor::identity(std::size_t n) {
    DenseTensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t DenseTensor::rows() const noexcept {
    return shape_.size() >= 2 ? shape_.front() : 1;
}

std::size_t DenseTensor::cols() const noexcept {
    return shape_.empty() ? 0 : shape_.back();
}

void DenseTensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

std::size_t DenseTensor::first_non_finite() const noexcept {
    auto it = std::find_if(data_.begin(), data_.end(), [](double x) { return !std::isfinite(x); });
    return static_cast<std::size_t>(it - data_.begin());
}

bool DenseTensor::all_finite() const noexcept {
    return first_non_finite() == data_.size();
}

} // namespace icopro::grad
