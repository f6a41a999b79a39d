#include "scen/tensor.hpp"

#include <cmath>
#include <cstring>

namespace scen {

ShapeError::ShapeError(std::string op, std::string lhs, std::string rhs)
    : Error(op + ": shape mismatch " + lhs + " vs " + rhs),
      op_(std::move(op)),
      lhs_(std::move(lhs)),
      rhs_(std::move(rhs)) {}

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<float> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) {
        throw ShapeError("tensor", "[" + std::to_string(r) + "x" + std::to_string(c) + "]",
                         "data[" + std::to_string(data.size()) + "]");
    }
}

Tensor Tensor::row_vector(std::vector<float> values) {
    const std::size_t n = values.size();
    return Tensor(1, n, std::move(values));
}

Tensor Tensor::column_vector(std::vector<float> values) {
    const std::size_t n = values.size();
    return Tensor(n, 1, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0f;
    return t;
}

float Tensor::item() const {
    if (data.size() != 1) throw ShapeError("item", shape_str(), "[1x1]");
    return data[0];
}

bool Tensor::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

}  // namespace scen
