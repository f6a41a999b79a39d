#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scen {

// Base of every error raised by the library. Callers that only care about
// "something went wrong" catch this; the subclasses carry structure.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
   public:
    ShapeError(std::string op, std::string lhs, std::string rhs);

    const std::string& op() const { return op_; }
    const std::string& lhs() const { return lhs_; }
    const std::string& rhs() const { return rhs_; }

   private:
    std::string op_;
    std::string lhs_;
    std::string rhs_;
};

class NonFiniteError : public Error {
   public:
    using Error::Error;
};

class FormatError : public Error {
   public:
    using Error::Error;
};

class IntegrityError : public Error {
   public:
    using Error::Error;
};

// Dense row-major float32 matrix. Every tensor in the engine is 2-D: a scalar
// is 1x1 and a vector is 1xn (or nx1 where a column is needed).
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
    Tensor(std::size_t r, std::size_t c, std::vector<float> values);

    static Tensor scalar(float v) { return Tensor(1, 1, v); }
    static Tensor row_vector(std::vector<float> values);
    static Tensor column_vector(std::vector<float> values);
    static Tensor identity(std::size_t n);

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    float item() const;
    bool all_finite() const;
    std::string shape_str() const;

    bool operator==(const Tensor& o) const = default;
};

// Byte-level equality; distinguishes -0.0/+0.0 and NaN payloads.
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace scen
