#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tabl {

/// Dense row-major matrix of doubles.
///
/// A default-constructed Matrix is empty (0x0) and only serves as a
/// placeholder; every other constructor requires positive dimensions.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  void fill(double v);
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Multiply-accumulate tally for instrumented kernels.
struct OpCounter {
  std::uint64_t mac_count = 0;
  void add(std::uint64_t n) noexcept { mac_count += n; }
};

inline void count(OpCounter* counter, std::uint64_t n) noexcept {
  if (counter != nullptr) counter->add(n);
}

// a * b. Adds a.rows * a.cols * b.cols MACs to the counter.
Matrix matmul(const Matrix& a, const Matrix& b, OpCounter* counter = nullptr);
// transpose(a) * b
Matrix matmul_tn(const Matrix& a, const Matrix& b, OpCounter* counter = nullptr);
// a * transpose(b)
Matrix matmul_nt(const Matrix& a, const Matrix& b, OpCounter* counter = nullptr);
// out += a * b, shapes must already agree.
void matmul_accumulate(const Matrix& a, const Matrix& b, Matrix& out, OpCounter* counter = nullptr);

Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
// a += s * b
void axpy(Matrix& a, double s, const Matrix& b);

// Softmax across each row, max-subtracted.
Matrix row_softmax(const Matrix& m);
// Softmax down each column, max-subtracted.
Matrix column_softmax(const Matrix& m);

double sum(const Matrix& m);
double max_abs(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& m);

void require_same_shape(const Matrix& a, const Matrix& b, const char* op);

}  // namespace tabl
