#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace fg2e {

// Dense row-major tensor of doubles. Images are {H, W, C}, UV grids {R, R}
// or {R, R, C}, latents {h, w, c}. On-disk payloads are f32 (FG2T); memory
// stays double so gradient checks are not limited by storage precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

  int rank() const { return int(dims_.size()); }
  const std::vector<int>& dims() const { return dims_; }
  int dim(int i) const { return dims_[size_t(i)]; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at(int i, int j) { return data_[size_t(i) * dims_[1] + j]; }
  double at(int i, int j) const { return data_[size_t(i) * dims_[1] + j]; }
  double& at(int i, int j, int k) {
    return data_[(size_t(i) * dims_[1] + j) * dims_[2] + k];
  }
  double at(int i, int j, int k) const {
    return data_[(size_t(i) * dims_[1] + j) * dims_[2] + k];
  }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  double sum() const;
  double dot(const Tensor& other) const;
  double norm() const;
  double max_abs() const;

 private:
  std::vector<int> dims_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(double s, Tensor a);

// Value after a round trip through IEEE f32. The volatile store keeps the
// narrowing from being folded away in vectorized loops (seen with gcc 11
// at -O3).
double snap_f32(double v);
Tensor snap_f32(Tensor t);

// Raw tensor container: magic "FG2T", u32 rank, u32 dims[rank], f32 payload,
// little-endian throughout.
void write_fg2t(std::ostream& out, const Tensor& t);
Tensor read_fg2t(std::istream& in);
void save_fg2t(const Tensor& t, const std::string& path);
Tensor load_fg2t(const std::string& path);

}  // namespace fg2e
