#include "fg2e/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "fg2e/common.hpp"
#include "fg2e/serialize.hpp"

namespace fg2e {

Tensor::Tensor(std::vector<int> dims, double fill) : dims_(std::move(dims)) {
  size_t n = dims_.empty() ? 0 : 1;
  for (int d : dims_) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
    n *= size_t(d);
  }
  data_.assign(n, fill);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) throw std::invalid_argument("tensor shape mismatch");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (!same_shape(other)) throw std::invalid_argument("tensor shape mismatch");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double Tensor::sum() const {
  double acc = 0.0;
  for (double v : data_) acc += v;
  return acc;
}

double Tensor::dot(const Tensor& other) const {
  if (!same_shape(other)) throw std::invalid_argument("tensor shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < data_.size(); ++i) acc += data_[i] * other.data_[i];
  return acc;
}

double Tensor::norm() const { return std::sqrt(dot(*this)); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor operator+(Tensor a, const Tensor& b) { a += b; return a; }
Tensor operator-(Tensor a, const Tensor& b) { a -= b; return a; }
Tensor operator*(double s, Tensor a) { a *= s; return a; }

double snap_f32(double v) {
  volatile float f = float(v);
  return double(f);
}

Tensor snap_f32(Tensor t) {
  for (size_t i = 0; i < t.size(); ++i) t[i] = snap_f32(t[i]);
  return t;
}

static constexpr char kTensorMagic[4] = {'F', 'G', '2', 'T'};

void write_fg2t(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, 4);
  io::write_u32(out, uint32_t(t.rank()));
  for (int i = 0; i < t.rank(); ++i) io::write_u32(out, uint32_t(t.dim(i)));
  for (size_t i = 0; i < t.size(); ++i) io::write_f32(out, float(t[i]));
}

Tensor read_fg2t(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw FormatError("bad tensor magic", 0);
  uint32_t rank = io::read_u32(in, "tensor rank");
  if (rank == 0 || rank > 8) throw FormatError("unsupported tensor rank", 4);
  std::vector<int> dims(rank);
  size_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = io::read_u32(in, "tensor dim");
    if (d == 0 || d > (1u << 24)) throw FormatError("bad tensor dim", 8 + 4 * i);
    dims[i] = int(d);
    n *= d;
  }
  Tensor t(dims);
  for (size_t i = 0; i < n; ++i) t[i] = double(io::read_f32(in, "tensor payload"));
  return t;
}

void save_fg2t(const Tensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  write_fg2t(out, t);
  if (!out) throw FormatError("write failed: " + path);
}

Tensor load_fg2t(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path);
  return read_fg2t(in);
}

}  // namespace fg2e
