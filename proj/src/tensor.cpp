#include "comofusion/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "comofusion/errors.hpp"

namespace comofusion {

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(' << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ValidationError("negative tensor extent " + to_string(shape));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape.numel()) {
    throw ValidationError("tensor data size does not match shape " +
                          to_string(shape));
  }
}

Tensor Tensor::sample(int n) const {
  if (n < 0 || n >= shape_.n) {
    throw ValidationError("sample index out of range");
  }
  Shape s = shape_;
  s.n = 1;
  const auto begin = data_.begin() + static_cast<std::ptrdiff_t>(n * shape_.sample());
  Tensor out(s);
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(shape_.sample()), out.data_.begin());
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ValidationError("shape mismatch in += : " + to_string(shape_) +
                          " vs " + to_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor stack(std::span<const Tensor> samples) {
  if (samples.empty()) throw ValidationError("cannot stack zero tensors");
  Shape s = samples.front().shape();
  if (s.n != 1) throw ValidationError("stack expects single-sample tensors");
  std::vector<double> data;
  data.reserve(s.numel() * samples.size());
  for (const auto& t : samples) {
    if (t.shape() != s) {
      throw ValidationError("stack shape mismatch: " + to_string(t.shape()) +
                            " vs " + to_string(s));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  s.n = static_cast<int>(samples.size());
  return Tensor(s, std::move(data));
}

}  // namespace comofusion
