#include "autodiff/tensor.hpp"

#include <stdexcept>

namespace morphsdf::ad {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<float>>(std::move(data))) {
    if (shape_numel(shape_) != int64_t(data_->size()))
        throw std::invalid_argument("Tensor: shape " + shape_str() + " does not match data length " +
                                    std::to_string(data_->size()));
}

Tensor Tensor::zeros(std::vector<int> shape) {
    size_t n = size_t(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<float>(n, 0.f));
}

Tensor Tensor::full(std::vector<int> shape, float value) {
    size_t n = size_t(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<float>(n, value));
}

int64_t Tensor::size() const { return data_ ? int64_t(data_->size()) : 0; }

float Tensor::value() const {
    if (size() != 1) throw std::invalid_argument("Tensor::value: not a scalar, shape " + shape_str());
    return (*data_)[0];
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace morphsdf::ad
