#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace latref {

/// Error with a short stage/context tag, so CLI failures name the failing part.
class Error : public std::runtime_error {
public:
    Error(std::string tag, const std::string& msg)
        : std::runtime_error("[" + tag + "] " + msg), tag_(std::move(tag)) {}
    const std::string& tag() const { return tag_; }

private:
    std::string tag_;
};

/// Dense row-major float32 tensor. Shapes are small (<= 4 dims in practice):
/// images are CxHxW or NxCxHxW, matrices are RxC, vectors are flat.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, float v);
    static Tensor from(std::vector<int> shape, std::vector<float> data);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& raw() { return data_; }
    const std::vector<float>& raw() const { return data_; }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // NCHW-style accessors; dimensionality is asserted in debug builds only.
    float& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    float at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    float& at(int c, int h, int w) {
        return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    float at(int c, int h, int w) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    float& at(int n, int c, int h, int w) {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    float at(int n, int c, int h, int w) const {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    Tensor reshaped(std::vector<int> shape) const;

    void fill(float v);
    bool all_finite() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(float s);

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, float s);

/// Channel-wise concatenation of two NCHW tensors with equal N,H,W.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits the gradient of a channel concatenation back into both halves.
void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb);

/// Stacks CHW tensors into one NCHW batch.
Tensor stack(const std::vector<Tensor>& items);
/// Extracts sample n of an NCHW batch as CHW.
Tensor unstack(const Tensor& batch, int n);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double mean(const Tensor& a);
double l2_norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

void check_shape(const Tensor& t, const std::vector<int>& expect, const char* what);

}  // namespace latref
