#include "latref/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace latref {

namespace {
int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw Error("tensor", "negative dimension");
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor Tensor::full(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw Error("tensor", "data size does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel())
        throw Error("tensor", "reshape changes element count: " + shape_str());
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) throw Error("tensor", "shape mismatch in +=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    if (!same_shape(o)) throw Error("tensor", "shape mismatch in -=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(float s) {
    for (float& v : data_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, float s) { return a *= s; }

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3))
        throw Error("tensor", "concat_channels shape mismatch " + a.shape_str() + " vs " +
                                  b.shape_str());
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor out({n, ca + cb, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data() + (static_cast<size_t>(i) * (ca + cb)) * plane,
                    a.data() + (static_cast<size_t>(i) * ca) * plane, ca * plane * sizeof(float));
        std::memcpy(out.data() + (static_cast<size_t>(i) * (ca + cb) + ca) * plane,
                    b.data() + (static_cast<size_t>(i) * cb) * plane, cb * plane * sizeof(float));
    }
    return out;
}

void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb) {
    const int n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
    const int cb = c - ca;
    ga = Tensor({n, ca, h, w});
    gb = Tensor({n, cb, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::memcpy(ga.data() + (static_cast<size_t>(i) * ca) * plane,
                    g.data() + (static_cast<size_t>(i) * c) * plane, ca * plane * sizeof(float));
        std::memcpy(gb.data() + (static_cast<size_t>(i) * cb) * plane,
                    g.data() + (static_cast<size_t>(i) * c + ca) * plane,
                    cb * plane * sizeof(float));
    }
}

Tensor stack(const std::vector<Tensor>& items) {
    if (items.empty()) throw Error("tensor", "stack of zero tensors");
    const auto& s = items[0].shape();
    std::vector<int> out_shape;
    out_shape.push_back(static_cast<int>(items.size()));
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    Tensor out(out_shape);
    const int64_t per = items[0].numel();
    for (size_t i = 0; i < items.size(); ++i) {
        if (items[i].shape() != s) throw Error("tensor", "stack shape mismatch");
        std::memcpy(out.data() + static_cast<size_t>(i) * per, items[i].data(),
                    static_cast<size_t>(per) * sizeof(float));
    }
    return out;
}

Tensor unstack(const Tensor& batch, int n) {
    std::vector<int> s(batch.shape().begin() + 1, batch.shape().end());
    Tensor out(s);
    std::memcpy(out.data(), batch.data() + static_cast<size_t>(n) * out.numel(),
                static_cast<size_t>(out.numel()) * sizeof(float));
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a[i];
    return s;
}

double mean(const Tensor& a) { return a.numel() ? sum(a) / static_cast<double>(a.numel()) : 0.0; }

double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(float)) == 0;
}

void check_shape(const Tensor& t, const std::vector<int>& expect, const char* what) {
    if (t.shape() != expect) {
        Tensor e(expect);
        throw Error("shape", std::string(what) + ": got " + t.shape_str() + ", expected " +
                                 e.shape_str());
    }
}

}  // namespace latref
