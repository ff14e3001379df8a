#ifndef JOINTDIFF_TENSOR_HPP
#define JOINTDIFF_TENSOR_HPP

#include <cassert>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace jointdiff {

// Dense row-major array with shared storage. Ops that need fresh storage
// allocate a new buffer; leaf views alias the caller's buffer so building a
// graph never copies parameters.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> data;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shp) {
        Tensor t;
        t.shape = std::move(shp);
        t.data = std::make_shared<std::vector<T>>(count(t.shape), T(0));
        return t;
    }

    static Tensor full(std::vector<int> shp, T v) {
        Tensor t = zeros(std::move(shp));
        for (auto& x : *t.data) x = v;
        return t;
    }

    static Tensor scalar(T v) { return full({1}, v); }

    static Tensor from(std::vector<int> shp, std::vector<T> values) {
        if (count(shp) != values.size()) throw std::invalid_argument("tensor: shape/value count mismatch");
        Tensor t;
        t.shape = std::move(shp);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    static size_t count(const std::vector<int>& shp) {
        size_t n = 1;
        for (int d : shp) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data ? data->size() : 0; }
    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T& operator[](size_t i) { return (*data)[i]; }
    const T& operator[](size_t i) const { return (*data)[i]; }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<T>>(*data);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<U>>(numel());
        for (size_t i = 0; i < numel(); ++i) (*t.data)[i] = static_cast<U>((*data)[i]);
        return t;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace jointdiff

#endif
