#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace aria {

// Dense row-major tensor. Storage is float in the library; the double
// instantiation backs the finite-difference replay path.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        data.assign(count(shape), T(0));
    }

    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<size_t>(count(shape)) != data.size()) {
            throw std::invalid_argument("tensor: shape does not match data length");
        }
    }

    static size_t count(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }

    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(shape.size()); }

    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    // (c, y, x) indexing for rank-3 tensors
    T& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    const T& at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    void fill(T v) { data.assign(data.size(), v); }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

inline bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

std::string shape_str(const std::vector<int>& s);

inline TensorD to_f64(const Tensor& t) {
    TensorD out(t.shape);
    for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<double>(t.data[i]);
    return out;
}

inline Tensor to_f32(const TensorD& t) {
    Tensor out(t.shape);
    for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<float>(t.data[i]);
    return out;
}

// An image is a rank-3 tensor {3, H, W} with values in [0, 1].
using ImageTensor = Tensor;

bool all_finite(const Tensor& t);
void check_image(const ImageTensor& img, int expect_h = -1, int expect_w = -1);

namespace kernels {

// Forward kernels are templated so the tape can be replayed in double
// precision by the finite-difference checker. Reductions accumulate in
// double in both instantiations.

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride, int pad);

template <typename T>
TensorT<T> dense(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b);

template <typename T>
TensorT<T> avgpool2d(const TensorT<T>& x, int window);

template <typename T>
TensorT<T> global_avgpool(const TensorT<T>& x);

template <typename T>
TensorT<T> l2_normalize(const TensorT<T>& v);

template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& x, int out_h, int out_w);

template <typename T>
T cosine_similarity(const TensorT<T>& u, const TensorT<T>& v);

template <typename T>
T nt_xent(const TensorT<T>& z, T tau);  // z: 2N x D stacked embeddings

// Backward kernels (float graphs only).
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy, int stride, int pad,
                     Tensor* gx, Tensor* gw, Tensor* gb);
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                    Tensor* gx, Tensor* gw, Tensor* gb);
void avgpool2d_backward(const Tensor& gy, int window, Tensor* gx);
void global_avgpool_backward(const Tensor& gy, const std::vector<int>& x_shape, Tensor* gx);
void l2_normalize_backward(const Tensor& v, const Tensor& gy, Tensor* gv);
void resize_bilinear_backward(const Tensor& gy, int in_h, int in_w, Tensor* gx);
void cosine_similarity_backward(const Tensor& u, const Tensor& v, float gout, Tensor* gu, Tensor* gv);
void nt_xent_backward(const Tensor& z, float tau, float gout, Tensor* gz);

}  // namespace kernels

}  // namespace aria
