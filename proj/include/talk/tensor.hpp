#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace talk {

struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::int64_t>;

inline std::string shape_to_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::int64_t shape_numel(const Shape& s) {
    if (s.empty()) throw shape_error("tensor rank must be >= 1");
    std::int64_t n = 1;
    for (auto e : s) {
        if (e < 1) throw shape_error("tensor extent must be >= 1, got shape " + shape_to_string(s));
        n *= e;
    }
    return n;
}

// Dense row-major n-dimensional array. Invariant: data.size() == product(shape).
template <class T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

    static Tensor from_data(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw shape_error("data length does not match shape " + shape_to_string(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T& at2(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    const T& at2(std::int64_t i, std::int64_t j) const {
        return data_[static_cast<std::size_t>(i * shape_[1] + j)];
    }
    T& at3(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    const T& at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    T& at4(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
        return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    const T& at4(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
        return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }

    // Same storage reinterpreted under a new shape with equal element count.
    Tensor reshape(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw shape_error("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(new_shape) +
                              " changes element count");
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

  private:
    Shape shape_;
    std::vector<T> data_;
};

// xoshiro256++ seeded through splitmix64. Identical seed gives an identical
// draw sequence on every run of the same build.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t z = seed;
        for (auto& w : s_) {
            z += 0x9e3779b97f4a7c15ULL;
            std::uint64_t x = z;
            x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
            x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
            w = x ^ (x >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(uniform() * static_cast<double>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> s_{};
};

template <class T>
Tensor<T> tensor_new(Shape shape, T fill = T(0)) {
    return Tensor<T>(std::move(shape), fill);
}

template <class T>
Tensor<T> tensor_rand_uniform(Shape shape, T lo, T hi, Rng& rng) {
    if (!(lo < hi)) throw std::range_error("rand_uniform requires lo < hi");
    Tensor<T> t(std::move(shape));
    for (T& v : t) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
}

// --- elementwise ops (pointwise, shapes must match exactly) ---

template <class T, class Fn>
Tensor<T> map(const Tensor<T>& a, Fn&& fn) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = fn(pa[i]);
    return out;
}

template <class T, class Fn>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, Fn&& fn) {
    if (!a.same_shape(b))
        throw shape_error("elementwise op shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                          shape_to_string(b.shape()));
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = fn(pa[i], pb[i]);
    return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, [](T x, T y) { return x + y; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, [](T x, T y) { return x - y; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, [](T x, T y) { return x * y; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return map(a, [s](T x) { return x * s; });
}

template <class T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return map(a, [](T x) { return sigmoid_scalar(x); });
}

template <class T>
T sum(const Tensor<T>& a) {
    T acc = T(0);
    for (const T& v : a) acc += v;
    return acc;
}

}  // namespace talk
