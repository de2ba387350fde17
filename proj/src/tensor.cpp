#include "spatext/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace spatext {

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << "[" << n_ << ", " << c_ << ", " << h_ << ", " << w_ << "]";
    return os.str();
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                                    b.shape_string());
    }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw std::invalid_argument("concat_channels: incompatible shapes " + a.shape_string() + " and " +
                                    b.shape_string());
    }
    Tensor out(a.n(), a.c() + b.c(), a.h(), a.w());
    for (int i = 0; i < a.n(); ++i) {
        std::copy_n(a.sample(i), a.sample_size(), out.sample(i));
        std::copy_n(b.sample(i), b.sample_size(), out.sample(i) + a.sample_size());
    }
    return out;
}

Tensor slice_sample(const Tensor& src, int i) {
    Tensor out(1, src.c(), src.h(), src.w());
    std::copy_n(src.sample(i), src.sample_size(), out.data());
    return out;
}

void assign_sample(Tensor& dst, int i, const Tensor& src_single) {
    if (src_single.sample_size() != dst.sample_size()) {
        throw std::invalid_argument("assign_sample: size mismatch");
    }
    std::copy_n(src_single.data(), src_single.sample_size(), dst.sample(i));
}

}  // namespace spatext
