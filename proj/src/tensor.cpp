#include "advknn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace advknn {

template <class T>
bool Tensor<T>::all_finite() const {
    for (const T& v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

template <class T>
std::string Tensor<T>::shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template class Tensor<float>;
template class Tensor<double>;

} // namespace advknn
