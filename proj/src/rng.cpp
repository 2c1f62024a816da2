#include "dsdg/rng.hpp"

#include <algorithm>
#include <numeric>

namespace dsdg {

Tensor Rng::normal_tensor(Shape shape, double mean, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = mean + stddev * normal();
    return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * uniform();
    return t;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    // Fisher-Yates with our own index draws so the order does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
    return p;
}

}  // namespace dsdg
