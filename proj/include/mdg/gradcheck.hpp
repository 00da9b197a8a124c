#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <vector>

#include "mdg/tensor.hpp"

namespace mdg {

// Largest relative error between the autodiff gradient of f at `inputs` and a
// central finite difference with step h, over every input coordinate.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                        std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) {
    t = t.clone_leaf();
    t.set_requires_grad(true);
  }
  Tensor out = f(inputs);
  out.backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double keep = d[i];
      double fp, fm;
      {
        NoGradGuard ng;
        d[i] = keep + h;
        fp = f(inputs).item();
        d[i] = keep - h;
        fm = f(inputs).item();
      }
      d[i] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
    }
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  std::uint64_t s = seed * 6364136223846793005ULL + 1442695040888963407ULL;
  for (double& x : v) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    x = lo + (hi - lo) * static_cast<double>(s >> 11) / 9007199254740992.0;
  }
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace mdg
