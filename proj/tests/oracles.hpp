#pragma once

// Independent reference implementations used by the tests. None of them
// call into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dynet/autograd.hpp"
#include "dynet/dynconv.hpp"
#include "dynet/random.hpp"
#include "dynet/tensor.hpp"

namespace oracle {

using dynet::ConvGeometry;
using dynet::Tensor;

/// Textbook grouped cross-correlation, long double accumulation.
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvGeometry& g) {
  const long n = static_cast<long>(x.dim(0)), h = static_cast<long>(x.dim(2)), wd = static_cast<long>(x.dim(3));
  const long k = static_cast<long>(g.kernel), s = static_cast<long>(g.stride), p = static_cast<long>(g.padding);
  const long oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  const long cin_g = static_cast<long>(g.in_channels / g.groups), cout_g = static_cast<long>(g.out_channels / g.groups);
  Tensor<T> out({x.dim(0), g.out_channels, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (long b = 0; b < n; ++b) {
    for (long co = 0; co < static_cast<long>(g.out_channels); ++co) {
      const long grp = co / cout_g;
      for (long y = 0; y < oh; ++y) {
        for (long xx = 0; xx < ow; ++xx) {
          long double acc = bias ? (*bias)[co] : 0;
          for (long ci = 0; ci < cin_g; ++ci) {
            for (long ky = 0; ky < k; ++ky) {
              for (long kx = 0; kx < k; ++kx) {
                const long iy = y * s - p + ky, ix = xx * s - p + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += static_cast<long double>(x.at(b, grp * cin_g + ci, iy, ix)) *
                       w[((co * cin_g + ci) * k + ky) * k + kx];
              }
            }
          }
          out.at(b, co, y, xx) = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

/// w~[t] = sum_i eta[t*g+i] * bank[t*g+i], element by element.
template <typename T>
Tensor<T> fuse(const Tensor<T>& bank, std::span<const T> eta, std::size_t g) {
  const std::size_t cout = bank.dim(0) / g;
  const std::size_t per = bank.numel() / bank.dim(0);
  Tensor<T> out({cout, bank.dim(1), bank.dim(2), bank.dim(3)});
  for (std::size_t t = 0; t < cout; ++t) {
    for (std::size_t e = 0; e < per; ++e) {
      long double acc = 0;
      for (std::size_t i = 0; i < g; ++i) acc += static_cast<long double>(eta[t * g + i]) * bank[(t * g + i) * per + e];
      out[t * per + e] = static_cast<T>(acc);
    }
  }
  return out;
}

/// Mean of each H x W plane by plain summation.
template <typename T>
std::vector<double> plane_means(const Tensor<T>& x) {
  std::vector<double> out;
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p) {
    long double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += x[p * plane + i];
    out.push_back(static_cast<double>(s / plane));
  }
  return out;
}

/// pool -> dot products -> (relu -> dot products) -> 1 / (1 + exp(-z)).
template <typename T>
std::vector<double> predictor(const dynet::CoefficientPredictor<T>& p, const Tensor<T>& x, std::size_t sample) {
  const std::size_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> pooled(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += x[(sample * c + ch) * plane + i];
    pooled[ch] = s / static_cast<double>(plane);
  }
  auto dense = [](const Tensor<T>& w, const Tensor<T>& b, const std::vector<double>& in) {
    std::vector<double> out(w.dim(0));
    for (std::size_t o = 0; o < out.size(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in.size(); ++i) s += w[o * in.size() + i] * in[i];
      out[o] = s;
    }
    return out;
  };
  std::vector<double> z = dense(p.w1, p.b1, pooled);
  if (p.hidden) {
    for (double& v : z) v = std::max(0.0, v);
    z = dense(p.w2, p.b2, z);
  }
  for (double& v : z) v = 1.0 / (1.0 + std::exp(-v));
  return z;
}

/// Sum-of-products form r = (n Suv - Su Sv) / sqrt((n Suu - Su^2)(n Svv - Sv^2)).
inline double pearson(const std::vector<double>& u, const std::vector<double>& v) {
  long double n = static_cast<long double>(u.size()), su = 0, sv = 0, suu = 0, svv = 0, suv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    su += u[i];
    sv += v[i];
    suu += static_cast<long double>(u[i]) * u[i];
    svv += static_cast<long double>(v[i]) * v[i];
    suv += static_cast<long double>(u[i]) * v[i];
  }
  return static_cast<double>((n * suv - su * sv) / std::sqrt((n * suu - su * su) * (n * svv - sv * sv)));
}

/// |a - n| / max(|a|, |n|, floor)
inline double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central-difference check of every entry of every parameter (or a seeded
/// sample of at most `max_per_param` entries). `loss` builds a fresh tape
/// over the parameters and returns its scalar loss node.
inline GradCheckResult grad_check(std::vector<dynet::Parameter<double>*> params,
                                  const std::function<dynet::NodeId(dynet::Graph<double>&)>& loss,
                                  double step = 1e-5, std::size_t max_per_param = 0, std::uint64_t seed = 1) {
  for (auto* p : params) p->zero_grad();
  {
    dynet::Graph<double> g;
    g.backward(loss(g));
  }
  auto eval = [&] {
    dynet::Graph<double> g;
    return g.value(loss(g))[0];
  };
  dynet::Rng rng(seed);
  GradCheckResult r;
  for (auto* p : params) {
    std::vector<std::size_t> idx(p->value.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_param && idx.size() > max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_param);
    }
    for (std::size_t i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double up = eval();
      p->value[i] = orig - step;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double e = rel_err(p->grad[i], numeric);
      ++r.checked;
      if (e > r.max_rel_err) {
        r.max_rel_err = e;
        r.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(p->grad[i]) + " numeric " +
                  std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace oracle
