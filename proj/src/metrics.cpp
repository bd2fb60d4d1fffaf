// SPDX-License-Identifier: Apache-2.0
#include "ccpc/metrics.hpp"

#include <array>
#include <cmath>

namespace ccpc::metrics {

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse of " + a.shape().str() + " and " +
                         b.shape().str());
  }
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return a.size() ? acc / static_cast<double>(a.size()) : 0.0;
}

double psnr_from_mse(double m) {
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

template <typename T>
Tensor<T> to_8bit(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(static_cast<double>(x[i]), 0.0, 1.0);
    out[i] = static_cast<T>(std::round(v * 255.0) / 255.0);
  }
  return out;
}

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& x_hat) {
  return psnr_from_mse(mse(to_8bit(x), to_8bit(x_hat)));
}

// ---------------------------------------------------------------- MS-SSIM

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 5> kWeights = {0.0448, 0.2856, 0.3001, 0.2363,
                                            0.1333};
constexpr int kMinSide = 160;

std::array<double, kWin> gaussian() {
  std::array<double, kWin> g{};
  double total = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int h, int w) : h(h), w(w), v(static_cast<std::size_t>(h) * w, 0.0) {}
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Valid separable Gaussian blur; an axis shorter than the window is left
// unfiltered.
Plane blur(const Plane& in) {
  static const auto g = gaussian();
  const bool fx = in.w >= kWin, fy = in.h >= kWin;
  const int ow = fx ? in.w - kWin + 1 : in.w;
  const int oh = fy ? in.h - kWin + 1 : in.h;
  Plane tmp(in.h, ow);
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < ow; ++x) {
      if (!fx) {
        tmp.at(y, x) = in.at(y, x);
        continue;
      }
      double acc = 0;
      for (int k = 0; k < kWin; ++k) acc += g[k] * in.at(y, x + k);
      tmp.at(y, x) = acc;
    }
  }
  Plane out(oh, ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      if (!fy) {
        out.at(y, x) = tmp.at(y, x);
        continue;
      }
      double acc = 0;
      for (int k = 0; k < kWin; ++k) acc += g[k] * tmp.at(y + k, x);
      out.at(y, x) = acc;
    }
  }
  return out;
}

// Adjoint of blur() for an input of size h x w.
Plane blur_adjoint(const Plane& gout, int h, int w) {
  static const auto g = gaussian();
  const bool fx = w >= kWin, fy = h >= kWin;
  Plane tmp(h, gout.w);
  for (int y = 0; y < gout.h; ++y) {
    for (int x = 0; x < gout.w; ++x) {
      const double v = gout.at(y, x);
      if (!fy) {
        tmp.at(y, x) += v;
        continue;
      }
      for (int k = 0; k < kWin; ++k) tmp.at(y + k, x) += g[k] * v;
    }
  }
  Plane out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < gout.w; ++x) {
      const double v = tmp.at(y, x);
      if (!fx) {
        out.at(y, x) += v;
        continue;
      }
      for (int k = 0; k < kWin; ++k) out.at(y, x + k) += g[k] * v;
    }
  }
  return out;
}

// 2x2 average pooling, zero padding of one on odd axes counted in the mean.
Plane downsample(const Plane& in) {
  const int py = in.h % 2, px = in.w % 2;
  const int oh = (in.h + 2 * py - 2) / 2 + 1;
  const int ow = (in.w + 2 * px - 2) / 2 + 1;
  Plane out(oh, ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const int iy = 2 * y - py + a, ix = 2 * x - px + b;
          if (iy >= 0 && iy < in.h && ix >= 0 && ix < in.w) acc += in.at(iy, ix);
        }
      }
      out.at(y, x) = acc / 4.0;
    }
  }
  return out;
}

void downsample_adjoint(const Plane& gout, Plane& gin) {
  const int py = gin.h % 2, px = gin.w % 2;
  for (int y = 0; y < gout.h; ++y) {
    for (int x = 0; x < gout.w; ++x) {
      const double v = gout.at(y, x) / 4.0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const int iy = 2 * y - py + a, ix = 2 * x - px + b;
          if (iy >= 0 && iy < gin.h && ix >= 0 && ix < gin.w) {
            gin.at(iy, ix) += v;
          }
        }
      }
    }
  }
}

Plane product(const Plane& a, const Plane& b) {
  Plane out(a.h, a.w);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

struct Scale {
  Plane x, y;
  Plane mx, my, sxx, syy, sxy;
  double cs = 0, ss = 0;
};

void scale_stats(Scale& s) {
  s.mx = blur(s.x);
  s.my = blur(s.y);
  Plane exx = blur(product(s.x, s.x));
  Plane eyy = blur(product(s.y, s.y));
  Plane exy = blur(product(s.x, s.y));
  const std::size_t p = s.mx.v.size();
  s.sxx = Plane(s.mx.h, s.mx.w);
  s.syy = s.sxx;
  s.sxy = s.sxx;
  double cs = 0, ss = 0;
  for (std::size_t i = 0; i < p; ++i) {
    const double mx = s.mx.v[i], my = s.my.v[i];
    s.sxx.v[i] = exx.v[i] - mx * mx;
    s.syy.v[i] = eyy.v[i] - my * my;
    s.sxy.v[i] = exy.v[i] - mx * my;
    const double c = (2 * s.sxy.v[i] + kC2) / (s.sxx.v[i] + s.syy.v[i] + kC2);
    const double l = (2 * mx * my + kC1) / (mx * mx + my * my + kC1);
    cs += c;
    ss += l * c;
  }
  s.cs = cs / static_cast<double>(p);
  s.ss = ss / static_cast<double>(p);
}

// Gradient of the scale's mean cs (weight gc) and mean ssim (weight gs)
// with respect to its y plane.
Plane scale_backward(const Scale& s, double gc, double gs) {
  const std::size_t p = s.mx.v.size();
  const double inv = 1.0 / static_cast<double>(p);
  Plane dmy(s.mx.h, s.mx.w), dexy(s.mx.h, s.mx.w), deyy(s.mx.h, s.mx.w);
  for (std::size_t i = 0; i < p; ++i) {
    const double mx = s.mx.v[i], my = s.my.v[i];
    const double a = 2 * s.sxy.v[i] + kC2;
    const double b = s.sxx.v[i] + s.syy.v[i] + kC2;
    const double c = a / b;
    const double a1 = 2 * mx * my + kC1;
    const double b1 = mx * mx + my * my + kC1;
    const double l = a1 / b1;
    const double g_c = gc * inv + gs * inv * l;
    const double g_l = gs * inv * c;
    const double da = g_c / b;
    const double db = -g_c * a / (b * b);
    const double dsxy = 2 * da;
    const double dsyy = db;
    dmy.v[i] = g_l * (2 * mx / b1 - a1 * 2 * my / (b1 * b1)) - dsxy * mx -
               2 * my * dsyy;
    dexy.v[i] = dsxy;
    deyy.v[i] = dsyy;
  }
  Plane gy = blur_adjoint(dmy, s.y.h, s.y.w);
  const Plane gxy = blur_adjoint(dexy, s.y.h, s.y.w);
  const Plane gyy = blur_adjoint(deyy, s.y.h, s.y.w);
  for (std::size_t i = 0; i < gy.v.size(); ++i) {
    gy.v[i] += s.x.v[i] * gxy.v[i] + 2 * s.y.v[i] * gyy.v[i];
  }
  return gy;
}

}  // namespace

template <typename T>
double ms_ssim(const Tensor<T>& x, const Tensor<T>& y, Tensor<T>* grad) {
  if (x.shape() != y.shape()) {
    throw DimensionError("ms_ssim of " + x.shape().str() + " and " +
                         y.shape().str());
  }
  if (std::min(x.h(), x.w()) < kMinSide) {
    throw DimensionError("ms_ssim needs min(H, W) >= 160, got " +
                         x.shape().str());
  }
  if (grad) *grad = Tensor<T>(y.shape());
  const int planes = x.n() * x.c();
  double total = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      std::array<Scale, 5> sc;
      sc[0].x = Plane(x.h(), x.w());
      sc[0].y = Plane(x.h(), x.w());
      const T* px = x.plane(n, c);
      const T* py = y.plane(n, c);
      for (std::size_t i = 0; i < sc[0].x.v.size(); ++i) {
        sc[0].x.v[i] = static_cast<double>(px[i]);
        sc[0].y.v[i] = static_cast<double>(py[i]);
      }
      for (int j = 0; j < 5; ++j) {
        if (j > 0) {
          sc[j].x = downsample(sc[j - 1].x);
          sc[j].y = downsample(sc[j - 1].y);
        }
        scale_stats(sc[j]);
      }
      std::array<double, 5> f{};
      double value = 1;
      for (int j = 0; j < 5; ++j) {
        f[j] = std::max(j < 4 ? sc[j].cs : sc[j].ss, 0.0);
        value *= std::pow(f[j], kWeights[j]);
      }
      total += value;
      if (!grad) continue;
      Plane up;
      for (int j = 4; j >= 0; --j) {
        const double dfj =
            f[j] > 0 ? value * kWeights[j] / f[j] / planes : 0.0;
        Plane gy = j < 4 ? scale_backward(sc[j], dfj, 0.0)
                         : scale_backward(sc[j], 0.0, dfj);
        if (j < 4) downsample_adjoint(up, gy);
        up = std::move(gy);
      }
      T* g = grad->plane(n, c);
      for (std::size_t i = 0; i < up.v.size(); ++i) {
        g[i] = static_cast<T>(up.v[i]);
      }
    }
  }
  return total / planes;
}

// ---------------------------------------------------------------- BD-rate

std::vector<double> polyfit(std::span<const double> x,
                            std::span<const double> y, int degree) {
  const int n = degree + 1;
  if (x.size() != y.size() || static_cast<int>(x.size()) < n) {
    throw InvalidParamsError("polyfit needs at least degree + 1 points");
  }
  // Normal equations in long double with partial pivoting.
  std::vector<long double> a(static_cast<std::size_t>(n) * (n + 1), 0.0L);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<long double> pw(2 * n, 1.0L);
    for (int k = 1; k < 2 * n; ++k) pw[k] = pw[k - 1] * x[i];
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) a[r * (n + 1) + c] += pw[r + c];
      a[r * (n + 1) + n] += pw[r] * y[i];
    }
  }
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::fabs(a[r * (n + 1) + col]) > std::fabs(a[piv * (n + 1) + col])) {
        piv = r;
      }
    }
    if (a[piv * (n + 1) + col] == 0.0L) {
      throw InvalidParamsError("polyfit: singular system");
    }
    for (int c = 0; c <= n; ++c) {
      std::swap(a[col * (n + 1) + c], a[piv * (n + 1) + c]);
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const long double f = a[r * (n + 1) + col] / a[col * (n + 1) + col];
      for (int c = col; c <= n; ++c) a[r * (n + 1) + c] -= f * a[col * (n + 1) + c];
    }
  }
  std::vector<double> coef(n);
  for (int r = 0; r < n; ++r) {
    coef[r] = static_cast<double>(a[r * (n + 1) + n] / a[r * (n + 1) + r]);
  }
  return coef;
}

namespace {

double poly_integral(const std::vector<double>& c, double lo, double hi) {
  double a = 0, b = 0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double e = static_cast<double>(k + 1);
    a += c[k] * std::pow(lo, e) / e;
    b += c[k] * std::pow(hi, e) / e;
  }
  return b - a;
}

}  // namespace

double bd_rate(std::span<const RdPoint> a, std::span<const RdPoint> b) {
  if (a.size() < 4 || b.size() < 4) {
    throw InvalidParamsError("bd_rate needs at least 4 points per curve");
  }
  double center = 0;
  for (const auto& p : a) center += p.psnr;
  for (const auto& p : b) center += p.psnr;
  center /= static_cast<double>(a.size() + b.size());
  auto fit = [&](std::span<const RdPoint> pts, double& lo, double& hi) {
    std::vector<double> q, r;
    lo = INFINITY;
    hi = -INFINITY;
    for (const auto& p : pts) {
      if (!(p.bpp > 0)) throw InvalidParamsError("bd_rate: bpp must be > 0");
      q.push_back(p.psnr - center);
      r.push_back(std::log(p.bpp));
      lo = std::min(lo, p.psnr - center);
      hi = std::max(hi, p.psnr - center);
    }
    return polyfit(q, r, 3);
  };
  double alo, ahi, blo, bhi;
  const auto pa = fit(a, alo, ahi);
  const auto pb = fit(b, blo, bhi);
  const double lo = std::max(alo, blo), hi = std::min(ahi, bhi);
  if (!(hi > lo)) throw InvalidParamsError("bd_rate: curves do not overlap");
  const double diff =
      (poly_integral(pa, lo, hi) - poly_integral(pb, lo, hi)) / (hi - lo);
  return (std::exp(diff) - 1.0) * 100.0;
}

#define CCPC_INSTANTIATE(T)                                               \
  template double mse<T>(const Tensor<T>&, const Tensor<T>&);             \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> to_8bit<T>(const Tensor<T>&);                        \
  template double ms_ssim<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);

CCPC_INSTANTIATE(float)
CCPC_INSTANTIATE(double)

}  // namespace ccpc::metrics
