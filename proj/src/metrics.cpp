#include "mscnn/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

namespace mscnn {

double mse(const Plane8& a, const Plane8& b) {
  if (a.width != b.width || a.height != b.height)
    throw Error("psnr: plane sizes differ (" + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  if (a.empty()) throw Error("psnr: empty planes");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

double psnr_from_mse(double m, double peak) {
  if (m == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(peak * peak / m);
}

double psnr(const Plane8& a, const Plane8& b, double peak) { return psnr_from_mse(mse(a, b), peak); }

double sequence_psnr(const std::vector<Plane8>& a, const std::vector<Plane8>& b, double peak) {
  if (a.size() != b.size() || a.empty()) throw Error("sequence_psnr: frame counts differ or are zero");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += mse(a[i], b[i]);
  return psnr_from_mse(total / static_cast<double>(a.size()), peak);
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin> gaussian_taps() {
  std::array<double, kWin> g{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable valid-mode filtering.
std::vector<double> blur(const std::vector<double>& src, std::size_t w, std::size_t h) {
  const auto g = gaussian_taps();
  const std::size_t ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(ow * h), out(ow * oh);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * src[y * w + x + k];
      tmp[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const Plane8& a, const Plane8& b) {
  if (a.width != b.width || a.height != b.height) throw Error("ssim: plane sizes differ");
  if (a.width < kWin || a.height < kWin) throw Error("ssim: planes must be at least 11x11");
  const std::size_t w = a.width, h = a.height, n = w * h;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.data[i];
    y[i] = b.data[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = blur(x, w, h), my = blur(y, w, h), sxx = blur(xx, w, h), syy = blur(yy, w, h),
             sxy = blur(xy, w, h);
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

std::string RdCurve::validate() const {
  if (points.size() < 4)
    throw Error("RD curve '" + label + "' has " + std::to_string(points.size()) + " points, at least 4 are needed");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].bitrate > 0.0) || !std::isfinite(points[i].bitrate) || !std::isfinite(points[i].psnr))
      throw Error("RD curve '" + label + "': bitrates must be positive and values finite");
    if (i > 0 && !(points[i].bitrate > points[i - 1].bitrate))
      throw Error("RD curve '" + label + "': bitrates must be strictly increasing");
  }
  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i].psnr < points[i - 1].psnr) return "RD curve '" + label + "': quality decreases with bitrate";
  return {};
}

std::vector<double> fit_cubic(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 4) throw Error("fit_cubic: need at least 4 matching samples");
  Eigen::MatrixXd v(x.size(), 4);
  Eigen::VectorXd rhs(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int k = 0; k < 4; ++k) v(i, k) = std::pow(x[i], k);
    rhs(i) = y[i];
  }
  const Eigen::VectorXd c = v.colPivHouseholderQr().solve(rhs);
  return {c(0), c(1), c(2), c(3)};
}

double eval_poly(const std::vector<double>& c, double x) {
  double r = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) r = r * x + c[k];
  return r;
}

double integrate_poly(const std::vector<double>& c, double lo, double hi) {
  std::vector<double> anti(c.size() + 1, 0.0);
  for (std::size_t k = 0; k < c.size(); ++k) anti[k + 1] = c[k] / static_cast<double>(k + 1);
  return eval_poly(anti, hi) - eval_poly(anti, lo);
}

namespace {

// Mean gap (test - anchor) of y fitted over x on the common x interval.
BdResult mean_gap(const std::vector<double>& xa, const std::vector<double>& ya, const std::vector<double>& xt,
                  const std::vector<double>& yt) {
  const double lo = std::max(*std::min_element(xa.begin(), xa.end()), *std::min_element(xt.begin(), xt.end()));
  const double hi = std::min(*std::max_element(xa.begin(), xa.end()), *std::max_element(xt.begin(), xt.end()));
  if (!(hi > lo)) throw Error("RD curves do not overlap");
  const auto pa = fit_cubic(xa, ya), pt = fit_cubic(xt, yt);
  return {(integrate_poly(pt, lo, hi) - integrate_poly(pa, lo, hi)) / (hi - lo), lo, hi};
}

void split(const RdCurve& c, std::vector<double>& log_rate, std::vector<double>& quality) {
  c.validate();
  for (const RdPoint& p : c.points) {
    log_rate.push_back(std::log10(p.bitrate));
    quality.push_back(p.psnr);
  }
}

}  // namespace

BdResult bd_rate(const RdCurve& anchor, const RdCurve& test) {
  std::vector<double> ra, qa, rt, qt;
  split(anchor, ra, qa);
  split(test, rt, qt);
  BdResult r = mean_gap(qa, ra, qt, rt);
  r.value = (std::pow(10.0, r.value) - 1.0) * 100.0;
  return r;
}

BdResult bd_psnr(const RdCurve& anchor, const RdCurve& test) {
  std::vector<double> ra, qa, rt, qt;
  split(anchor, ra, qa);
  split(test, rt, qt);
  return mean_gap(ra, qa, rt, qt);
}

RdCurve read_rd_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  RdCurve c;
  c.label = path.stem().string();
  std::string line;
  if (!std::getline(in, line) || line != "bitrate_kbps,psnr_db")
    throw Error("'" + path.string() + "': expected header 'bitrate_kbps,psnr_db'");
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    RdPoint p;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf%c", &p.bitrate, &p.psnr, &tail) != 2)
      throw Error("'" + path.string() + "' line " + std::to_string(row) + ": malformed row '" + line + "'");
    c.points.push_back(p);
  }
  return c;
}

void write_rd_csv(const RdCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "bitrate_kbps,psnr_db\n";
  char line[96];
  for (const RdPoint& p : curve.points) {
    std::snprintf(line, sizeof line, "%.10g,%.10g\n", p.bitrate, p.psnr);
    out << line;
  }
}

void append_rd_point(const RdPoint& point, const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  if (fresh) out << "bitrate_kbps,psnr_db\n";
  char line[96];
  std::snprintf(line, sizeof line, "%.10g,%.10g\n", point.bitrate, point.psnr);
  out << line;
}

}  // namespace mscnn
