#pragma once

// PSNR, SSIM, and Bjontegaard deltas between rate-distortion curves.

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mscnn/data.hpp"

namespace mscnn {

/// Returned when the two inputs are identical.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

double mse(const Plane8& a, const Plane8& b);
double psnr_from_mse(double mse, double peak = 255.0);
double psnr(const Plane8& a, const Plane8& b, double peak = 255.0);
/// PSNR of the mean per-frame MSE.
double sequence_psnr(const std::vector<Plane8>& a, const std::vector<Plane8>& b, double peak = 255.0);

/// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, averaged over
/// every window position that fits inside the plane.
double ssim(const Plane8& a, const Plane8& b);

struct RdPoint {
  double bitrate = 0.0;  // kbps
  double psnr = 0.0;     // dB
};

struct RdCurve {
  std::string label;
  std::vector<RdPoint> points;

  /// Throws on fewer than 4 points or non-increasing bitrate. Returns a
  /// warning text (empty if none) when quality decreases with bitrate.
  std::string validate() const;
};

/// Least-squares cubic through (x, y), exact on 4 points. Coefficients are in
/// ascending powers of x.
std::vector<double> fit_cubic(const std::vector<double>& x, const std::vector<double>& y);
double eval_poly(const std::vector<double>& c, double x);
/// Closed-form integral of the polynomial over [lo, hi].
double integrate_poly(const std::vector<double>& c, double lo, double hi);

struct BdResult {
  double value = 0.0;
  double lo = 0.0;  // common interval used
  double hi = 0.0;
};

/// Average bitrate difference in percent at equal PSNR; negative = test saves bits.
BdResult bd_rate(const RdCurve& anchor, const RdCurve& test);
/// Average PSNR difference in dB at equal bitrate; positive = test is better.
BdResult bd_psnr(const RdCurve& anchor, const RdCurve& test);

/// Header "bitrate_kbps,psnr_db".
RdCurve read_rd_csv(const std::filesystem::path& path);
void write_rd_csv(const RdCurve& curve, const std::filesystem::path& path);
void append_rd_point(const RdPoint& point, const std::filesystem::path& path);

}  // namespace mscnn
