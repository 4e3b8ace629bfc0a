#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "mscnn/metrics.hpp"
#include "oracles.hpp"

using namespace mscnn;

namespace {

// Direct windowed statistics at every valid position.
double ssim_oracle(const Plane8& a, const Plane8& b) {
  double g[11][11], sum = 0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) sum += g[y][x] = std::exp(-((x - 5) * (x - 5) + (y - 5) * (y - 5)) / 4.5);
  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + 11 <= a.height; ++y0)
    for (std::size_t x0 = 0; x0 + 11 <= a.width; ++x0) {
      double mx = 0, my = 0;
      for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
          mx += g[y][x] / sum * a.at(x0 + x, y0 + y);
          my += g[y][x] / sum * b.at(x0 + x, y0 + y);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
          const double dx = a.at(x0 + x, y0 + y) - mx, dy = b.at(x0 + x, y0 + y) - my;
          vx += g[y][x] / sum * dx * dx;
          vy += g[y][x] / sum * dy * dy;
          cxy += g[y][x] / sum * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

double lagrange(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  double r = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double l = 1;
    for (std::size_t j = 0; j < xs.size(); ++j)
      if (j != i) l *= (x - xs[j]) / (xs[i] - xs[j]);
    r += ys[i] * l;
  }
  return r;
}

// Dense midpoint quadrature of the interpolating cubics on 10k samples.
double gap_oracle(const std::vector<double>& xa, const std::vector<double>& ya, const std::vector<double>& xt,
                  const std::vector<double>& yt) {
  const double lo = std::max(*std::min_element(xa.begin(), xa.end()), *std::min_element(xt.begin(), xt.end()));
  const double hi = std::min(*std::max_element(xa.begin(), xa.end()), *std::max_element(xt.begin(), xt.end()));
  const int n = 10000;
  double s = 0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + (i + 0.5) * (hi - lo) / n;
    s += lagrange(xt, yt, x) - lagrange(xa, ya, x);
  }
  return s / n;
}

RdCurve curve(std::vector<double> rates, std::vector<double> psnrs) {
  RdCurve c;
  for (std::size_t i = 0; i < rates.size(); ++i) c.points.push_back({rates[i], psnrs[i]});
  return c;
}

}  // namespace

TEST_CASE("psnr") {
  Plane8 a(16, 16, 100), b(16, 16, 101), c(16, 16, 102);
  CHECK(psnr(a, a) == kPsnrInfinity);
  CHECK(std::abs(psnr(a, b) - 48.1308) < 1e-3);
  CHECK(std::abs(psnr(a, b) - psnr(a, c) - 6.0206) < 1e-4);
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(psnr(a, Plane8(16, 15)), Error);
  CHECK(sequence_psnr({a, a}, {b, a}) == doctest::Approx(psnr_from_mse(0.5)));
}

TEST_CASE("ssim") {
  const Plane8 x = oracle::synthetic_image(48, 40, 1);
  Plane8 inv = x;
  for (auto& v : inv.data) v = static_cast<std::uint8_t>(255 - v);
  CHECK(std::abs(ssim(x, x) - 1.0) < 1e-9);
  CHECK(ssim(x, inv) == ssim(inv, x));
  CHECK(ssim(x, inv) < 0.5);
  CHECK(ssim(x, inv) == doctest::Approx(ssim_oracle(x, inv)).epsilon(1e-9));

  std::mt19937_64 rng(2);
  Plane8 r(32, 32), rinv(32, 32);
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    r.data[i] = static_cast<std::uint8_t>(rng());
    rinv.data[i] = static_cast<std::uint8_t>(255 - r.data[i]);
  }
  CHECK(ssim(r, rinv) < 0.5);
  CHECK(ssim(r, rinv) == doctest::Approx(ssim_oracle(r, rinv)).epsilon(1e-9));
  Plane8 noisy = x;
  for (auto& v : noisy.data) v = static_cast<std::uint8_t>(std::clamp<int>(v + int(rng() % 31) - 15, 0, 255));
  CHECK(ssim(x, noisy) == doctest::Approx(ssim_oracle(x, noisy)).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(Plane8(10, 20), Plane8(10, 20)), Error);
}

TEST_CASE("cubic fit and closed-form integral") {
  const std::vector<double> c{1.0, -2.0, 0.5, 0.25};
  std::vector<double> x{30, 33, 36, 39, 41}, y;
  for (double v : x) y.push_back(eval_poly(c, v));
  const auto fit = fit_cubic(x, y);
  for (int k = 0; k < 4; ++k) CHECK(fit[k] == doctest::Approx(c[k]).epsilon(1e-6));
  CHECK(integrate_poly({0, 0, 3}, 0, 2) == doctest::Approx(8.0));
}

TEST_CASE("Bjontegaard deltas") {
  const RdCurve a = curve({100, 200, 400, 800}, {30.0, 33.1, 35.9, 38.2});
  CHECK(std::abs(bd_rate(a, a).value) < 1e-9);
  CHECK(bd_psnr(a, a).value == 0.0);

  RdCurve up = a;
  for (auto& p : up.points) p.bitrate *= 1.10;
  CHECK(std::abs(bd_rate(a, up).value - 10.0) < 0.01);
  RdCurve better = a;
  for (auto& p : better.points) p.psnr += 1.0;
  CHECK(std::abs(bd_psnr(a, better).value - 1.0) < 1e-6);
  CHECK(bd_rate(a, better).value < 0.0);

  const RdCurve t = curve({90, 210, 380, 900}, {30.4, 33.0, 36.3, 38.9});
  CHECK(bd_psnr(a, t).value == doctest::Approx(-bd_psnr(t, a).value).epsilon(1e-9));

  std::vector<double> ra, qa, rt, qt;
  for (auto& p : a.points) ra.push_back(std::log10(p.bitrate)), qa.push_back(p.psnr);
  for (auto& p : t.points) rt.push_back(std::log10(p.bitrate)), qt.push_back(p.psnr);
  const double rate_oracle = (std::pow(10.0, gap_oracle(qa, ra, qt, rt)) - 1) * 100;
  CHECK(std::abs(bd_rate(a, t).value - rate_oracle) < 0.05);
  CHECK(std::abs(bd_psnr(a, t).value - gap_oracle(ra, qa, rt, qt)) < 0.005);

  CHECK_THROWS_AS(bd_rate(a, curve({1, 2, 3}, {1, 2, 3})), Error);
  CHECK_THROWS_AS(bd_rate(a, curve({100, 200, 400, 800}, {50, 51, 52, 53})), Error);
  CHECK_THROWS_AS(curve({100, 100, 400, 800}, {1, 2, 3, 4}).validate(), Error);
  CHECK_FALSE(curve({100, 200, 400, 800}, {4, 3, 5, 6}).validate().empty());
}

TEST_CASE("RD CSV") {
  const auto dir = std::filesystem::temp_directory_path() / "mscnn_test_rd";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const RdCurve a = curve({100, 200, 400, 800}, {30.0, 33.1, 35.9, 38.25});
  write_rd_csv(a, dir / "a.csv");
  const RdCurve back = read_rd_csv(dir / "a.csv");
  REQUIRE(back.points.size() == 4);
  CHECK(back.points[3].psnr == 38.25);
  append_rd_point({50, 28}, dir / "b.csv");
  append_rd_point({60, 29}, dir / "b.csv");
  CHECK(read_rd_csv(dir / "b.csv").points.size() == 2);
  std::ofstream(dir / "bad.csv") << "bitrate_kbps,psnr_db\n100;30\n";
  CHECK_THROWS_AS(read_rd_csv(dir / "bad.csv"), Error);
  std::ofstream(dir / "hdr.csv") << "rate,psnr\n";
  CHECK_THROWS_AS(read_rd_csv(dir / "hdr.csv"), Error);
  std::filesystem::remove_all(dir);
}
