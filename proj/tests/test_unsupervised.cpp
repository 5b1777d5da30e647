#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "cdtk/rng.hpp"
#include "cdtk/unsupervised.hpp"

using namespace cdtk;

namespace {

NormStats unit_stats(std::uint32_t bands) {
  NormStats st;
  st.mean.assign(bands, 0.0f);
  st.stddev.assign(bands, 1.0f);
  st.zero_variance.assign(bands, false);
  return st;
}

// Exhaustive-search oracle: rebuilds the histogram and evaluates every one
// of the 255 candidate edges with fresh sums, lowest edge on ties.
double otsu_oracle(const MagnitudeMap& values) {
  double lo = values.data[0], hi = values.data[0];
  for (const float v : values.data) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  REQUIRE(hi > lo);
  std::array<std::int64_t, 256> hist{};
  for (const float v : values.data) {
    int idx = static_cast<int>((static_cast<double>(v) - lo) / (hi - lo) * 256);
    idx = std::clamp(idx, 0, 255);
    ++hist[static_cast<std::size_t>(idx)];
  }
  int best_edge = 1;
  double best = -1.0;
  for (int e = 1; e < 256; ++e) {
    std::int64_t w0 = 0, s0 = 0, w1 = 0, s1 = 0;
    for (int i = 0; i < e; ++i) {
      w0 += hist[static_cast<std::size_t>(i)];
      s0 += static_cast<std::int64_t>(i) * hist[static_cast<std::size_t>(i)];
    }
    for (int i = e; i < 256; ++i) {
      w1 += hist[static_cast<std::size_t>(i)];
      s1 += static_cast<std::int64_t>(i) * hist[static_cast<std::size_t>(i)];
    }
    double var = 0.0;
    if (w0 != 0 && w1 != 0) {
      const double mu0 = static_cast<double>(s0) / static_cast<double>(w0);
      const double mu1 = static_cast<double>(s1) / static_cast<double>(w1);
      var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) *
            (mu0 - mu1);
    }
    if (var > best) {
      best = var;
      best_edge = e;
    }
  }
  return lo + static_cast<double>(best_edge) * (hi - lo) / 256.0;
}

}  // namespace

TEST_CASE("cva magnitude of an identical pair is zero", "[unsupervised]") {
  Rng rng(1);
  Raster pre(5, 6, 3);
  for (auto& v : pre.data) v = static_cast<float>(rng.uniform(0, 100));
  const MagnitudeMap mag = cva_magnitude(pre, pre, unit_stats(3));
  for (const float v : mag.data) CHECK(v == 0.0f);
}

TEST_CASE("single-band magnitude equals the absolute difference",
          "[unsupervised]") {
  Raster pre(1, 2, 1), post(1, 2, 1);
  pre.data = {1.0f, 5.0f};
  post.data = {4.0f, 5.0f};
  const MagnitudeMap mag = cva_magnitude(pre, post, unit_stats(1));
  CHECK(mag.data[0] == 3.0f);
  CHECK(mag.data[1] == 0.0f);
}

TEST_CASE("magnitude is symmetric in pre and post", "[unsupervised]") {
  Rng rng(3);
  Raster pre(4, 4, 2), post(4, 4, 2);
  for (auto& v : pre.data) v = static_cast<float>(rng.uniform(0, 50));
  for (auto& v : post.data) v = static_cast<float>(rng.uniform(0, 50));
  const MagnitudeMap ab = cva_magnitude(pre, post, unit_stats(2));
  const MagnitudeMap ba = cva_magnitude(post, pre, unit_stats(2));
  CHECK(ab.data == ba.data);
}

TEST_CASE("standardization cancels per-band gain", "[unsupervised]") {
  Rng rng(5);
  Raster pre(6, 6, 2), post(6, 6, 2);
  for (auto& v : pre.data) v = static_cast<float>(rng.uniform(10, 90));
  for (auto& v : post.data) v = static_cast<float>(rng.uniform(10, 90));
  NormStats st;
  st.mean = {30.0f, 40.0f};
  st.stddev = {8.0f, 4.0f};
  st.zero_variance = {false, false};
  const MagnitudeMap base = cva_magnitude(pre, post, st);

  // scale band 0 of both images by c and the stats with it
  const float c = 2.5f;
  Raster pre2 = pre, post2 = post;
  const std::size_t plane = 36;
  for (std::size_t i = 0; i < plane; ++i) {
    pre2.data[i] *= c;
    post2.data[i] *= c;
  }
  NormStats st2 = st;
  st2.mean[0] *= c;
  st2.stddev[0] *= c;
  const MagnitudeMap scaled = cva_magnitude(pre2, post2, st2);
  for (std::size_t i = 0; i < plane; ++i)
    CHECK_THAT(scaled.data[i],
               Catch::Matchers::WithinAbs(base.data[i], 1e-4));
}

TEST_CASE("cva rejects shape and band mismatches", "[unsupervised]") {
  CHECK_THROWS_AS(
      cva_magnitude(Raster(2, 2, 1), Raster(2, 3, 1), unit_stats(1)),
      ValidationError);
  CHECK_THROWS_AS(
      cva_magnitude(Raster(2, 2, 2), Raster(2, 2, 2), unit_stats(1)),
      ValidationError);
}

TEST_CASE("otsu separates a two-point distribution exactly", "[unsupervised]") {
  MagnitudeMap mag(10, 10, 1);
  for (std::size_t i = 0; i < 100; ++i)
    mag.data[i] = i < 50 ? 0.0f : 10.0f;
  const OtsuResult r = otsu_threshold(mag);
  CHECK_FALSE(r.degenerate);
  CHECK(r.threshold > 0.0);
  CHECK(r.threshold < 10.0);
  std::size_t low = 0, high = 0;
  for (const float v : mag.data)
    (static_cast<double>(v) > r.threshold ? high : low)++;
  CHECK(low == 50);
  CHECK(high == 50);
}

TEST_CASE("constant map yields a degenerate threshold and empty mask",
          "[unsupervised]") {
  const MagnitudeMap mag(4, 4, 1, 3.0f);
  const OtsuResult r = otsu_threshold(mag);
  CHECK(r.degenerate);
  CHECK(r.threshold == 3.0);

  Raster pre(4, 4, 1, 7.0f);
  const CvaOtsuResult out = cva_otsu_change(pre, pre, unit_stats(1));
  CHECK(out.degenerate);
  for (const auto l : out.mask.labels) CHECK(l == ChangeMask::kUnchanged);
}

TEST_CASE("otsu equals the exhaustive-search oracle", "[unsupervised]") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    MagnitudeMap mag(16, 16, 1);
    // bimodal sample with random modes and mixing
    const double m1 = rng.uniform(0.0, 2.0), m2 = rng.uniform(4.0, 10.0);
    const double p = rng.uniform(0.2, 0.8);
    for (auto& v : mag.data) {
      const double mode = rng.uniform01() < p ? m1 : m2;
      v = static_cast<float>(std::abs(mode + rng.normal() * 0.5));
    }
    const OtsuResult got = otsu_threshold(mag);
    REQUIRE_FALSE(got.degenerate);
    CHECK(got.threshold == otsu_oracle(mag));  // exact, same tie rule
  }
}

TEST_CASE("otsu tie resolves to the lowest edge", "[unsupervised]") {
  // 0 and max value only: every interior edge separates them equally
  MagnitudeMap mag(1, 4, 1);
  mag.data = {0.0f, 0.0f, 8.0f, 8.0f};
  const OtsuResult r = otsu_threshold(mag);
  CHECK_THAT(r.threshold, Catch::Matchers::WithinAbs(8.0 / 256.0, 1e-12));
  CHECK(r.threshold == otsu_oracle(mag));
}

TEST_CASE("empty map is an error", "[unsupervised]") {
  MagnitudeMap empty;
  CHECK_THROWS_AS(otsu_threshold(empty), ValidationError);
}

TEST_CASE("a single huge difference flags exactly that pixel",
          "[unsupervised]") {
  Raster pre(8, 8, 2, 10.0f);
  Raster post = pre;
  post.at(0, 3, 5) = 60.0f;
  post.at(1, 3, 5) = 70.0f;
  const ChangeMask mask = unsupervised_change_map(pre, post, unit_stats(2));
  for (std::uint32_t y = 0; y < 8; ++y)
    for (std::uint32_t x = 0; x < 8; ++x)
      CHECK(mask.at(y, x) == ((y == 3 && x == 5) ? ChangeMask::kChanged
                                                 : ChangeMask::kUnchanged));
}

TEST_CASE("change mask values are only 0 and 1", "[unsupervised]") {
  Rng rng(11);
  Raster pre(12, 12, 3), post(12, 12, 3);
  for (auto& v : pre.data) v = static_cast<float>(rng.uniform(0, 100));
  for (auto& v : post.data) v = static_cast<float>(rng.uniform(0, 100));
  const ChangeMask mask = unsupervised_change_map(pre, post, unit_stats(3));
  for (const auto l : mask.labels) CHECK((l == 0 || l == 1));
}

TEST_CASE("raising the threshold never adds changed pixels", "[unsupervised]") {
  Rng rng(13);
  MagnitudeMap mag(10, 10, 1);
  for (auto& v : mag.data) v = static_cast<float>(std::abs(rng.normal() * 3));

  const auto count_changed = [&mag](double thr) {
    std::size_t n = 0;
    for (const float v : mag.data)
      if (static_cast<double>(v) > thr) ++n;
    return n;
  };
  double prev_thr = -1.0;
  std::size_t prev_count = count_changed(prev_thr);
  for (const double thr : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const std::size_t cnt = count_changed(thr);
    CHECK(cnt <= prev_count);
    prev_count = cnt;
    prev_thr = thr;
  }
}
