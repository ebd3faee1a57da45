#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sofpi/cli.hpp"
#include "sofpi/config.hpp"
#include "sofpi/gradcheck.hpp"
#include "sofpi/image_io.hpp"
#include "sofpi/metrics.hpp"

using namespace sofpi;
namespace fs = std::filesystem;

namespace {

Tensor unit_image(std::size_t n, std::uint64_t seed) {
  Tensor t = random_normal({n, n}, seed);
  for (double& x : t.vec()) x = 0.5 + 0.3 * std::tanh(x);
  return t;
}

Tensor checkerboard(std::size_t n, std::size_t cell) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(i, j) = ((i / cell + j / cell) % 2) ? 0.9 : 0.1;
  return t;
}

// Explicit 2-D window per position, straight from the SSIM definition.
double ssim_oracle(const Tensor& x, const Tensor& y) {
  const int n = 11;
  std::vector<double> w(n * n);
  double total = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const double da = a - 5, db = b - 5;
      w[a * n + b] = std::exp(-(da * da + db * db) / (2 * 1.5 * 1.5));
      total += w[a * n + b];
    }
  for (double& v : w) v /= total;
  const std::size_t h = x.shape()[0], wd = x.shape()[1];
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + n <= h; ++i)
    for (std::size_t j = 0; j + n <= wd; ++j) {
      double mx = 0, my = 0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          mx += w[a * n + b] * x.at(i + a, j + b);
          my += w[a * n + b] * y.at(i + a, j + b);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          const double dx = x.at(i + a, j + b) - mx, dy = y.at(i + a, j + b) - my;
          vx += w[a * n + b] * dx * dx;
          vy += w[a * n + b] * dy * dy;
          cxy += w[a * n + b] * dx * dy;
        }
      acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

std::string run(const std::vector<std::string>& args, int* code) {
  std::ostringstream out, err;
  *code = run_command(args, out, err);
  return out.str() + err.str();
}

}  // namespace

TEST(Psnr, Sentinels) {
  const Tensor x = unit_image(8, 1);
  EXPECT_EQ(psnr(x, x), kPsnrIdentical);
  EXPECT_NEAR(psnr(x + Tensor(Shape{8, 8}, 0.1), x), 20.0, 1e-12);
  EXPECT_THROW(psnr(x, unit_image(9, 1)), ShapeError);
}

TEST(Psnr, MatchesDirectFormulaAndIsSymmetric) {
  const Tensor x = unit_image(16, 2), y = unit_image(16, 3);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
  const double oracle = 10.0 * std::log10(1.0 / (mse / x.size()));
  EXPECT_NEAR(psnr(x, y), oracle, 1e-12);
  EXPECT_EQ(psnr(x, y), psnr(y, x));
}

TEST(Ssim, IdentityAndInversion) {
  const Tensor x = unit_image(16, 4);
  EXPECT_EQ(ssim(x, x), 1.0);
  Tensor inv = x;
  for (double& v : inv.vec()) v = 1.0 - v;
  EXPECT_LT(ssim(inv, x), 1.0);
}

TEST(Ssim, MatchesSlidingWindowOracle) {
  const Tensor board = checkerboard(24, 3);
  Tensor blurred = board;
  for (std::size_t i = 1; i + 1 < 24; ++i)
    for (std::size_t j = 1; j + 1 < 24; ++j)
      blurred.at(i, j) = (board.at(i - 1, j) + board.at(i + 1, j) + board.at(i, j - 1) + board.at(i, j + 1) +
                          4 * board.at(i, j)) / 8.0;
  EXPECT_NEAR(ssim(blurred, board), ssim_oracle(blurred, board), 1e-9);
  EXPECT_EQ(ssim(blurred, board), ssim(board, blurred));
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
  EXPECT_THROW(ssim(unit_image(10, 1), unit_image(10, 2)), ShapeError);
}

TEST(Ssim, BoundedOnRandomPairs) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double v = ssim(unit_image(16, s), unit_image(16, s + 100));
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(RunConfig, RoundTripsThroughText) {
  RunConfig c;
  c.seed = 42;
  c.out = "somewhere/else";
  c.timing = true;
  c.data.n_train = 60;
  c.data.pattern = SamplingPattern::random_1d;
  c.data.rate = 0.2;
  c.pipeline.stages = 3;
  c.pipeline.init = InitMode::adjoint;
  c.train.joint_epochs = 7;
  c.train.adam.lr = 3e-4;
  c.loss = LossConfig{{0.1, 0.2, 0.3}, {0.0, 0.01, 1.0 / 3.0}};
  c.baseline.max_iters = 17;
  const std::string text = c.to_key_values().text();
  const RunConfig back = RunConfig::from_key_values(KeyValues::parse(text));
  EXPECT_EQ(back.to_key_values().text(), text);
  EXPECT_EQ(back.loss.beta[2], 1.0 / 3.0);
  EXPECT_EQ(back.data.seed, 42u);
}

TEST(RunConfig, RejectsUnknownKeysAndBadLossLengths) {
  EXPECT_THROW(RunConfig::from_key_values(KeyValues::parse("train.epochz = 3\n")), Error);
  RunConfig c;
  c.loss.alpha = {1.0};
  c.loss.beta = {1.0};
  EXPECT_THROW(c.effective_loss(), Error);
}

TEST(Png, GreyRoundTripQuantises) {
  const auto path = fs::temp_directory_path() / "sofpi_grey.png";
  Tensor img = unit_image(12, 5);
  img.at(0, 0) = -1.0;  // clamped
  write_png_gray(path, img);
  const Tensor back = read_png_gray(path);
  EXPECT_EQ(back.at(0, 0), 0.0);
  for (std::size_t i = 1; i < img.size(); ++i) EXPECT_LE(std::abs(back[i] - img[i]), 0.5 / 255.0 + 1e-12);
  fs::remove(path);
}

TEST(Png, ErrorMapScalesByFive) {
  const Tensor ref(Shape{16, 16}, 0.5);
  Tensor rec = ref;
  rec.at(3, 4) = 0.7;  // |err| * 5 = 1, the top of the colour scale
  const RgbImage e = error_map(rec, ref);
  EXPECT_GT(e.width, 16u);
  const auto px = [&](std::size_t i, std::size_t j) { return &e.rgb[(i * e.width + j) * 3]; };
  // Zero error maps to the bottom of the bar, full scale to the top.
  const std::size_t bar = 18;
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(px(0, 0)[c], px(15, bar)[c]);
    EXPECT_EQ(px(3, 4)[c], px(0, bar)[c]);
  }
}

TEST(Cli, UnknownFlagsAndCommandsFail) {
  int code = 0;
  run({"train", "--bogus"}, &code);
  EXPECT_NE(code, 0);
  run({"fly"}, &code);
  EXPECT_NE(code, 0);
  run({}, &code);
  EXPECT_NE(code, 0);
}

TEST(Cli, MissingInputsFailWithMessage) {
  int code = 0;
  const auto dir = fs::temp_directory_path() / "sofpi_cli_empty";
  fs::remove_all(dir);
  const std::string msg = run({"train", "--out", dir.string()}, &code);
  EXPECT_EQ(code, 1);
  EXPECT_NE(msg.find("manifest.txt"), std::string::npos) << msg;
  run({"eval", "--config", (dir / "nope.txt").string()}, &code);
  EXPECT_NE(code, 0);
  fs::remove_all(dir);
}

TEST(Cli, CheckPasses) {
  int code = 1;
  const std::string msg = run({"check"}, &code);
  EXPECT_EQ(code, 0) << msg;
  EXPECT_EQ(msg.find("FAIL"), std::string::npos) << msg;
}
