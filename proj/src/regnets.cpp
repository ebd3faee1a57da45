#include "sofpi/regnets.hpp"

#include <cmath>
#include <random>

#include "sofpi/jrrt.hpp"
#include "sofpi/nn.hpp"

namespace sofpi {

const Var& NetWeights::get(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p.value;
  throw Error("network has no parameter '" + name + "'");
}

std::vector<Var> NetWeights::vars() const {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

std::size_t NetWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

NetWeights NetWeights::clone() const {
  NetWeights out;
  out.stage = stage;
  for (const auto& p : params) out.params.push_back({p.name, Var(p.value.value(), p.value.requires_grad())});
  return out;
}

void NetWeights::set_requires_grad(bool on) {
  for (auto& p : params) p.value.node()->requires_grad = on;
}

void NetWeights::zero() {
  for (auto& p : params) p.value.mutable_value() *= 0.0;
}

namespace {

struct LayerSpec {
  std::string name;
  std::size_t cin, cout;
  bool zero_init;
};

void add_layer(NetWeights& w, const LayerSpec& l, std::mt19937_64& rng) {
  const std::size_t fan_in = l.cin * 9;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor k(Shape{l.cout, l.cin, 3, 3});
  if (!l.zero_init)
    for (auto& x : k.vec()) x = dist(rng);
  w.params.push_back({l.name + ".weight", Var(std::move(k), true)});
  w.params.push_back({l.name + ".bias", Var(Tensor(Shape{l.cout}), true)});
}

Var conv_layer(const NetWeights& w, const std::string& name, const Var& x, std::size_t stride) {
  return add_channel_bias(conv2d(x, w.get(name + ".weight"), stride, 1), w.get(name + ".bias"));
}

Var as_channel(const Var& img) {
  if (img.value().rank() != 2) throw ShapeError("expected an [H,W] image, got " + shape_string(img.shape()));
  return reshape(img, Shape{1, img.shape()[0], img.shape()[1]});
}

}  // namespace

KeyValues to_key_values(const LambdaArch& a) {
  KeyValues kv;
  kv.set("net", "lambda");
  kv.set("base", std::uint64_t{a.base});
  kv.set("wide", std::uint64_t{a.wide});
  kv.set("slope", a.slope);
  kv.set("output_gain", a.output_gain);
  return kv;
}

KeyValues to_key_values(const GammaArch& a) {
  KeyValues kv;
  kv.set("net", "gamma");
  kv.set("width", std::uint64_t{a.width});
  kv.set("residual", a.residual ? "true" : "false");
  kv.set("slope", a.slope);
  kv.set("squaring", a.squaring);
  kv.set("kernel_sigma", a.kernel.sigma);
  kv.set("gamma", a.kernel.gamma);
  return kv;
}

LambdaArch lambda_arch_from(const KeyValues& kv) {
  LambdaArch a;
  a.base = kv.get_u64("base", a.base);
  a.wide = kv.get_u64("wide", a.wide);
  a.slope = kv.get_double("slope", a.slope);
  a.output_gain = kv.get_double("output_gain", a.output_gain);
  return a;
}

GammaArch gamma_arch_from(const KeyValues& kv) {
  GammaArch a;
  a.width = kv.get_u64("width", a.width);
  a.residual = kv.get("residual", "true") == "true";
  a.slope = kv.get_double("slope", a.slope);
  a.squaring = static_cast<int>(kv.get_int("squaring", a.squaring));
  a.kernel.sigma = kv.get_double("kernel_sigma", a.kernel.sigma);
  a.kernel.gamma = kv.get_double("gamma", a.kernel.gamma);
  return a;
}

NetWeights init_lambda(const LambdaArch& a, std::uint64_t seed, int stage) {
  std::mt19937_64 rng(seed);
  NetWeights w;
  w.stage = stage;
  for (const LayerSpec& l : {LayerSpec{"enc1", 2, a.base, false}, LayerSpec{"enc2", a.base, a.wide, false},
                             LayerSpec{"enc3", a.wide, a.wide, false}, LayerSpec{"mid", a.wide, a.wide, false},
                             LayerSpec{"dec1", a.wide, a.base, false}, LayerSpec{"out", a.base, 2, false}})
    add_layer(w, l, rng);
  if (!(a.output_gain > 0.0)) throw Error("lambda output_gain must be positive");
  w.get("out.weight").node()->value *= 1.0 / a.output_gain;
  return w;
}

NetWeights init_gamma(const GammaArch& a, std::uint64_t seed, int stage) {
  std::mt19937_64 rng(seed);
  NetWeights w;
  w.stage = stage;
  if (a.residual)
    for (const LayerSpec& l : {LayerSpec{"res1", 3, a.width, false}, LayerSpec{"res2", a.width, a.width, false},
                               LayerSpec{"res3", a.width, 1, true}})
      add_layer(w, l, rng);
  return w;
}

Var lambda_forward(const Var& t, const Var& g, const LambdaArch& a, const NetWeights& w) {
  require_same_shape("lambda_forward", t.value(), g.value());
  const Var x = concat({as_channel(t), as_channel(g)}, 0);
  const std::size_t h = x.shape()[1], wd = x.shape()[2];
  if (h % 4 != 0 || wd % 4 != 0)
    throw ShapeError("lambda_forward needs a grid divisible by 4, got " + shape_string(t.shape()));
  Var z = leaky_relu(conv_layer(w, "enc1", x, 1), a.slope);
  z = leaky_relu(conv_layer(w, "enc2", z, 2), a.slope);
  z = leaky_relu(conv_layer(w, "enc3", z, 2), a.slope);
  z = leaky_relu(conv_layer(w, "mid", z, 1), a.slope);
  z = leaky_relu(conv_layer(w, "dec1", upsample_nearest2x(z), 1), a.slope);
  return scale(conv_layer(w, "out", upsample_nearest2x(z), 1), a.output_gain);
}

Var gamma_forward(const Var& m, const Var& g, const GammaArch& a, const NetWeights& w) {
  if (g.value().rank() != 2) throw ShapeError("gamma_forward template must be [H,W], got " + shape_string(g.shape()));
  const std::size_t h = g.shape()[0], wd = g.shape()[1];
  if (m.shape() != Shape{2, h, wd}) throw ShapeError("gamma_forward momentum", m.shape(), Shape{2, h, wd});
  const Var phi = svf_exp(smooth(m, a.kernel), a.squaring, 1.0);
  const Var base = warp(g, phi);
  if (!a.residual) return base;
  const Var x = concat({as_channel(base), m}, 0);
  Var z = leaky_relu(conv_layer(w, "res1", x, 1), a.slope);
  z = leaky_relu(conv_layer(w, "res2", z, 1), a.slope);
  z = conv_layer(w, "res3", z, 1);
  return base + reshape(z, Shape{h, wd});
}

PhiOutput phi_forward(const Var& t, const Var& g, const LambdaArch& la, const NetWeights& theta1, const GammaArch& ga,
                      const NetWeights& theta2) {
  PhiOutput out;
  out.m = lambda_forward(t, g, la, theta1);
  out.f = gamma_forward(out.m, g, ga, theta2);
  return out;
}

void save_weights(const std::filesystem::path& dir, const NetWeights& w, const KeyValues& arch) {
  std::filesystem::create_directories(dir);
  KeyValues kv = arch;
  kv.set("stage", w.stage);
  kv.set("count", std::uint64_t{w.params.size()});
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    const auto& p = w.params[i];
    kv.set("param." + std::to_string(i), p.name + " " + shape_string(p.value.shape()));
    write_jrrt(dir / (p.name + ".jrrt"), p.value.value());
  }
  kv.write(dir / "manifest.txt");
}

NetWeights load_weights(const std::filesystem::path& dir, KeyValues* arch) {
  const KeyValues kv = KeyValues::read(dir / "manifest.txt");
  NetWeights w;
  w.stage = static_cast<int>(kv.get_int("stage"));
  const auto count = kv.get_u64("count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string entry = kv.get("param." + std::to_string(i));
    const std::string name = entry.substr(0, entry.find(' '));
    Tensor t = read_jrrt(dir / (name + ".jrrt"));
    if (entry != name + " " + shape_string(t.shape()))
      throw IoError("weights in " + dir.string() + ": '" + name + "' has shape " + shape_string(t.shape()) +
                    ", manifest says '" + entry + "'");
    w.params.push_back({name, Var(std::move(t), true)});
  }
  if (arch) *arch = kv;
  return w;
}

void check_compatible(const NetWeights& w, const NetWeights& reference, const std::string& what) {
  if (w.params.size() != reference.params.size())
    throw Error(what + ": expected " + std::to_string(reference.params.size()) + " parameters, got " +
                std::to_string(w.params.size()));
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    const auto& a = w.params[i];
    const auto& b = reference.params[i];
    if (a.name != b.name) throw Error(what + ": parameter " + std::to_string(i) + " is '" + a.name + "', expected '" + b.name + "'");
    if (a.value.shape() != b.value.shape()) throw ShapeError(what + ": " + a.name, a.value.shape(), b.value.shape());
  }
}

}  // namespace sofpi
