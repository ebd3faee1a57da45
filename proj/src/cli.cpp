#include "sofpi/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>

#include "sofpi/config.hpp"
#include "sofpi/image_io.hpp"
#include "sofpi/jrrt.hpp"
#include "sofpi/metrics.hpp"
#include "sofpi/selftest.hpp"

namespace sofpi {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Reconstruction methods in metrics.csv order, with the directory holding
// their <method>_<idx>.jrrt files.
struct Method {
  const char* name;
  const char* dir;
};
constexpr Method kMethods[] = {
    {"tv", "infer"}, {"tv_lddmm", "baseline"}, {"sofpi_net", "infer"}, {"sofpi_shoot", "infer"}};

fs::path recon_path(const fs::path& out, const Method& m, std::size_t idx) {
  return out / m.dir / (std::string(m.name) + "_" + std::to_string(idx) + ".jrrt");
}

std::string fixed(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void cmd_gen_data(const RunConfig& rc, std::ostream& out) {
  const auto m = build_dataset(rc.data, rc.out / "data", [&](const std::string& s) { out << s << "\n"; });
  out << "wrote " << m.samples.size() << " samples to " << (rc.out / "data").string() << "\n";
}

void cmd_train(const RunConfig& rc, std::ostream& out) {
  Dataset ds = load_dataset(rc.out / "data");
  auto params = init_stages(rc.pipeline, rc.seed);
  TrainConfig tc = rc.train;
  tc.on_epoch = [&](const std::string& phase, int stage, int epoch, double loss) {
    out << phase << " stage " << stage << " epoch " << epoch << " loss " << format_double(loss) << "\n";
  };
  const TrainHistory h = train(params, ds.train, rc.pipeline, rc.effective_loss(), tc, ds.op);
  save_checkpoint(rc.out / "checkpoint", params, rc.pipeline);
  h.write_csv(rc.out / "history.csv");
  rc.to_key_values().write(rc.out / "checkpoint" / "run.txt");
  out << "loss " << format_double(h.initial_loss) << " -> " << format_double(h.final_loss) << "\n";
}

void cmd_infer(const RunConfig& rc, std::ostream& out) {
  Dataset ds = load_dataset(rc.out / "data");
  PipelineConfig cfg;
  const auto params = load_checkpoint(rc.out / "checkpoint", &cfg);
  const fs::path dir = rc.out / "infer";
  fs::create_directories(dir);
  if (!ds.test.empty()) infer(ds.test[0].g, ds.test[0].y, params, cfg, ds.op, InferMode::net_output);  // warm-up
  KeyValues timing;
  for (std::size_t s = 0; s < ds.test.size(); ++s) {
    const auto& smp = ds.test[s];
    const std::size_t idx = ds.test_ids[s];
    auto t0 = Clock::now();
    const Tensor init = initial_estimate(smp.y, *ds.op, cfg);
    timing.set("tv." + std::to_string(idx), seconds_since(t0));
    t0 = Clock::now();
    const Inference net = infer(smp.g, smp.y, params, cfg, ds.op, InferMode::net_output);
    timing.set("sofpi_net." + std::to_string(idx), seconds_since(t0));
    t0 = Clock::now();
    const Inference shoot = infer(smp.g, smp.y, params, cfg, ds.op, InferMode::shoot_warp);
    timing.set("sofpi_shoot." + std::to_string(idx), seconds_since(t0));
    if (!net.u.all_finite() || !shoot.u.all_finite())
      throw Error("inference produced non-finite values for test sample " + std::to_string(idx));
    write_jrrt(dir / ("tv_" + std::to_string(idx) + ".jrrt"), init);
    write_jrrt(dir / ("sofpi_net_" + std::to_string(idx) + ".jrrt"), net.u);
    write_jrrt(dir / ("sofpi_shoot_" + std::to_string(idx) + ".jrrt"), shoot.u);
    write_jrrt(dir / ("momentum_" + std::to_string(idx) + ".jrrt"), net.m);
    out << "sample " << idx << " done\n";
  }
  timing.write(dir / "timing.txt");
}

void cmd_baseline(const RunConfig& rc, std::ostream& out) {
  Dataset ds = load_dataset(rc.out / "data");
  const auto& man = ds.manifest;
  const fs::path dir = rc.out / "baseline";
  fs::create_directories(dir);
  auto run = [&](const TrainingSample& smp) {
    const Tensor t = tv_reconstruct(smp.y, *ds.op, rc.pipeline.tv);
    const auto r = lddmm_register(t, smp.g, man.kernel, man.integrator, rc.baseline);
    return shoot_warp(r.momentum, smp.g, man.kernel, man.integrator);
  };
  if (!ds.test.empty()) run(ds.test[0]);  // warm-up
  KeyValues timing;
  for (std::size_t s = 0; s < ds.test.size(); ++s) {
    const std::size_t idx = ds.test_ids[s];
    const auto t0 = Clock::now();
    const Tensor u = run(ds.test[s]);
    timing.set("tv_lddmm." + std::to_string(idx), seconds_since(t0));
    write_jrrt(dir / ("tv_lddmm_" + std::to_string(idx) + ".jrrt"), u);
    out << "sample " << idx << " psnr " << fixed(psnr(u, ds.test[s].f)) << " ssim " << fixed(ssim(u, ds.test[s].f))
        << "\n";
  }
  timing.write(dir / "timing.txt");
}

void cmd_eval(const RunConfig& rc, std::ostream& out) {
  Dataset ds = load_dataset(rc.out / "data");
  std::optional<KeyValues> timings[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path p = rc.out / (i == 0 ? "infer" : "baseline") / "timing.txt";
    if (fs::exists(p)) timings[i] = KeyValues::read(p);
  }
  std::ofstream csv(rc.out / "metrics.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write " + (rc.out / "metrics.csv").string());
  csv << "sample,method,psnr_db,ssim,seconds\n";
  std::string aggregate;
  for (const Method& m : kMethods) {
    double sp = 0.0, ss = 0.0, st = 0.0;
    std::size_t n = 0;
    bool timed = rc.timing;
    for (std::size_t s = 0; s < ds.test.size(); ++s) {
      const std::size_t idx = ds.test_ids[s];
      const fs::path p = recon_path(rc.out, m, idx);
      if (!fs::exists(p)) continue;
      const Tensor u = read_jrrt(p);
      const Tensor& f = ds.test[s].f;
      const double pv = psnr(u, f), sv = ssim(u, f);
      std::string secs = "NA";
      const auto& tk = timings[std::string(m.dir) == "infer" ? 0 : 1];
      const std::string key = std::string(m.name) + "." + std::to_string(idx);
      if (rc.timing && tk && tk->has(key)) {
        secs = fixed(tk->get_double(key));
        st += tk->get_double(key);
      } else {
        timed = false;
      }
      csv << idx << "," << m.name << "," << fixed(pv) << "," << fixed(sv) << "," << secs << "\n";
      write_png_gray(rc.out / ("recon_" + std::to_string(idx) + "_" + m.name + ".png"), u);
      write_png_error(rc.out / ("err_" + std::to_string(idx) + "_" + m.name + ".png"), u, f);
      sp += pv;
      ss += sv;
      ++n;
    }
    if (n == 0) continue;
    const double dn = static_cast<double>(n);
    aggregate += std::string("mean,") + m.name + "," + fixed(sp / dn) + "," + fixed(ss / dn) + "," +
                 (timed ? fixed(st / dn) : "NA") + "\n";
    out << m.name << ": psnr " << fixed(sp / dn) << " dB, ssim " << fixed(ss / dn) << " over " << n << " samples\n";
  }
  csv << aggregate;
  for (std::size_t s = 0; s < ds.test.size(); ++s)
    write_png_gray(rc.out / ("target_" + std::to_string(ds.test_ids[s]) + ".png"), ds.test[s].f);
}

int cmd_check(std::ostream& out) {
  int failed = 0;
  for (const auto& r : run_self_tests()) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    failed += r.passed ? 0 : 1;
  }
  out << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << "\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint reconstruction and motion estimation with unrolled Douglas-Rachford networks", "sofpidr"};
  app.require_subcommand(1, 1);
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  const char* names[] = {"gen-data", "train", "infer", "eval", "baseline", "check"};
  const char* help[] = {"generate a synthetic dataset", "train the unrolled network",
                        "run both inference modes on the test set", "write metrics.csv and PNG previews",
                        "run the TV + LDDMM sequential baseline", "run the self-test battery"};
  for (int i = 0; i < 6; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], help[i]);
    sub->add_option("--config", config, "run configuration (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "seed for data generation and network initialisation");
    sub->add_option("--out", out_dir, "output directory");
  }

  std::vector<std::string> argv_store{"sofpidr"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    if (command == "check") return cmd_check(out);
    RunConfig rc = config.empty() ? RunConfig{} : RunConfig::read(config);
    rc.command = command;
    if (seed) {
      rc.seed = *seed;
      rc.data.seed = *seed;
    }
    if (!out_dir.empty()) rc.out = out_dir;
    fs::create_directories(rc.out);
    if (command == "gen-data") cmd_gen_data(rc, out);
    else if (command == "train") cmd_train(rc, out);
    else if (command == "infer") cmd_infer(rc, out);
    else if (command == "baseline") cmd_baseline(rc, out);
    else cmd_eval(rc, out);
    return 0;
  } catch (const std::exception& e) {
    err << "sofpidr " << command << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sofpi
