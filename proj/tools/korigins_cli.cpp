#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "korigins/korigins.h"

namespace {

struct CliFailure {
  int code;
};

void check(ko_status s) {
  if (s != KO_OK) {
    std::fprintf(stderr, "korigins: %s: %s\n", ko_status_name(s), ko_last_error());
    throw CliFailure{static_cast<int>(s)};
  }
}

ko_precision parse_precision(const std::string& p) { return p == "f64" ? KO_F64 : KO_F32; }

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

void print_epoch(size_t epoch, double loss, double macc, void*) {
  if (std::isnan(macc)) {
    std::printf("epoch %zu loss %.6f\n", epoch, loss);
  } else {
    std::printf("epoch %zu loss %.6f val_macc %.4f\n", epoch, loss, macc);
  }
  std::fflush(stdout);
}

struct SweepArgs {
  ko_sweep_options opts{};
  std::string networks, columns, rows, precision = "f32";

  SweepArgs() { ko_sweep_options_default(&opts); }

  void add(CLI::App* app, const char* column_help, bool with_rows) {
    app->add_option("--images", opts.image_count, "Training images per cell (validation uses the same count)");
    app->add_option("--height", opts.height, "Image height");
    app->add_option("--width", opts.width, "Image width");
    app->add_option("--epochs", opts.epochs, "Epochs per cell");
    app->add_option("--batch", opts.batch_size, "Batch size");
    app->add_option("--lr-ko", opts.lr_korigins, "K-Origins learning rate");
    app->add_option("--seed", opts.seed, "Sweep seed");
    app->add_option("--eval-every", opts.eval_every, "Validate every N epochs (0: final only)");
    app->add_option("--precision", precision, "GEMM precision")->check(CLI::IsMember({"f32", "f64"}));
    app->add_option("--networks", networks, "Comma list of networks to run");
    app->add_option("--columns", columns, column_help);
    if (with_rows) app->add_option("--rows", rows, "Comma list of delta sigma values to run");
  }

  const ko_sweep_options& finish() {
    opts.precision = parse_precision(precision);
    opts.networks = networks.empty() ? nullptr : networks.c_str();
    opts.columns = columns.empty() ? nullptr : columns.c_str();
    opts.rows = rows.empty() ? nullptr : rows.c_str();
    return opts;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"K-Origins segmentation toolkit"};
  app.require_subcommand(1);

  // generate
  std::string gen_manifest, gen_spec;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset from a spec");
  gen->add_option("--manifest", gen_manifest, "Output manifest path")->required();
  gen->add_option("--spec", gen_spec, "Dataset spec JSON")->required();

  // train
  std::string tr_net, tr_data, tr_val, tr_out, tr_precision = "f32";
  std::size_t tr_classes = 0;
  ko_train_options tr_opts{};
  ko_train_options_default(&tr_opts);
  bool tr_no_shuffle = false;
  auto* tr = app.add_subcommand("train", "Train a network on a manifest");
  tr->add_option("--net", tr_net, "Network name")->required();
  tr->add_option("--classes", tr_classes, "Class count (default: from the manifest)");
  tr->add_option("--data", tr_data, "Training manifest")->required();
  tr->add_option("--val", tr_val, "Validation manifest");
  tr->add_option("--epochs", tr_opts.epochs, "Epochs");
  tr->add_option("--batch", tr_opts.batch_size, "Batch size");
  tr->add_option("--lr-conv", tr_opts.lr_conv, "Convolution learning rate");
  tr->add_option("--lr-ko", tr_opts.lr_korigins, "K-Origins learning rate");
  tr->add_option("--seed", tr_opts.seed, "Run seed");
  tr->add_option("--eval-every", tr_opts.eval_every, "Validate every N epochs (0: final only)");
  tr->add_flag("--no-shuffle", tr_no_shuffle, "Keep manifest order");
  tr->add_option("--precision", tr_precision, "GEMM precision")->check(CLI::IsMember({"f32", "f64"}));
  tr->add_option("--out", tr_out, "Output directory")->required();

  // eval
  std::string ev_ckpt, ev_data, ev_spec, ev_precision = "f32";
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Manifest")->required();
  ev->add_option("--spec", ev_spec, "Network spec JSON (default: network.json beside the checkpoint)");
  ev->add_option("--precision", ev_precision, "GEMM precision")->check(CLI::IsMember({"f32", "f64"}));

  // sweeps
  std::string sr_noise, sr_out;
  SweepArgs sr_args;
  auto* sr = app.add_subcommand("sweep-rfl", "L/RFL sweep over RFL8/18/38 and KRFL8/18/38");
  sr->add_option("--noise", sr_noise, "Noise setting")->required()->check(CLI::IsMember({"on", "off"}));
  sr->add_option("--out", sr_out, "Output directory")->required();
  sr_args.add(sr, "Comma list of L/RFL ratios to run", false);

  std::string sh_problem, sh_size, sh_out;
  SweepArgs sh_args;
  auto* sh = app.add_subcommand("sweep-hd", "Delta mu / delta sigma sweep over RFL14 and KRFL14");
  sh->add_option("--problem", sh_problem, "Problem")->required()->check(CLI::IsMember({"detect", "tracer"}));
  sh->add_option("--size", sh_size, "Square size range")->required()->check(CLI::IsMember({"small", "large"}));
  sh->add_option("--out", sh_out, "Output directory")->required();
  sh_args.add(sh, "Comma list of delta mu values to run", true);

  std::string sv_dir;
  auto* sv = app.add_subcommand("sweep-verify", "Regenerate and re-score every cell of a finished sweep");
  sv->add_option("--dir", sv_dir, "Sweep output directory")->required();

  // inspection
  std::string rf_net;
  std::size_t rf_classes = 2;
  auto* rf = app.add_subcommand("rfl", "Print receptive field and parameter count of a network");
  rf->add_option("--net", rf_net, "Network name")->required();
  rf->add_option("--classes", rf_classes, "Class count");

  double mu1 = 0, sigma1 = 0, mu2 = 0, sigma2 = 0;
  auto* hd = app.add_subcommand("hd", "Hellinger distance between two Gaussians");
  hd->add_option("--mu1", mu1)->required();
  hd->add_option("--sigma1", sigma1)->required();
  hd->add_option("--mu2", mu2)->required();
  hd->add_option("--sigma2", sigma2)->required();

  auto* audit = app.add_subcommand("param-audit", "Parameter counts against the reference table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "korigins: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen) {
      size_t n = 0;
      check(ko_generate(gen_spec.c_str(), gen_manifest.c_str(), &n));
      std::printf("wrote %zu images to %s\n", n, gen_manifest.c_str());
    } else if (*tr) {
      size_t count = 0;
      check(ko_manifest_classes(tr_data.c_str(), nullptr, nullptr, 0, &count));
      std::vector<double> mu(count), sigma(count);
      check(ko_manifest_classes(tr_data.c_str(), mu.data(), sigma.data(), count, &count));
      const size_t classes = tr_classes == 0 ? count : tr_classes;
      ko_network* net = nullptr;
      check(ko_network_build(tr_net.c_str(), classes, classes == count ? mu.data() : nullptr,
                             classes == count ? sigma.data() : nullptr, &net));
      tr_opts.shuffle = tr_no_shuffle ? 0 : 1;
      tr_opts.precision = parse_precision(tr_precision);
      double macc = 0.0;
      const ko_status s = ko_train(net, tr_data.c_str(), tr_val.empty() ? nullptr : tr_val.c_str(), &tr_opts,
                                   tr_out.c_str(), print_epoch, nullptr, &macc);
      ko_network_free(net);
      check(s);
      std::printf("saved %s/model.korg\n", tr_out.c_str());
    } else if (*ev) {
      double macc = 0.0;
      check(ko_eval(ev_ckpt.c_str(), ev_spec.empty() ? nullptr : ev_spec.c_str(), ev_data.c_str(),
                    parse_precision(ev_precision), &macc));
      std::printf("macc %.6f\n", macc);
    } else if (*sr) {
      check(ko_sweep_rfl(sr_noise == "on", &sr_args.finish(), sr_out.c_str(), print_line, nullptr));
      std::printf("results in %s\n", sr_out.c_str());
    } else if (*sh) {
      check(ko_sweep_hd(sh_problem.c_str(), sh_size.c_str(), &sh_args.finish(), sh_out.c_str(), print_line, nullptr));
      std::printf("results in %s\n", sh_out.c_str());
    } else if (*sv) {
      size_t cells = 0, bad = 0;
      check(ko_sweep_verify(sv_dir.c_str(), &cells, &bad, print_line, nullptr));
      std::printf("%zu cells, %zu mismatches\n", cells, bad);
      if (bad != 0) {
        std::fprintf(stderr, "korigins: %zu of %zu cells did not reproduce\n", bad, cells);
        return 1;
      }
    } else if (*rf) {
      ko_network* net = nullptr;
      std::vector<double> mu(rf_classes), sigma(rf_classes, 0.0);
      for (std::size_t i = 0; i < rf_classes; ++i) mu[i] = 20000.0 + 5000.0 * static_cast<double>(i);
      check(ko_network_build(rf_net.c_str(), rf_classes, mu.data(), sigma.data(), &net));
      size_t rfl = 0, params = 0;
      const ko_status s1 = ko_network_rfl(net, &rfl);
      const ko_status s2 = s1 == KO_OK ? ko_network_param_count(net, &params) : s1;
      ko_network_free(net);
      check(s2);
      std::printf("rfl %zu params %zu\n", rfl, params);
    } else if (*hd) {
      double v = 0.0;
      check(ko_hellinger(mu1, sigma1, mu2, sigma2, &v));
      std::printf("%.6f\n", v);
    } else if (*audit) {
      ko_string_out out{nullptr, 0, 0};
      check(ko_param_audit(&out));
      std::string text(out.needed, '\0');
      out.buf = text.data();
      out.capacity = text.size();
      check(ko_param_audit(&out));
      std::fputs(text.c_str(), stdout);
    }
  } catch (const CliFailure& f) {
    return f.code;
  }
  return 0;
}
