#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "korigins/korigins.h"

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("korigins_capi_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

const char* kSpec = R"({
  "image_count": 4, "height": 32, "width": 32,
  "background": {"mu": 20000, "sigma": 0},
  "targets": [{"mu": 25000, "sigma": 0}],
  "side_range": [4, 8], "squares_per_image": 4, "seed": 3
})";

void count_epochs(size_t, double, double, void* user) { ++*static_cast<int*>(user); }

}  // namespace

TEST_CASE("status names and errors") {
  CHECK(std::strcmp(ko_status_name(KO_OK), "ok") == 0);
  CHECK(std::strlen(ko_version()) > 0);
  double v = 0;
  CHECK(ko_hellinger(20000, 1000, 20500, 1000, &v) == KO_OK);
  CHECK(std::abs(v - 0.1754) <= 0.0005);
  CHECK(ko_hellinger(0, -1, 0, 1, &v) == KO_ERR_ARGUMENT);
  CHECK(std::strlen(ko_last_error()) > 0);
  CHECK(ko_hellinger(0, 1, 0, 1, nullptr) == KO_ERR_ARGUMENT);
}

TEST_CASE("network handles") {
  ko_network* net = nullptr;
  REQUIRE(ko_network_build("rfl8", 2, nullptr, nullptr, &net) == KO_OK);
  size_t rfl = 0, params = 0;
  CHECK(ko_network_rfl(net, &rfl) == KO_OK);
  CHECK(ko_network_param_count(net, &params) == KO_OK);
  CHECK(rfl == 8);
  CHECK(params == 71042);

  char small[2];
  ko_string_out name{small, sizeof small, 0};
  CHECK(ko_network_name(net, &name) == KO_OK);
  std::string buf(name.needed, '\0');
  name = {buf.data(), buf.size(), 0};
  CHECK(ko_network_name(net, &name) == KO_OK);
  CHECK(std::string(buf.c_str()) == "RFL8");

  const auto dir = fresh_dir("spec");
  CHECK(ko_network_save_spec(net, (dir / "net.json").c_str()) == KO_OK);
  ko_network_free(net);
  ko_network* back = nullptr;
  REQUIRE(ko_network_load_spec((dir / "net.json").c_str(), &back) == KO_OK);
  CHECK(ko_network_param_count(back, &params) == KO_OK);
  CHECK(params == 71042);
  ko_network_free(back);

  ko_network* colour = nullptr;
  const double mu[] = {20000, 25000}, sigma[] = {0, 0};
  REQUIRE(ko_network_build("colour", 2, mu, sigma, &colour) == KO_OK);
  CHECK(ko_network_param_count(colour, &params) == KO_OK);
  CHECK(params == 5);
  ko_network_free(colour);

  ko_network* bad = nullptr;
  CHECK(ko_network_build("rfl9", 2, nullptr, nullptr, &bad) == KO_ERR_CONFIG);
  CHECK(bad == nullptr);
  CHECK(ko_network_build("krfl8", 2, nullptr, nullptr, &bad) != KO_OK);
  CHECK(ko_network_build(nullptr, 2, nullptr, nullptr, &bad) == KO_ERR_ARGUMENT);
  CHECK(ko_network_load_spec((dir / "missing.json").c_str(), &bad) == KO_ERR_IO);
  ko_network_free(nullptr);
}

TEST_CASE("param audit lists every network") {
  ko_string_out out{nullptr, 0, 0};
  REQUIRE(ko_param_audit(&out) == KO_OK);
  std::string text(out.needed, '\0');
  out = {text.data(), text.size(), 0};
  REQUIRE(ko_param_audit(&out) == KO_OK);
  for (const char* n : {"rfl8 ", "krfl38", "71042", "352962", "1480002", "colour"}) CHECK(text.find(n) != std::string::npos);
}

TEST_CASE("generate, train and eval through the C interface") {
  const auto dir = fresh_dir("train");
  write_file(dir / "spec.json", kSpec);
  size_t n = 0;
  REQUIRE(ko_generate((dir / "spec.json").c_str(), (dir / "train.json").c_str(), &n) == KO_OK);
  CHECK(n == 4);

  size_t count = 0;
  CHECK(ko_manifest_classes((dir / "train.json").c_str(), nullptr, nullptr, 0, &count) == KO_OK);
  REQUIRE(count == 2);
  double mu[2], sigma[2];
  CHECK(ko_manifest_classes((dir / "train.json").c_str(), mu, sigma, 2, &count) == KO_OK);
  CHECK(mu[1] == 25000.0);
  CHECK(ko_manifest_classes((dir / "train.json").c_str(), mu, sigma, 1, &count) == KO_ERR_ARGUMENT);

  ko_network* net = nullptr;
  REQUIRE(ko_network_build("krfl8", 2, mu, sigma, &net) == KO_OK);
  ko_train_options opts;
  ko_train_options_default(&opts);
  CHECK(opts.batch_size == 3);
  CHECK(opts.lr_korigins == 100.0);
  opts.epochs = 2;
  int epochs = 0;
  double trained = -1;
  REQUIRE(ko_train(net, (dir / "train.json").c_str(), (dir / "train.json").c_str(), &opts, (dir / "run").c_str(),
                   count_epochs, &epochs, &trained) == KO_OK);
  CHECK(epochs == 2);
  CHECK(fs::exists(dir / "run" / "model.korg"));
  CHECK(fs::exists(dir / "run" / "history.csv"));

  double scored = -1;
  CHECK(ko_eval((dir / "run" / "model.korg").c_str(), nullptr, (dir / "train.json").c_str(), opts.precision,
                &scored) == KO_OK);
  CHECK(scored == trained);

  opts.epochs = 0;
  CHECK(ko_train(net, (dir / "train.json").c_str(), nullptr, &opts, (dir / "bad").c_str(), nullptr, nullptr,
                 nullptr) == KO_ERR_CONFIG);
  ko_network_free(net);

  ko_network* three = nullptr;
  REQUIRE(ko_network_build("rfl8", 3, nullptr, nullptr, &three) == KO_OK);
  ko_train_options_default(&opts);
  CHECK(ko_train(three, (dir / "train.json").c_str(), nullptr, &opts, (dir / "bad").c_str(), nullptr, nullptr,
                 nullptr) == KO_ERR_CONFIG);
  ko_network_free(three);

  write_file(dir / "broken.korg", "nope");
  CHECK(ko_eval((dir / "broken.korg").c_str(), (dir / "run" / "network.json").c_str(), (dir / "train.json").c_str(),
                KO_F32, &scored) == KO_ERR_FORMAT);
}

TEST_CASE("sweep and verify through the C interface") {
  const auto dir = fresh_dir("sweep");
  ko_sweep_options opts;
  ko_sweep_options_default(&opts);
  CHECK(opts.image_count == 100);
  opts.image_count = 2;
  opts.height = opts.width = 64;
  opts.epochs = 1;
  opts.networks = "krfl8";
  opts.columns = "0.6";
  REQUIRE(ko_sweep_rfl(0, &opts, dir.c_str(), nullptr, nullptr) == KO_OK);
  CHECK(fs::exists(dir / "rfl_noise_off.csv"));
  CHECK(fs::exists(dir / "rfl_noise_off_heatmap.pgm"));
  size_t cells = 0, bad = 99;
  CHECK(ko_sweep_verify(dir.c_str(), &cells, &bad, nullptr, nullptr) == KO_OK);
  CHECK(cells == 1);
  CHECK(bad == 0);

  opts.columns = "0.7";
  CHECK(ko_sweep_rfl(0, &opts, (dir / "x").c_str(), nullptr, nullptr) == KO_ERR_CONFIG);
  CHECK(ko_sweep_hd("nothing", "small", &opts, (dir / "y").c_str(), nullptr, nullptr) == KO_ERR_CONFIG);
}
