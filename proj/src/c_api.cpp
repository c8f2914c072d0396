#include "korigins/korigins.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "korigins/error.hpp"
#include "korigins/metrics.hpp"
#include "korigins/netbuild.hpp"
#include "korigins/network.hpp"
#include "korigins/sweep.hpp"
#include "korigins/synthgen.hpp"
#include "korigins/train.hpp"

struct ko_network {
  korigins::NetworkSpec spec;
};

namespace {

namespace fs = std::filesystem;
using namespace korigins;

thread_local std::string g_last_error;

constexpr std::uint64_t kInitStream = 0x696e6974ULL;

ko_status fail(ko_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
ko_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return KO_OK;
  } catch (const Error& e) {
    return fail(static_cast<ko_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(KO_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(KO_ERR_INTERNAL, e.what());
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw ArgumentError(std::string(what) + " must not be null");
}

void put_string(const std::string& s, ko_string_out* out) {
  require(out, "out");
  out->needed = s.size() + 1;
  if (out->buf != nullptr && out->capacity >= out->needed) std::memcpy(out->buf, s.c_str(), out->needed);
}

Precision to_precision(ko_precision p) {
  if (p == KO_F64) return Precision::f64;
  if (p == KO_F32) return Precision::f32;
  throw ArgumentError("unknown precision " + std::to_string(static_cast<int>(p)));
}

TrainConfig to_config(const ko_train_options& o) {
  TrainConfig c;
  c.epochs = o.epochs;
  c.batch_size = o.batch_size;
  c.lr_conv = o.lr_conv;
  c.lr_korigins = o.lr_korigins;
  c.seed = o.seed;
  c.shuffle = o.shuffle != 0;
  c.precision = to_precision(o.precision);
  c.eval_every = o.eval_every;
  return c;
}

std::vector<std::string> split_list(const char* s) {
  std::vector<std::string> out;
  if (s == nullptr) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> split_numbers(const char* s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ArgumentError(std::string(what) + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

SweepOptions to_sweep_options(const ko_sweep_options& o, ko_log_callback log, void* user) {
  SweepOptions s;
  s.image_count = o.image_count;
  s.height = o.height;
  s.width = o.width;
  s.epochs = o.epochs;
  s.batch_size = o.batch_size;
  s.lr_korigins = o.lr_korigins;
  s.seed = o.seed;
  s.precision = to_precision(o.precision);
  s.eval_every = o.eval_every;
  s.networks = split_list(o.networks);
  s.columns = split_numbers(o.columns, "columns");
  s.rows = split_numbers(o.rows, "rows");
  if (log != nullptr) s.log = [log, user](const std::string& line) { log(line.c_str(), user); };
  return s;
}

void write_history(const fs::path& path, const TrainHistory& h) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,loss,val_macc\n";
  for (const auto& e : h.epochs) {
    char buf[96];
    if (std::isnan(e.val_macc)) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,\n", e.epoch, e.mean_loss);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f\n", e.epoch, e.mean_loss, e.val_macc);
    }
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

extern "C" {

const char* ko_last_error(void) { return g_last_error.c_str(); }

const char* ko_status_name(ko_status status) {
  switch (status) {
    case KO_OK: return "ok";
    case KO_ERR_ARGUMENT: return "argument error";
    case KO_ERR_SHAPE: return "shape error";
    case KO_ERR_CONFIG: return "config error";
    case KO_ERR_FORMAT: return "format error";
    case KO_ERR_IO: return "io error";
    case KO_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* ko_version(void) { return "1.0.0"; }

ko_status ko_hellinger(double mu1, double sigma1, double mu2, double sigma2, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = hellinger(mu1, sigma1, mu2, sigma2);
  });
}

ko_status ko_network_build(const char* name, size_t class_count, const double* class_mu, const double* class_sigma,
                           ko_network** out) {
  return guarded([&] {
    require(name, "name");
    require(out, "out");
    std::vector<ClassSpec> classes;
    if (class_mu != nullptr && class_sigma != nullptr) {
      for (std::size_t i = 0; i < class_count; ++i) classes.push_back({class_mu[i], class_sigma[i]});
    } else if (class_mu != nullptr || class_sigma != nullptr) {
      throw ArgumentError("class_mu and class_sigma must both be given or both be null");
    }
    *out = new ko_network{build_named(name, class_count, classes)};
  });
}

ko_status ko_network_load_spec(const char* json_path, ko_network** out) {
  return guarded([&] {
    require(json_path, "json_path");
    require(out, "out");
    *out = new ko_network{load_network_spec(json_path)};
  });
}

void ko_network_free(ko_network* net) { delete net; }

ko_status ko_network_rfl(const ko_network* net, size_t* out) {
  return guarded([&] {
    require(net, "net");
    require(out, "out");
    *out = rfl_of_network(net->spec);
  });
}

ko_status ko_network_param_count(const ko_network* net, size_t* out) {
  return guarded([&] {
    require(net, "net");
    require(out, "out");
    *out = param_count(net->spec);
  });
}

ko_status ko_network_name(const ko_network* net, ko_string_out* out) {
  return guarded([&] {
    require(net, "net");
    put_string(net->spec.name, out);
  });
}

ko_status ko_network_save_spec(const ko_network* net, const char* json_path) {
  return guarded([&] {
    require(net, "net");
    require(json_path, "json_path");
    save_network_spec(net->spec, json_path);
  });
}

ko_status ko_param_audit(ko_string_out* out) {
  return guarded([&] {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %7s %4s %10s %10s %10s\n", "network", "classes", "rfl", "params",
                  "reference", "delta");
    os << line;
    const std::vector<ClassSpec> two{{20000, 0}, {25000, 0}};
    const std::vector<ClassSpec> three{{16500, 900}, {20000, 1000}, {22000, 1000}};
    for (const auto& ref : reference_param_counts()) {
      const NetworkSpec spec = build_named(ref.network, ref.class_count, ref.class_count == 3 ? three : two);
      const auto count = static_cast<long long>(param_count(spec));
      std::snprintf(line, sizeof line, "%-8s %7zu %4zu %10lld %10lld %+10lld\n", ref.network.c_str(),
                    ref.class_count, rfl_of_network(spec), count, static_cast<long long>(ref.reported),
                    count - static_cast<long long>(ref.reported));
      os << line;
    }
    for (const char* extra : {"rfl32", "krfl32"}) {
      const NetworkSpec spec = build_named(extra, 2, two);
      std::snprintf(line, sizeof line, "%-8s %7d %4zu %10zu %10s %10s\n", extra, 2, rfl_of_network(spec),
                    param_count(spec), "-", "-");
      os << line;
    }
    put_string(os.str(), out);
  });
}

ko_status ko_generate(const char* spec_path, const char* manifest_path, size_t* image_count) {
  return guarded([&] {
    require(spec_path, "spec_path");
    require(manifest_path, "manifest_path");
    const Manifest m = generate_to_disk(load_dataset_spec(spec_path), manifest_path);
    if (image_count != nullptr) *image_count = m.images.size();
  });
}

ko_status ko_manifest_classes(const char* manifest, double* mu, double* sigma, size_t capacity, size_t* count) {
  return guarded([&] {
    require(manifest, "manifest");
    require(count, "count");
    const auto classes = read_manifest(manifest).spec.classes();
    *count = classes.size();
    if (mu == nullptr || sigma == nullptr) return;
    if (capacity < classes.size()) throw ArgumentError("class buffer too small");
    for (std::size_t i = 0; i < classes.size(); ++i) {
      mu[i] = classes[i].mu;
      sigma[i] = classes[i].sigma;
    }
  });
}

void ko_train_options_default(ko_train_options* options) {
  if (options == nullptr) return;
  const TrainConfig c;
  *options = {c.epochs, c.batch_size, c.lr_conv, c.lr_korigins, c.seed, c.shuffle ? 1 : 0,
              c.precision == Precision::f32 ? KO_F32 : KO_F64, c.eval_every};
}

ko_status ko_train(const ko_network* net, const char* train_manifest, const char* val_manifest,
                   const ko_train_options* options, const char* out_dir, ko_epoch_callback on_epoch, void* user,
                   double* final_macc) {
  return guarded([&] {
    require(net, "net");
    require(train_manifest, "train_manifest");
    require(options, "options");
    require(out_dir, "out_dir");
    const TrainConfig config = to_config(*options);
    validate(config);
    const Manifest train_m = read_manifest(train_manifest);
    auto check_classes = [&](const Manifest& m, const char* path) {
      if (m.spec.class_count() != net->spec.class_count) {
        throw ConfigError(std::string(path) + " has " + std::to_string(m.spec.class_count()) + " classes but " +
                          net->spec.name + " was built for " + std::to_string(net->spec.class_count));
      }
    };
    check_classes(train_m, train_manifest);
    const auto train_set = load_images(train_m);
    std::vector<LabeledImage> val_set;
    if (val_manifest != nullptr) {
      const Manifest val_m = read_manifest(val_manifest);
      check_classes(val_m, val_manifest);
      val_set = load_images(val_m);
    }
    Rng init(config.seed, kInitStream);
    Network network(net->spec, init);
    const fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    const TrainHistory h = train(network, train_set, val_set, config, [&](const EpochRecord& e) {
      if (on_epoch != nullptr) on_epoch(e.epoch, e.mean_loss, e.val_macc, user);
    });
    save_checkpoint(network, (dir / "model.korg").string());
    save_network_spec(net->spec, (dir / "network.json").string());
    write_history(dir / "history.csv", h);
    if (final_macc != nullptr) *final_macc = h.epochs.back().val_macc;
  });
}

ko_status ko_eval(const char* checkpoint_path, const char* network_json, const char* manifest, ko_precision precision,
                  double* macc) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(manifest, "manifest");
    require(macc, "macc");
    const std::string spec_path = network_json != nullptr
                                      ? std::string(network_json)
                                      : (fs::path(checkpoint_path).parent_path() / "network.json").string();
    Network net = load_checkpoint(checkpoint_path, load_network_spec(spec_path));
    net.set_precision(to_precision(precision));
    *macc = evaluate(net, load_images(read_manifest(manifest)));
  });
}

void ko_sweep_options_default(ko_sweep_options* options) {
  if (options == nullptr) return;
  const SweepOptions s;
  *options = {s.image_count, s.height,    s.width, s.epochs, s.batch_size, s.lr_korigins, s.seed,
              s.precision == Precision::f32 ? KO_F32 : KO_F64, s.eval_every, nullptr, nullptr, nullptr};
}

ko_status ko_sweep_rfl(int noise, const ko_sweep_options* options, const char* out_dir, ko_log_callback log,
                       void* user) {
  return guarded([&] {
    require(options, "options");
    require(out_dir, "out_dir");
    const SweepResult r = run_rfl_sweep(noise != 0, to_sweep_options(*options, log, user), out_dir);
    export_results(r, out_dir);
  });
}

ko_status ko_sweep_hd(const char* problem, const char* size, const ko_sweep_options* options, const char* out_dir,
                      ko_log_callback log, void* user) {
  return guarded([&] {
    require(problem, "problem");
    require(size, "size");
    require(options, "options");
    require(out_dir, "out_dir");
    const SweepResult r = run_hd_sweep(hd_problem_from_string(problem), square_size_from_string(size),
                                       to_sweep_options(*options, log, user), out_dir);
    export_results(r, out_dir);
  });
}

ko_status ko_sweep_verify(const char* sweep_dir, size_t* cells, size_t* mismatches, ko_log_callback log,
                          void* user) {
  return guarded([&] {
    require(sweep_dir, "sweep_dir");
    const fs::path dir(sweep_dir);
    const SweepResult r = read_sweep((dir / "sweep.json").string());
    std::size_t bad = 0;
    for (const auto& c : r.cells) {
      const double again = reevaluate_cell(c.plan, (dir / c.dir / "model.korg").string());
      if (again != c.macc) ++bad;
      if (log != nullptr) {
        char line[256];
        std::snprintf(line, sizeof line, "%s recorded %.6f reevaluated %.6f %s", c.dir.c_str(), c.macc, again,
                      again == c.macc ? "ok" : "MISMATCH");
        log(line, user);
      }
    }
    if (cells != nullptr) *cells = r.cells.size();
    if (mismatches != nullptr) *mismatches = bad;
  });
}

}  // extern "C"
