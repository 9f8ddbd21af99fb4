#include "cmsr/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "cmsr/error.hpp"
#include "cmsr/metrics.hpp"
#include "cmsr/model_io.hpp"

namespace cmsr::cli {
namespace fs = std::filesystem;

namespace {

constexpr const char* kArchiveName = "patches.cmsr";
constexpr const char* kModelName = "model.cmsr";
constexpr const char* kLogName = "train_log.csv";
constexpr const char* kEvalName = "eval.csv";
constexpr const char* kConfigEcho = "config.txt";

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fixed6(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& s, const std::string& what) {
  T v{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || p != last) throw InvalidArgument(what + ": cannot parse '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InvalidArgument(what + ": expected true/false, got '" + s + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename T, typename M>
Field number_field(const char* section, const char* key, M member) {
  return {section, key, [member](const RunConfig& c) { return num(static_cast<double>(member(const_cast<RunConfig&>(c)))); },
          [member](RunConfig& c, const std::string& v, const std::string& what) {
            member(c) = parse_number<T>(v, what);
          }};
}

template <typename M>
Field bool_field(const char* section, const char* key, M member) {
  return {section, key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)) ? "true" : "false"; },
          [member](RunConfig& c, const std::string& v, const std::string& what) { member(c) = parse_bool(v, what); }};
}

template <typename M>
Field path_field(const char* section, const char* key, M member) {
  return {section, key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)).string(); },
          [member](RunConfig& c, const std::string& v, const std::string&) { member(c) = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      number_field<int>("network", "scale", [](RunConfig& c) -> int& { return c.network.scale; }),
      {"network", "profile",
       [](const RunConfig& c) { return std::string(c.network.profile == Profile::deep ? "deep" : "common"); },
       [](RunConfig& c, const std::string& v, const std::string& what) {
         if (v == "common") {
           c.network.profile = Profile::common;
         } else if (v == "deep") {
           c.network.profile = Profile::deep;
         } else {
           throw InvalidArgument(what + ": profile must be common or deep");
         }
       }},
      number_field<double>("network", "hidden_gain", [](RunConfig& c) -> double& { return c.hidden_gain; }),
      number_field<double>("train", "lr_last", [](RunConfig& c) -> double& { return c.train.lr_last; }),
      number_field<double>("train", "lr_rest", [](RunConfig& c) -> double& { return c.train.lr_rest; }),
      number_field<double>("train", "momentum", [](RunConfig& c) -> double& { return c.train.momentum; }),
      number_field<int>("train", "batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }),
      number_field<int>("train", "iterations", [](RunConfig& c) -> int& { return c.train.iterations; }),
      {"train", "seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, const std::string& v, const std::string& what) {
         c.train.seed = parse_number<std::uint64_t>(v, what);
       }},
      bool_field("train", "deterministic", [](RunConfig& c) -> bool& { return c.train.deterministic; }),
      bool_field("train", "use_rcn", [](RunConfig& c) -> bool& { return c.train.use_rcn; }),
      number_field<double>("train", "joint_rate_scale", [](RunConfig& c) -> double& { return c.train.joint_rate_scale; }),
      number_field<double>("train", "gradient_scale", [](RunConfig& c) -> double& { return c.train.gradient_scale; }),
      number_field<double>("train", "divergence_limit", [](RunConfig& c) -> double& { return c.train.divergence_limit; }),
      number_field<int>("train", "validate_every", [](RunConfig& c) -> int& { return c.train.validate_every; }),
      number_field<int>("train", "threads", [](RunConfig& c) -> int& { return c.train.threads; }),
      number_field<double>("loss", "alpha", [](RunConfig& c) -> double& { return c.loss.alpha; }),
      path_field("data", "manifest", [](RunConfig& c) -> fs::path& { return c.manifest; }),
      path_field("data", "archive", [](RunConfig& c) -> fs::path& { return c.archive; }),
      path_field("data", "validation", [](RunConfig& c) -> fs::path& { return c.validation; }),
      number_field<int>("data", "lr_patch", [](RunConfig& c) -> int& { return c.lr_patch; }),
      number_field<int>("data", "stride", [](RunConfig& c) -> int& { return c.stride; }),
      {"data", "augment", [](const RunConfig& c) { return c.augment; },
       [](RunConfig& c, const std::string& v, const std::string& what) {
         if (v != "none" && v != "dihedral8") throw InvalidArgument(what + ": augment must be none or dihedral8");
         c.augment = v;
       }},
      bool_field("eval", "shave", [](RunConfig& c) -> bool& { return c.shave; }),
      path_field("output", "dir", [](RunConfig& c) -> fs::path& { return c.out_dir; }),
  };
  return f;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
  if (!out) throw InvalidArgument("failed writing " + path.string());
}

ImagePlane clamp01(ImagePlane p) {
  for (float& v : p.storage()) v = std::clamp(v, 0.0f, 1.0f);
  return p;
}

Scores score(const ImagePlane& truth, const ImagePlane& pred, const EdgeMask* mask) {
  Scores s;
  s.psnr = psnr(truth, pred);
  s.ssim = ssim(truth, pred);
  if (mask && mask->count() > 0) {
    s.epsnr = epsnr(truth, pred, *mask);
    s.has_epsnr = true;
  }
  return s;
}

template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < n; i = next++) body(i);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

AugmentFlags augment_flags(const std::string& name) {
  return name == "dihedral8" ? AugmentFlags::all8() : AugmentFlags::none();
}

void check_scale(int requested, bool explicit_scale, int actual, const std::string& what) {
  if (explicit_scale && requested != actual) {
    throw InvalidArgument(what + " has scale " + std::to_string(actual) + " but --scale " +
                          std::to_string(requested) + " was requested");
  }
}

DatasetManifest checked_manifest(const fs::path& path, std::ostream& err) {
  if (path.empty()) throw InvalidArgument("no manifest given (--manifest)");
  DatasetManifest m = parse_manifest(path);
  if (m.entries.empty()) throw InvalidArgument("empty manifest");
  const auto missing = missing_files(m);
  if (!missing.empty()) {
    for (const auto& p : missing) err << "missing file: " << p.string() << "\n";
    throw InvalidArgument(std::to_string(missing.size()) + " file(s) named by " + path.string() + " do not exist");
  }
  return m;
}

struct Flags {
  int scale = 0;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string config;
  std::string out;

  std::string manifest;
  int patch = 0;
  int stride = 0;
  std::string augment;
  int synthetic = 0;
  int synthetic_size = 96;

  std::string archive;
  std::string validation;
  double alpha = 1.0;
  bool no_rcn = false;
  int iters = 0;
  int batch = 0;
  std::string profile;
  int log_every = 0;

  std::string model;
  std::string input;
  std::string output;

  bool no_shave = false;
  bool baseline_only = false;

  std::string layer = "interp1";
};

int cmd_dataset(RunConfig& cfg, const Flags& f, std::ostream& out, std::ostream& err) {
  const int s = cfg.network.scale;
  if (f.synthetic > 0) {
    const fs::path dir = cfg.out_dir / "images";
    fs::create_directories(dir);
    std::string list;
    for (int i = 0; i < f.synthetic; ++i) {
      const std::string name = "synthetic_" + std::to_string(i) + ".png";
      const ImagePlane y = synthetic_image(f.synthetic_size, f.synthetic_size, cfg.train.seed + static_cast<std::uint64_t>(i));
      write_png(dir / name, plane_to_gray8(y));
      list += name + "\n";
    }
    write_text(dir / "manifest.txt", list);
    cfg.manifest = dir / "manifest.txt";
    out << "wrote " << f.synthetic << " synthetic images to " << dir.string() << "\n";
  }
  const DatasetManifest m = checked_manifest(cfg.manifest, err);
  std::vector<TrainingTriplet> patches;
  for (const auto& e : m.entries) {
    const auto p = augment(extract_patches(load_triplet(e, s), s, cfg.lr_patch, cfg.stride), augment_flags(cfg.augment));
    patches.insert(patches.end(), p.begin(), p.end());
  }
  if (patches.empty()) throw InvalidArgument("no image is large enough for " + std::to_string(cfg.lr_patch) + "-pixel patches");
  const fs::path archive = cfg.archive.empty() ? cfg.out_dir / kArchiveName : cfg.archive;
  save_patch_archive(patches, s, archive);
  const auto& first = patches.front();
  out << "triplets " << patches.size() << "  lr " << first.lr.height() << "x" << first.lr.width() << "  hr "
      << first.hr.height() << "x" << first.hr.width() << "  boundary maps " << first.boundaries.size() << "\n";
  out << "archive " << archive.string() << "\n";
  return kOk;
}

int cmd_train(RunConfig& cfg, const Flags& f, bool explicit_scale, std::ostream& out, std::ostream& err) {
  const fs::path archive = cfg.archive.empty() ? cfg.out_dir / kArchiveName : cfg.archive;
  if (!fs::exists(archive)) throw InvalidArgument("patch archive " + archive.string() + " does not exist");
  int scale = 0;
  const auto data = load_patch_archive(archive, &scale);
  if (data.empty()) throw InvalidArgument("patch archive " + archive.string() + " holds no triplets");
  check_scale(cfg.network.scale, explicit_scale, scale, "patch archive");
  cfg.network.scale = scale;

  std::vector<ValidationImage> val;
  if (!cfg.validation.empty()) {
    for (const auto& e : checked_manifest(cfg.validation, err).entries) {
      const auto t = load_triplet(e, scale);
      val.push_back({t.lr, t.hr});
    }
  }

  NetworkParams init = build_network(cfg.network);
  init_passthrough(init, cfg.hidden_gain, cfg.train.seed);
  out << "training on " << data.size() << " triplets, scale " << scale << ", "
      << parameter_count(init, false) << " parameters\n";

  Trainer trainer(std::move(init), data, cfg.train, cfg.loss, std::move(val));
  const int every = f.log_every > 0 ? f.log_every : std::max(1, cfg.train.iterations / 10);
  trainer.on_iteration = [&](const TrainLogRow& r) {
    if (r.iter % every != 0 && !r.val_psnr) return;
    out << "stage " << r.stage << " iter " << r.iter << " loss " << num(r.loss_total);
    if (r.val_psnr) out << " val_psnr " << num(*r.val_psnr);
    out << "\n";
  };
  const fs::path model = cfg.out_dir / kModelName;
  const fs::path log = cfg.out_dir / kLogName;
  try {
    trainer.run_all();
  } catch (const TrainingDiverged& e) {
    save_model(e.last_good(), model);
    e.log().write_csv(log);
    err << e.what() << "\nlast good parameters kept in " << model.string() << "\n";
    return kNumericFailure;
  }
  save_model(trainer.params(), model);
  trainer.log().write_csv(log);
  out << "model " << model.string() << "\nlog " << log.string() << "\n";
  return kOk;
}

int cmd_sr(const RunConfig& cfg, const Flags& f, bool explicit_scale, std::ostream& out) {
  if (f.model.empty() || f.input.empty() || f.output.empty()) {
    throw InvalidArgument("sr needs --model, --input and --output");
  }
  const NetworkParams params = load_model(f.model);
  check_scale(cfg.network.scale, explicit_scale, params.scale, "model");
  const Image8 img = read_png(f.input);
  YCbCrPlanes planes = rgb_to_ycbcr(img);
  const Ratio up{params.scale, 1};
  planes.y = super_resolve(params, planes.y, cfg.train.use_rcn);
  planes.cb = resize_bicubic(planes.cb, up);
  planes.cr = resize_bicubic(planes.cr, up);
  Image8 result = ycbcr_to_rgb(planes);
  if (img.channels == 1) {
    Image8 gray{result.height, result.width, 1, {}};
    gray.pixels.reserve(static_cast<std::size_t>(result.height) * result.width);
    for (std::size_t i = 0; i < result.pixels.size(); i += 3) gray.pixels.push_back(result.pixels[i]);
    result = std::move(gray);
  }
  write_png(f.output, result);
  out << "wrote " << result.width << "x" << result.height << " " << f.output << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const Flags& f, bool explicit_scale, std::ostream& out, std::ostream& err) {
  const DatasetManifest m = checked_manifest(cfg.manifest, err);
  int scale = cfg.network.scale;
  Predictor predict;
  if (f.baseline_only) {
    predict = [scale](const ImagePlane& lr, const ImagePlane&) { return resize_bicubic(lr, Ratio{scale, 1}); };
  } else {
    if (f.model.empty()) throw InvalidArgument("eval needs --model (or --baseline-only)");
    auto params = std::make_shared<NetworkParams>(load_model(f.model));
    check_scale(cfg.network.scale, explicit_scale, params->scale, "model");
    scale = params->scale;
    const bool use_rcn = cfg.train.use_rcn;
    predict = [params, use_rcn](const ImagePlane& lr, const ImagePlane&) { return super_resolve(*params, lr, use_rcn); };
  }
  const auto rows = evaluate(m, scale, predict, cfg.shave, cfg.train.threads);
  const std::string csv = eval_csv(rows);
  const fs::path path = cfg.out_dir / kEvalName;
  write_text(path, csv);
  out << csv;
  return kOk;
}

int cmd_inspect(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  if (f.model.empty()) throw InvalidArgument("inspect-kernels needs --model");
  const NetworkParams params = load_model(f.model);
  if (f.layer != "interp1" && f.layer != "interp2") throw InvalidArgument("--layer must be interp1 or interp2");
  const DeconvSpec& spec = f.layer == "interp1" ? params.interp_boundary : params.interp_residual;
  const int slices = std::min(spec.in_channels, spec.out_channels);
  for (int i = 0; i < slices; ++i) {
    write_png(cfg.out_dir / (f.layer + "_k" + std::to_string(i) + ".png"), kernel_image(spec.kernels, i, i));
  }
  write_text(cfg.out_dir / (f.layer + "_kernels.csv"), kernel_csv(spec));

  DeconvSpec reference(1, 1, spec.kernel_size, params.scale);
  reference.kernels = init_deconv_bicubic(params.scale, 1);
  write_png(cfg.out_dir / "bicubic_reference.png", kernel_image(reference.kernels, 0, 0));
  write_text(cfg.out_dir / "bicubic_reference.csv", kernel_csv(reference));
  out << "wrote " << slices << " " << spec.kernel_size << "x" << spec.kernel_size << " kernel images to "
      << cfg.out_dir.string() << "\n";
  return kOk;
}

}  // namespace

std::string RunConfig::to_text() const {
  std::string text;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      text += (text.empty() ? "[" : "\n[") + section + "]\n";
    }
    text += std::string(f.key) + " = " + f.get(*this) + "\n";
  }
  return text;
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw InvalidArgument(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& all = fields();
    const auto it = std::find_if(all.begin(), all.end(),
                                 [&](const Field& f) { return section == f.section && key == f.key; });
    if (it == all.end()) throw InvalidArgument(where + ": unknown setting [" + section + "] " + key);
    it->set(*this, value, where);
  }
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  c.apply_text(ss.str(), path.string());
  return c;
}

int resolve_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("CMSR_THREADS")) {
    const int cap = parse_number<int>(trim(env), "CMSR_THREADS");
    if (cap < 1) throw InvalidArgument("CMSR_THREADS must be at least 1");
    n = std::min(n, cap);
  }
  return n;
}

std::vector<EvalRow> evaluate(const DatasetManifest& manifest, int scale, const Predictor& predict, bool shave_border,
                              int threads) {
  std::vector<EvalRow> rows(manifest.entries.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    const auto& entry = manifest.entries[i];
    const TrainingTriplet t = load_triplet(entry, scale);
    const ImagePlane pred = clamp01(predict(t.lr, t.hr));
    if (pred.shape() != t.hr.shape()) throw InvalidArgument("prediction size differs from " + entry.hr_path.string());
    const ImagePlane bic = clamp01(resize_bicubic(t.lr, Ratio{scale, 1}));
    const int border = shave_border ? scale : 0;

    std::optional<EdgeMask> mask;
    try {
      mask = shave(edge_mask_union(t.boundaries), border);
    } catch (const EmptyMask&) {
    }
    EvalRow& r = rows[i];
    r.image = entry.hr_path.filename().string();
    r.edge_pixels = mask ? mask->count() : 0;
    const ImagePlane g = shave(t.hr, border);
    r.model = score(g, shave(pred, border), mask ? &*mask : nullptr);
    r.bicubic = score(g, shave(bic, border), mask ? &*mask : nullptr);
  });
  return rows;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = "image,psnr,ssim,epsnr,edge_pixels,bicubic_psnr,bicubic_ssim,bicubic_epsnr\n";
  struct Mean {
    double sum = 0.0;
    int count = 0;
    int inf = 0;
    void add(double v) {
      if (std::isinf(v)) {
        ++inf;
      } else {
        sum += v;
        ++count;
      }
    }
    std::string str() const { return count ? fixed6(sum / count) : std::string(); }
  };
  Mean m[6];
  double edges = 0.0;
  auto scores = [](const Scores& s, Mean* acc) {
    acc[0].add(s.psnr);
    acc[1].add(s.ssim);
    if (s.has_epsnr) acc[2].add(s.epsnr);
    return fixed6(s.psnr) + "," + fixed6(s.ssim) + "," + (s.has_epsnr ? fixed6(s.epsnr) : std::string());
  };
  for (const auto& r : rows) {
    const std::string model = scores(r.model, m);
    const std::string bic = scores(r.bicubic, m + 3);
    out += r.image + "," + model + "," + std::to_string(r.edge_pixels) + "," + bic + "\n";
    edges += static_cast<double>(r.edge_pixels);
  }
  out += "mean," + m[0].str() + "," + m[1].str() + "," + m[2].str() + "," +
         (rows.empty() ? std::string() : fixed6(edges / static_cast<double>(rows.size()))) + "," + m[3].str() + "," +
         m[4].str() + "," + m[5].str() + "\n";
  if (m[0].inf + m[2].inf + m[3].inf + m[5].inf > 0) {
    out += "# inf excluded from means: psnr " + std::to_string(m[0].inf) + ", epsnr " + std::to_string(m[2].inf) +
           ", bicubic_psnr " + std::to_string(m[3].inf) + ", bicubic_epsnr " + std::to_string(m[5].inf) + "\n";
  }
  return out;
}

std::string kernel_csv(const DeconvSpec& spec) {
  std::string out = "in,out,y,x,value\n";
  const int n = spec.kernel_size;
  for (int i = 0; i < spec.in_channels; ++i) {
    for (int o = 0; o < spec.out_channels; ++o) {
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          out += std::to_string(i) + "," + std::to_string(o) + "," + std::to_string(y) + "," + std::to_string(x) +
                 "," + num(spec.kernels(i, o, y, x)) + "\n";
        }
      }
    }
  }
  return out;
}

Image8 kernel_image(const Tensor& kernels, int in, int out) {
  const int n = kernels.shape()[2];
  float peak = 0.0f;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) peak = std::max(peak, std::abs(kernels(in, out, y, x)));
  }
  Image8 img{n, n, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 0)};
  if (peak == 0.0f) return img;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      img.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(255.0 * std::abs(kernels(in, out, y, x)) / peak));
    }
  }
  return img;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contextualized multi-task super-resolution"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  auto* o_scale = app.add_option("--scale", f.scale, "Upscaling factor")->check(CLI::IsMember({2, 3, 4}));
  auto* o_seed = app.add_option("--seed", f.seed, "Random seed");
  app.add_flag("--deterministic", f.deterministic, "Fixed reduction order when training with threads");
  app.add_option("--config", f.config, "Config file (key = value with [sections])");
  auto* o_out = app.add_option("--out", f.out, "Output directory");

  auto* dataset = app.add_subcommand("dataset", "Cut a manifest's images into a patch archive");
  auto* o_manifest = dataset->add_option("--manifest", f.manifest, "Image list");
  auto* o_patch = dataset->add_option("--patch", f.patch, "LR patch size");
  auto* o_stride = dataset->add_option("--stride", f.stride, "LR patch stride");
  auto* o_augment = dataset->add_option("--augment", f.augment, "none or dihedral8")->check(CLI::IsMember({"none", "dihedral8"}));
  dataset->add_option("--synthetic", f.synthetic, "Generate this many synthetic images first");
  dataset->add_option("--synthetic-size", f.synthetic_size, "Side of the synthetic images");

  auto* train = app.add_subcommand("train", "Run the three training stages");
  auto* o_archive = train->add_option("--archive", f.archive, "Patch archive (default <out>/patches.cmsr)");
  auto* o_validation = train->add_option("--validation", f.validation, "Manifest scored during training");
  auto* o_alpha = train->add_option("--alpha", f.alpha, "Boundary loss weight");
  train->add_flag("--no-rcn", f.no_rcn, "Skip stage 2; the residual branch stays zero");
  auto* o_iters = train->add_option("--iters", f.iters, "Iterations per stage");
  auto* o_batch = train->add_option("--batch", f.batch, "Batch size");
  auto* o_profile = train->add_option("--profile", f.profile, "common or deep")->check(CLI::IsMember({"common", "deep"}));
  train->add_option("--log-every", f.log_every, "Progress line interval");

  auto* sr = app.add_subcommand("sr", "Super-resolve one PNG");
  sr->add_option("--model", f.model, "Model file")->required();
  sr->add_option("--input", f.input, "Input PNG")->required();
  sr->add_option("--output", f.output, "Output PNG")->required();

  auto* eval = app.add_subcommand("eval", "Score a model and the bicubic baseline");
  eval->add_option("--model", f.model, "Model file");
  auto* o_eval_manifest = eval->add_option("--manifest", f.manifest, "Image list");
  eval->add_flag("--no-shave", f.no_shave, "Score full frames");
  eval->add_flag("--baseline-only", f.baseline_only, "Use bicubic in place of the model");

  auto* inspect = app.add_subcommand("inspect-kernels", "Dump the learned interpolation kernels");
  inspect->add_option("--model", f.model, "Model file")->required();
  inspect->add_option("--layer", f.layer, "interp1 or interp2")->check(CLI::IsMember({"interp1", "interp2"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
    const bool explicit_scale = o_scale->count() > 0;
    if (explicit_scale) cfg.network.scale = f.scale;
    if (o_seed->count()) cfg.train.seed = f.seed;
    if (f.deterministic) cfg.train.deterministic = true;
    if (o_out->count()) cfg.out_dir = f.out;
    if (o_manifest->count() || o_eval_manifest->count()) cfg.manifest = f.manifest;
    if (o_patch->count()) cfg.lr_patch = f.patch;
    if (o_stride->count()) cfg.stride = f.stride;
    if (o_augment->count()) cfg.augment = f.augment;
    if (o_archive->count()) cfg.archive = f.archive;
    if (o_validation->count()) cfg.validation = f.validation;
    if (o_alpha->count()) cfg.loss.alpha = f.alpha;
    if (f.no_rcn) cfg.train.use_rcn = false;
    if (o_iters->count()) cfg.train.iterations = f.iters;
    if (o_batch->count()) cfg.train.batch_size = f.batch;
    if (o_profile->count()) cfg.network.profile = f.profile == "deep" ? Profile::deep : Profile::common;
    if (f.no_shave) cfg.shave = false;
    cfg.train.threads = resolve_threads();
    if (cfg.network.scale < 2 || cfg.network.scale > 4) throw InvalidArgument("scale must be 2, 3 or 4");
    cfg.train.validate();
    if (cfg.loss.alpha < 0.0) throw InvalidArgument("alpha must be non-negative");

    fs::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / kConfigEcho, cfg.to_text());

    if (dataset->parsed()) return cmd_dataset(cfg, f, out, err);
    if (train->parsed()) return cmd_train(cfg, f, explicit_scale, out, err);
    if (sr->parsed()) return cmd_sr(cfg, f, explicit_scale, out);
    if (eval->parsed()) return cmd_eval(cfg, f, explicit_scale, out, err);
    return cmd_inspect(cfg, f, out);
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
}

}  // namespace cmsr::cli
