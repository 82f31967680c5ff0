#include "pwkd/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "pwkd/checkpoint.hpp"
#include "pwkd/config.hpp"
#include "pwkd/train.hpp"

namespace pwkd {

namespace {

namespace fs = std::filesystem;

const std::set<std::string> kKnownKeys = {
    "dataset.dir", "dataset.name", "dataset.subset", "dataset.augment",
    "model.family", "model.n", "model.k", "model.widths",
    "decompose.alpha", "decompose.temperature",
    "distill.method", "distill.beta", "distill.temperature", "distill.teacher",
    "distill.hints", "distill.add_kd",
    "stage.order",
    "lr.form", "lr.min", "lr.max", "lr.per_iteration",
    "train.epochs", "train.batch", "train.momentum", "train.weight_decay",
    "train.reset_momentum",
    "seed",
    "out.dir", "out.steps", "out.timing",
    "eval.checkpoint", "eval.rho",
};

const char* kUsage = R"(usage: pwkd <command> [--config FILE] [--key value ...]

commands:
  decompose   train a slimmable teacher jointly at every width
  distill     staged student distillation from a teacher checkpoint
  baselines   factor grid: scratch / clr_only / kd / pwkd / pwkd_clr
  eval        top-1 accuracy of a checkpoint at one width
  plan        emit the stage/LR schedule as CSV and SVG

configuration is `key = value` lines (dotted keys); --key value overrides the
file. Common keys:
  dataset.dir, dataset.name (mnist|cifar10), dataset.subset, dataset.augment
  model.family (cifar-resnet|plain-convnet), model.n, model.k, model.widths
  decompose.alpha, decompose.temperature
  distill.method (kd|fitnet|at|sp), distill.beta, distill.temperature,
  distill.teacher, distill.hints, distill.add_kd
  stage.order (ascending|descending|fixed:<rho>)
  lr.form (triangular|cosine|linear|multistep|step; rectangle = triangular),
  lr.min, lr.max, lr.per_iteration
  train.epochs, train.batch, train.momentum, train.weight_decay,
  train.reset_momentum
  seed, out.dir, out.steps, out.timing (wall|none)
  eval.checkpoint, eval.rho

metrics CSV columns: epoch,stage_index,rho,lr,train_loss,train_acc,test_acc,
wall_seconds (baselines.csv adds a leading `run` column). Checkpoints are
versioned little-endian binaries with bit-exact round trips.
)";

Config parse_args(int argc, const char* const* argv) {
  Config cfg;
  int i = 2;
  // --config may appear first and seeds the map; other flags override
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  while (i < argc) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0)
      throw ConfigError("expected --key value, got '" + arg + "'");
    arg = arg.substr(2);
    if (i + 1 >= argc) throw ConfigError("missing value for --" + arg);
    std::string value = argv[i + 1];
    i += 2;
    if (arg == "config") {
      if (!config_path.empty()) throw ConfigError("duplicate --config");
      config_path = value;
    } else {
      overrides.emplace_back(arg, value);
    }
  }
  if (!config_path.empty()) cfg = Config::from_file(config_path);
  for (auto& [k, v] : overrides) cfg.override_value(k, v);
  cfg.check_known(kKnownKeys);
  return cfg;
}

ArchSpec arch_from(const Config& cfg, const Dataset& ds) {
  ArchSpec spec;
  spec.family = parse_family(cfg.get_str("model.family", "plain-convnet"));
  spec.n = cfg.get_int("model.n", 1);
  spec.k = cfg.get_int("model.k", 1);
  spec.in_channels = ds.train_x.dim(1);
  spec.in_h = ds.train_x.dim(2);
  spec.in_w = ds.train_x.dim(3);
  spec.classes = ds.classes;
  spec.validate();
  return spec;
}

LRSchedule schedule_from(const Config& cfg, const std::string& default_form) {
  LRSchedule s;
  s.form = parse_lr_form(cfg.get_str("lr.form", default_form));
  s.lr_min = cfg.get_double("lr.min", 1e-4);
  s.lr_max = cfg.get_double("lr.max", 0.1);
  s.validate();
  return s;
}

LoopOptions loop_from(const Config& cfg, const std::string& default_form) {
  LoopOptions opt;
  opt.lr = schedule_from(cfg, default_form);
  opt.lr_per_iteration = cfg.get_bool("lr.per_iteration", false);
  opt.wall_clock = cfg.get_str("out.timing", "wall") != "none";
  opt.augment = cfg.get_bool("dataset.augment", false);
  return opt;
}

Dataset dataset_from(const Config& cfg) {
  cfg.require({"dataset.dir", "dataset.name"});
  return load_dataset(cfg.get_str("dataset.name"), cfg.get_str("dataset.dir"),
                      cfg.get_int("dataset.subset", 0), cfg.get_u64("seed", 0));
}

std::string out_dir(const Config& cfg) {
  const std::string dir = cfg.get_str("out.dir", "out");
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> hints_from(const Config& cfg) {
  std::vector<std::string> hints;
  std::stringstream ss(cfg.get_str("distill.hints", "stage3"));
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) hints.push_back(item);
  return hints;
}

DistillConfig distill_from(const Config& cfg) {
  DistillConfig d;
  d.method = parse_method(cfg.get_str("distill.method", "kd"));
  d.beta = static_cast<float>(cfg.get_double("distill.beta", 0.1));
  d.temperature = static_cast<float>(cfg.get_double("distill.temperature", 4.0));
  d.hint_points = hints_from(cfg);
  d.add_kd_term = cfg.get_bool("distill.add_kd", false);
  d.validate();
  return d;
}

int cmd_decompose(const Config& cfg) {
  Dataset ds = dataset_from(cfg);
  ArchSpec spec = arch_from(cfg, ds);
  const auto widths = cfg.get_widths("model.widths", {0.25, 0.5, 0.75, 1.0});
  const uint64_t seed = cfg.get_u64("seed", 0);
  auto net = build<float>(spec, widths, seed);

  DecomposeConfig dc;
  dc.alpha = static_cast<float>(cfg.get_double("decompose.alpha", 0.5));
  dc.teacher_temperature = static_cast<float>(cfg.get_double("decompose.temperature", 1.0));
  dc.epochs = cfg.get_int("train.epochs", 0);
  dc.batch_size = cfg.get_int("train.batch", 64);
  dc.momentum = static_cast<float>(cfg.get_double("train.momentum", 0.9));
  dc.weight_decay = static_cast<float>(cfg.get_double("train.weight_decay", 0.0));
  dc.seed = seed;

  LoopOptions opt = loop_from(cfg, "step");
  Sgd optimizer;
  auto rows = decompose_train(net, ds, dc, opt, optimizer);

  const std::string dir = out_dir(cfg);
  write_metrics_csv(dir + "/metrics.csv", rows);
  CheckpointMeta meta{.spec = spec,
                      .widths = widths,
                      .seed = seed,
                      .epoch = dc.epochs,
                      .dataset = ds.name,
                      .norm_mean = ds.mean,
                      .norm_std = ds.stdev};
  save_checkpoint(dir + "/teacher.ckpt", net, meta, &optimizer);
  for (int g = 0; g < net.group_count(); ++g)
    std::cout << "width " << net.widths[static_cast<size_t>(g)]
              << " test_acc " << evaluate(net, ds.test_x, ds.test_y, g) << "\n";
  std::cout << "wrote " << dir << "/teacher.ckpt and " << dir << "/metrics.csv\n";
  return 0;
}

RunConfig runconfig_from(const Config& cfg, const Dataset& ds) {
  RunConfig rc;
  rc.student = arch_from(cfg, ds);
  rc.distill = distill_from(cfg);
  rc.fixed_rho = 1.0;
  rc.order = parse_stage_order(cfg.get_str("stage.order", "ascending"), &rc.fixed_rho);
  rc.epochs = cfg.get_int("train.epochs", 0);
  rc.batch = cfg.get_int("train.batch", 64);
  rc.momentum = static_cast<float>(cfg.get_double("train.momentum", 0.9));
  rc.weight_decay = static_cast<float>(cfg.get_double("train.weight_decay", 0.0));
  rc.seed = cfg.get_u64("seed", 0);
  rc.reset_momentum_at_stage = cfg.get_bool("train.reset_momentum", false);
  return rc;
}

int cmd_distill(const Config& cfg, bool grid) {
  cfg.require({"distill.teacher"});
  Dataset ds = dataset_from(cfg);
  auto teacher = load_checkpoint(cfg.get_str("distill.teacher"));
  RunConfig rc = runconfig_from(cfg, ds);
  LoopOptions opt = loop_from(cfg, "triangular");
  const std::string dir = out_dir(cfg);

  if (grid) {
    auto runs = run_baselines(teacher.net, ds, rc, opt);
    write_combined_csv(dir + "/baselines.csv", runs);
    for (const auto& [name, rows] : runs)
      std::cout << name << " final test_acc " << (rows.empty() ? 0.0 : rows.back().test_acc)
                << "\n";
    std::cout << "wrote " << dir << "/baselines.csv\n";
    return 0;
  }

  auto student = build<float>(rc.student, {1.0}, derive_seed(rc.seed, "student-init"));
  Sgd optimizer;
  std::vector<MetricsRow> rows;
  const std::string steps_path = cfg.get_str("out.steps", "");
  if (!steps_path.empty()) {
    std::ofstream sf(steps_path, std::ios::trunc);
    if (!sf) throw IoError("cannot open " + steps_path + " for writing");
    sf << "step,loss\n";
    rows = distill_train(student, teacher.net, ds, rc, opt, optimizer,
                         [&sf](int step, float loss) {
                           char buf[64];
                           std::snprintf(buf, sizeof(buf), "%d,%.9g\n", step, loss);
                           sf << buf;
                         });
  } else {
    rows = distill_train(student, teacher.net, ds, rc, opt, optimizer);
  }

  write_metrics_csv(dir + "/metrics.csv", rows);
  CheckpointMeta meta{.spec = rc.student,
                      .widths = {1.0},
                      .seed = rc.seed,
                      .epoch = rc.epochs,
                      .dataset = ds.name,
                      .norm_mean = ds.mean,
                      .norm_std = ds.stdev};
  save_checkpoint(dir + "/student.ckpt", student, meta, &optimizer);
  std::cout << "final test_acc " << (rows.empty() ? 0.0 : rows.back().test_acc) << "\n";
  std::cout << "wrote " << dir << "/student.ckpt and " << dir << "/metrics.csv\n";
  return 0;
}

int cmd_eval(const Config& cfg) {
  cfg.require({"eval.checkpoint"});
  Dataset ds = dataset_from(cfg);
  auto loaded = load_checkpoint(cfg.get_str("eval.checkpoint"));
  const double rho = cfg.get_double("eval.rho", 1.0);
  const int g_idx = loaded.net.width_index(rho);
  const double acc = evaluate(loaded.net, ds.test_x, ds.test_y, g_idx);
  std::cout << "width " << rho << " test_acc " << acc << "\n";
  return 0;
}

int cmd_plan(const Config& cfg) {
  const auto widths = cfg.get_widths("model.widths", {0.25, 0.5, 0.75, 1.0});
  double fixed_rho = 1.0;
  const StageOrder order = parse_stage_order(cfg.get_str("stage.order", "ascending"), &fixed_rho);
  const int epochs = cfg.get_int("train.epochs", 320);
  auto plan = make_plan(epochs, widths, order, fixed_rho);
  auto sched = schedule_from(cfg, "triangular");

  const std::string dir = out_dir(cfg);
  {
    std::ofstream f(dir + "/plan.csv", std::ios::trunc);
    if (!f) throw IoError("cannot open " + dir + "/plan.csv for writing");
    f << plan_csv(plan, sched);
  }
  {
    std::ofstream f(dir + "/plan.svg", std::ios::trunc);
    if (!f) throw IoError("cannot open " + dir + "/plan.svg for writing");
    f << plan_svg(plan, sched);
  }
  std::cout << "wrote " << dir << "/plan.csv and " << dir << "/plan.svg\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  if (argc < 2) {
    std::cerr << kUsage;
    return 2;
  }
  const std::string cmd = argv[1];
  if (cmd == "--help" || cmd == "-h" || cmd == "help") {
    std::cout << kUsage;
    return 0;
  }
  try {
    Config cfg = parse_args(argc, argv);
    if (cmd == "decompose") return cmd_decompose(cfg);
    if (cmd == "distill") return cmd_distill(cfg, false);
    if (cmd == "baselines") return cmd_distill(cfg, true);
    if (cmd == "eval") return cmd_eval(cfg);
    if (cmd == "plan") return cmd_plan(cfg);
    std::cerr << "unknown command '" << cmd << "'\n" << kUsage;
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace pwkd
