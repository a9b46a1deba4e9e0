// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#include "mamil/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "mamil/checkpoint.hpp"
#include "mamil/explain.hpp"
#include "mamil/rng.hpp"

namespace mamil::cli {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::shape: return kBadFlags;
    case ErrorKind::io:
    case ErrorKind::format: return kIoError;
    case ErrorKind::divergence: return kDivergence;
    case ErrorKind::mismatch: return kMismatch;
    case ErrorKind::not_found: return kUnknownBag;
  }
  return kBadFlags;
}

// ---------------------------------------------------------------------------
// Value parsing

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_integer(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    fail(ErrorKind::invalid_argument, "'" + std::string(key) + "' expects an integer, got '" + std::string(text) + "'");
  return v;
}

double parse_real(std::string_view key, std::string_view text) {
  try {
    const double v = parse_double(trim(text));
    if (!std::isfinite(v)) throw Error(ErrorKind::invalid_argument, "not finite");
    return v;
  } catch (const Error&) {
    fail(ErrorKind::invalid_argument, "'" + std::string(key) + "' expects a number, got '" + std::string(text) + "'");
  }
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  fail(ErrorKind::invalid_argument, "'" + std::string(key) + "' expects true or false, got '" + std::string(text) + "'");
}

std::vector<std::size_t> parse_widths(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  const std::string t = trim(text);
  if (t.empty() || t == "none") return out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto w = parse_integer<std::size_t>(key, item);
    if (w == 0) fail(ErrorKind::invalid_argument, "'" + std::string(key) + "' widths must be >= 1");
    out.push_back(w);
  }
  return out;
}

std::string join_widths(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
KeySpec integer_key(std::string name, T RunConfig::*field) {
  return {name, [name, field](RunConfig& c, std::string_view v) { c.*field = parse_integer<T>(name, v); },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

KeySpec real_key(std::string name, double RunConfig::*field) {
  return {name, [name, field](RunConfig& c, std::string_view v) { c.*field = parse_real(name, v); },
          [field](const RunConfig& c) { return format_double(c.*field); }};
}

KeySpec path_key(std::string name, std::string RunConfig::*field) {
  return {name, [field](RunConfig& c, std::string_view v) { c.*field = trim(v); },
          [field](const RunConfig& c) { return c.*field; }};
}

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = [] {
    std::vector<KeySpec> s;
    s.push_back(integer_key("templates", &RunConfig::templates));
    s.push_back(integer_key("radius", &RunConfig::radius));
    s.push_back(integer_key("dim_f", &RunConfig::dim_f));
    s.push_back({"encoder_layers",
                 [](RunConfig& c, std::string_view v) { c.encoder_layers = parse_widths("encoder_layers", v); },
                 [](const RunConfig& c) { return join_widths(c.encoder_layers); }});
    s.push_back({"classifier_layers",
                 [](RunConfig& c, std::string_view v) { c.classifier_layers = parse_widths("classifier_layers", v); },
                 [](const RunConfig& c) { return join_widths(c.classifier_layers); }});
    s.push_back({"neighborhood", [](RunConfig& c, std::string_view v) { c.neighborhood = parse_bool("neighborhood", v); },
                 [](const RunConfig& c) { return std::string(c.neighborhood ? "true" : "false"); }});
    s.push_back(real_key("lr", &RunConfig::lr));
    s.push_back(real_key("beta1", &RunConfig::beta1));
    s.push_back(real_key("beta2", &RunConfig::beta2));
    s.push_back(real_key("eps_adam", &RunConfig::eps_adam));
    s.push_back(real_key("weight_decay", &RunConfig::weight_decay));
    s.push_back(integer_key("epochs", &RunConfig::epochs));
    s.push_back(integer_key("seed", &RunConfig::seed));
    s.push_back({"variant", [](RunConfig& c, std::string_view v) { c.variant = parse_variant(trim(v)); },
                 [](const RunConfig& c) { return std::string(to_string(c.variant)); }});
    s.push_back(integer_key("bags", &RunConfig::bags));
    s.push_back(integer_key("min_size", &RunConfig::min_size));
    s.push_back(integer_key("max_size", &RunConfig::max_size));
    s.push_back({"pool",
                 [](RunConfig& c, std::string_view v) {
                   const std::string t = trim(v);
                   if (t != "train" && t != "test" && t != "all")
                     fail(ErrorKind::invalid_argument, "'pool' expects train, test or all, got '" + t + "'");
                   c.pool = t;
                 },
                 [](const RunConfig& c) { return c.pool; }});
    s.push_back(real_key("test_fraction", &RunConfig::test_fraction));
    s.push_back(path_key("data", &RunConfig::data));
    s.push_back(path_key("ckpt", &RunConfig::ckpt));
    s.push_back(path_key("out", &RunConfig::out));
    return s;
  }();
  return specs;
}

const KeySpec& spec_for(std::string_view key) {
  for (const KeySpec& s : key_specs())
    if (s.name == key) return s;
  fail(ErrorKind::invalid_argument, "unknown config key '" + std::string(key) + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const KeySpec& s : key_specs()) n.push_back(s.name);
    return n;
  }();
  return names;
}

bool RunConfig::is_key(std::string_view key) {
  return std::any_of(key_specs().begin(), key_specs().end(), [&](const KeySpec& s) { return s.name == key; });
}

void RunConfig::set(std::string_view key, std::string_view value) { spec_for(key).set(*this, value); }

std::string RunConfig::get(std::string_view key) const { return spec_for(key).get(*this); }

ModelConfig RunConfig::model_config() const {
  ModelConfig c;
  c.templates = templates;
  c.radius = radius;
  c.dim_f = dim_f;
  c.encoder_layers = encoder_layers;
  c.classifier_layers = classifier_layers;
  c.neighborhood = neighborhood;
  c.seed = seed;
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.learning_rate = lr;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.eps_adam = eps_adam;
  c.weight_decay = weight_decay;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

std::size_t RunConfig::bag_count() const {
  if (bags != 0) return bags;
  return pool == "test" ? 500 : 2000;
}

std::map<std::string, std::string> parse_config_text(std::istream& in, std::string_view source) {
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const std::string where = std::string(source) + ":" + std::to_string(number);
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail(ErrorKind::invalid_argument, where + ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    if (!RunConfig::is_key(key)) fail(ErrorKind::invalid_argument, where + ": unknown config key '" + key + "'");
    if (values.count(key)) fail(ErrorKind::invalid_argument, where + ": duplicate config key '" + key + "'");
    values[key] = trim(body.substr(eq + 1));
  }
  return values;
}

std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config file " + path);
  return parse_config_text(in, path);
}

RunConfig resolve(RunConfig base, const std::map<std::string, std::string>& file_values,
                  const std::map<std::string, std::string>& flag_values) {
  for (const auto& [key, value] : file_values) {
    try {
      base.set(key, value);
    } catch (const Error& e) {
      fail(e.kind(), std::string("config file: ") + e.what());
    }
  }
  for (const auto& [key, value] : flag_values) {
    try {
      base.set(key, value);
    } catch (const Error& e) {
      fail(e.kind(), "flag " + flag_name(key) + ": " + e.what());
    }
  }
  return base;
}

std::string flag_name(std::string_view key) {
  std::string f = "--" + std::string(key);
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

const std::vector<std::string> kModelKeys = {"templates",         "radius",       "dim_f", "encoder_layers",
                                             "classifier_layers", "neighborhood", "seed"};
const std::vector<std::string> kTrainKeys = {"lr", "beta1", "beta2", "eps_adam", "weight_decay", "epochs", "seed"};
const std::vector<std::string> kGenerateKeys = {"variant", "bags",          "min_size", "max_size",
                                                "pool",    "test_fraction", "seed",     "out"};

// Flags shared through RunConfig, captured as raw text and resolved after parsing.
struct KeyFlags {
  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
  bool no_neighborhood = false;
  bool neighborhood = false;
  CLI::Option* no_nb_flag = nullptr;
  CLI::Option* nb_flag = nullptr;

  void attach(CLI::App* app, const std::vector<std::vector<std::string>>& groups) {
    app->add_option("--config", config_path, "flat key = value file; flags override it");
    for (const auto& group : groups)
      for (const std::string& key : group) {
        if (options.count(key)) continue;
        if (key == "neighborhood") {
          nb_flag = app->add_flag("--neighborhood", neighborhood, "use neighborhood attention (default)");
          no_nb_flag = app->add_flag("--no-neighborhood", no_neighborhood, "disable neighborhood attention");
          options[key] = nullptr;
          continue;
        }
        options[key] = app->add_option(flag_name(key), raw[key], "config key '" + key + "'");
      }
    if (no_nb_flag) no_nb_flag->excludes(nb_flag);
  }

  RunConfig resolve_with(RunConfig base) const {
    std::map<std::string, std::string> flags;
    for (const auto& [key, opt] : options)
      if (opt && opt->count() > 0) flags[key] = raw.at(key);
    if (no_nb_flag && no_nb_flag->count() > 0) flags["neighborhood"] = "false";
    if (nb_flag && nb_flag->count() > 0) flags["neighborhood"] = "true";
    const auto file = config_path.empty() ? std::map<std::string, std::string>{} : load_config_file(config_path);
    return resolve(std::move(base), file, flags);
  }
};

void require_path(const std::string& value, std::string_view flag) {
  if (value.empty()) fail(ErrorKind::invalid_argument, "missing required " + std::string(flag));
}

void check_fit(const Checkpoint& ckpt, const Dataset& ds) {
  if (ckpt.model.config.input_dim != ds.feature_dim)
    fail(ErrorKind::mismatch, "checkpoint expects " + std::to_string(ckpt.model.config.input_dim) +
                                  " features, dataset has " + std::to_string(ds.feature_dim));
  if (ckpt.coord_mode && *ckpt.coord_mode != ds.coord_mode)
    fail(ErrorKind::mismatch, "checkpoint was trained on coord mode '" + std::string(to_string(*ckpt.coord_mode)) +
                                  "', dataset has '" + std::string(to_string(ds.coord_mode)) + "'");
}

std::string metric(double v) { return format_double(v); }

int cmd_generate(const RunConfig& rc, const std::string& images, const std::string& labels, const std::string& tabular,
                 std::ostream& out) {
  require_path(rc.out, "--out");
  Dataset ds;
  if (!tabular.empty()) {
    if (!images.empty() || !labels.empty())
      fail(ErrorKind::invalid_argument, "--tabular cannot be combined with --mnist-images/--mnist-labels");
    ds = load_tabular_mil(tabular).dataset;
  } else {
    if (images.empty() || labels.empty())
      fail(ErrorKind::invalid_argument, "generate needs --mnist-images and --mnist-labels, or --tabular");
    if (rc.test_fraction < 0.0 || rc.test_fraction > 1.0)
      fail(ErrorKind::invalid_argument, "--test-fraction must lie in [0, 1]");
    const IdxImages idx = load_idx_images(images);
    const std::vector<int> digit_labels = load_idx_labels(labels);
    if (digit_labels.size() != idx.count)
      fail(ErrorKind::format, std::to_string(idx.count) + " images but " + std::to_string(digit_labels.size()) +
                                  " labels");
    const DigitPool pool = make_pool(idx.pixels, idx.rows * idx.cols, digit_labels);
    DigitBagSpec spec;
    spec.variant = rc.variant;
    spec.count = rc.bag_count();
    spec.min_size = rc.min_size;
    spec.max_size = rc.max_size;
    spec.seed = rc.seed;
    if (rc.pool == "all") {
      ds = generate_mnist_mil(pool, spec);
    } else {
      const auto [train_pool, test_pool] = split_pool(pool, rc.test_fraction);
      ds = generate_mnist_mil(rc.pool == "test" ? test_pool : train_pool, spec);
    }
  }
  save_dataset(ds, rc.out);
  const double frac = ds.bags.empty() ? 0.0 : static_cast<double>(ds.positives()) / static_cast<double>(ds.size());
  out << "bags=" << ds.size() << " positive_fraction=" << metric(frac) << '\n';
  return kOk;
}

int cmd_train(const RunConfig& rc, const std::string& init_ckpt, bool freeze_old, std::string history_path,
              std::ostream& out, std::ostream& err) {
  require_path(rc.data, "--data");
  require_path(rc.out, "--out");
  if (freeze_old && init_ckpt.empty()) fail(ErrorKind::invalid_argument, "--freeze-old requires --init-ckpt");
  const Dataset ds = load_dataset(rc.data);
  TrainConfig tc = rc.train_config();
  Model initial;
  if (!init_ckpt.empty()) {
    const Checkpoint start = load_checkpoint(init_ckpt);
    check_fit(start, ds);
    initial = start.model;
    if (freeze_old) {
      if (start.frozen.empty()) fail(ErrorKind::invalid_argument, "--freeze-old: checkpoint records no frozen parameters");
      tc.freeze.insert(start.frozen.begin(), start.frozen.end());
    }
  } else {
    ModelConfig mc = rc.model_config();
    mc.input_dim = ds.feature_dim;
    initial = Model::init(mc);
  }
  const TrainResult result = train(ds, initial, tc, [&](const EpochRecord& r) {
    err << "epoch " << r.epoch << '/' << tc.epochs << " loss=" << metric(r.mean_loss) << '\n';
  });
  Checkpoint ckpt;
  ckpt.model = result.model;
  ckpt.coord_mode = ds.coord_mode;
  save_checkpoint(ckpt, rc.out);
  if (history_path.empty()) history_path = rc.out + ".history.csv";
  std::ofstream hist(history_path);
  if (!hist) fail(ErrorKind::io, "cannot write " + history_path);
  write_history(hist, result.history);
  if (!hist) fail(ErrorKind::io, "write failed for " + history_path);
  const Metrics m = evaluate(result.model, ds);
  out << "accuracy=" << metric(m.accuracy()) << " f1=" << metric(m.f1()) << " steps=" << result.steps << '\n';
  return kOk;
}

std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> counts = parse_widths("sweep", text);
  if (counts.empty()) fail(ErrorKind::invalid_argument, "--sweep needs at least one template count");
  return counts;
}

int cmd_eval(const RunConfig& rc, std::size_t cv, const std::string& sweep, const std::string& train_data,
             const std::string& sweep_out, std::ostream& out) {
  require_path(rc.data, "--data");
  if (cv != 0 && !sweep.empty()) fail(ErrorKind::invalid_argument, "--cv and --sweep are exclusive");
  const Dataset ds = load_dataset(rc.data);
  std::optional<Checkpoint> ckpt;
  if (!rc.ckpt.empty()) {
    ckpt = load_checkpoint(rc.ckpt);
    check_fit(*ckpt, ds);
  }
  ModelConfig base = ckpt ? ckpt->model.config : rc.model_config();
  base.input_dim = ds.feature_dim;

  if (cv != 0) {
    if (cv < 2) fail(ErrorKind::invalid_argument, "--cv needs at least 2 folds");
    const CvResult r = cross_validate(ds, base, rc.train_config(), cv);
    out << "cv_mean_acc=" << metric(r.mean_accuracy) << " cv_std_acc=" << metric(r.std_accuracy)
        << " cv_mean_f1=" << metric(r.mean_f1) << " cv_std_f1=" << metric(r.std_f1) << " folds=" << r.folds.size()
        << '\n';
    return kOk;
  }
  if (!sweep.empty()) {
    require_path(train_data, "--train-data");
    const Dataset train_set = load_dataset(train_data);
    if (train_set.feature_dim != ds.feature_dim)
      fail(ErrorKind::mismatch, "--train-data has " + std::to_string(train_set.feature_dim) + " features, --data has " +
                                    std::to_string(ds.feature_dim));
    const std::vector<std::size_t> counts = parse_counts(sweep);
    const std::vector<SweepRow> rows = sweep_templates(train_set, ds, base, rc.train_config(), counts);
    if (sweep_out.empty()) {
      write_sweep(out, rows);
    } else {
      std::ofstream file(sweep_out);
      if (!file) fail(ErrorKind::io, "cannot write " + sweep_out);
      write_sweep(file, rows);
      if (!file) fail(ErrorKind::io, "write failed for " + sweep_out);
      out << "rows=" << rows.size() << '\n';
    }
    return kOk;
  }
  if (!ckpt) fail(ErrorKind::invalid_argument, "missing required --ckpt");
  const Metrics m = evaluate(ckpt->model, ds);
  out << "accuracy=" << metric(m.accuracy()) << " f1=" << metric(m.f1()) << '\n';
  return kOk;
}

int cmd_explain(const RunConfig& rc, std::optional<std::int64_t> bag_id, bool all, const std::string& format_text,
                const std::string& out_dir, const std::string& credit, std::ostream& out) {
  require_path(rc.ckpt, "--ckpt");
  require_path(rc.data, "--data");
  require_path(out_dir, "--out-dir");
  if (bag_id.has_value() == all) fail(ErrorKind::invalid_argument, "give exactly one of --bag-id or --all");
  const ReportFormat format = parse_report_format(format_text);
  CreditRule rule = CreditRule::own_neighborhood;
  if (credit == "received") {
    rule = CreditRule::received;
  } else if (credit != "own") {
    fail(ErrorKind::invalid_argument, "--credit expects own or received, got '" + credit + "'");
  }
  const Checkpoint ckpt = load_checkpoint(rc.ckpt);
  const Dataset ds = load_dataset(rc.data);
  check_fit(ckpt, ds);

  std::vector<std::size_t> picks;
  if (all) {
    for (std::size_t i = 0; i < ds.size(); ++i) picks.push_back(i);
  } else {
    const auto index = ds.find(*bag_id);
    if (!index) fail(ErrorKind::not_found, "unknown bag id " + std::to_string(*bag_id));
    picks.push_back(*index);
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + out_dir + ": " + ec.message());

  for (std::size_t index : picks) {
    const Bag& bag = ds.bags[index];
    const ImportanceReport report = explain_bag(ckpt.model, bag, rule);
    const std::filesystem::path path =
        std::filesystem::path(out_dir) / ("bag_" + std::to_string(bag.id) + std::string(extension(format)));
    export_report(report, std::nullopt, path, format);
    out << "bag=" << bag.id << " p=" << metric(report.p) << " top=";
    const std::vector<std::size_t> order = report.ranking();
    for (std::size_t r = 0; r < std::min<std::size_t>(3, order.size()); ++r) {
      const std::size_t i = order[r];
      out << (r ? " " : "") << i << "(v=" << metric(report.v[i]);
      if (report.tags[i]) out << ",tag=" << *report.tags[i];
      out << ')';
    }
    out << '\n';
  }
  return kOk;
}

int cmd_gradcheck(const RunConfig& rc, std::size_t m, std::size_t input_dim, double eps, double tol,
                  std::ostream& out, std::ostream& err) {
  if (m == 0 || input_dim == 0) fail(ErrorKind::invalid_argument, "--m and --input-dim must be >= 1");
  if (!(eps > 0.0) || !(tol > 0.0)) fail(ErrorKind::invalid_argument, "--eps and --tol must be > 0");
  ModelConfig mc = rc.model_config();
  mc.input_dim = input_dim;
  const Model model = Model::init(mc);

  Rng rng(derive_seed(rc.seed, "data"));
  std::normal_distribution<double> normal(0.0, 1.0);
  Bag bag;
  bag.label = 1;
  for (std::size_t i = 0; i < m; ++i) {
    Instance inst;
    for (std::size_t k = 0; k < input_dim; ++k) inst.features.push_back(normal(rng));
    inst.coord = Coord{static_cast<int>(i), 0};
    bag.instances.push_back(std::move(inst));
  }

  const std::vector<GroupError> groups = gradient_check(model, bag, eps);
  bool ok = true;
  double worst = 0.0;
  for (const GroupError& g : groups) {
    const bool pass = g.max_error < tol;
    ok = ok && pass;
    worst = std::max(worst, g.max_error);
    out << g.group << " max_rel_err=" << metric(g.max_error) << (pass ? " ok" : " FAIL") << '\n';
  }
  out << "gradcheck=" << (ok ? "pass" : "fail") << " max_rel_err=" << metric(worst) << '\n';
  if (!ok) {
    err << "error: gradient check failed, max relative error " << metric(worst) << " >= " << metric(tol) << '\n';
    return kGradcheckFailed;
  }
  return kOk;
}

int cmd_templates(const RunConfig& rc, std::size_t prune_to, std::size_t add, std::ostream& out) {
  require_path(rc.ckpt, "--ckpt");
  require_path(rc.out, "--out");
  if ((prune_to == 0) == (add == 0)) fail(ErrorKind::invalid_argument, "give exactly one of --prune-to K or --add N");
  const Checkpoint ckpt = load_checkpoint(rc.ckpt);
  Checkpoint result;
  result.coord_mode = ckpt.coord_mode;
  if (prune_to != 0) {
    const std::size_t c = ckpt.model.config.templates;
    if (prune_to > c)
      fail(ErrorKind::invalid_argument,
           "--prune-to " + std::to_string(prune_to) + " exceeds the " + std::to_string(c) + " templates in the checkpoint");
    require_path(rc.data, "--data");
    const Dataset ds = load_dataset(rc.data);
    check_fit(ckpt, ds);
    const PruneResult pruned = prune_templates(ckpt.model, ds, prune_to);
    result.model = pruned.model;
    out << "templates=" << pruned.model.config.templates << " kept=";
    for (std::size_t i = 0; i < pruned.kept.size(); ++i) out << (i ? "," : "") << template_name(pruned.kept[i] + 1);
    out << '\n';
  } else {
    Model model = ckpt.model;
    std::vector<std::string> frozen;
    for (std::size_t i = 0; i < add; ++i) {
      AddResult added = add_template(model, rc.seed);
      if (i == 0) frozen = std::move(added.frozen);
      model = std::move(added.model);
    }
    result.model = std::move(model);
    result.frozen = frozen;
    out << "templates=" << result.model.config.templates << " frozen=" << frozen.size() << '\n';
  }
  save_checkpoint(result, rc.out);
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-attention multiple-instance learning", "mamil"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // generate
  CLI::App* generate = app.add_subcommand("generate", "build a MAMIL-DS dataset from MNIST digits or a tabular file");
  KeyFlags gen_flags;
  gen_flags.attach(generate, {kGenerateKeys});
  std::string images, labels, tabular;
  generate->add_option("--mnist-images", images, "IDX image file");
  generate->add_option("--mnist-labels", labels, "IDX label file");
  generate->add_option("--tabular", tabular, "bag_id,label,features CSV to convert instead");

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  KeyFlags train_flags;
  train_flags.attach(train_cmd, {kModelKeys, kTrainKeys, std::vector<std::string>{"data", "out"}});
  std::string init_ckpt, history;
  bool freeze_old = false;
  train_cmd->add_option("--init-ckpt", init_ckpt, "start from this checkpoint");
  train_cmd->add_flag("--freeze-old", freeze_old, "hold the parameters recorded as frozen in --init-ckpt fixed");
  train_cmd->add_option("--history", history, "per-epoch CSV (default: <out>.history.csv)");

  // eval
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint, cross-validate, or sweep template counts");
  KeyFlags eval_flags;
  eval_flags.attach(eval_cmd, {std::vector<std::string>{"ckpt", "data"}, kModelKeys, kTrainKeys});
  std::size_t cv = 0;
  std::string sweep, train_data, sweep_out;
  eval_cmd->add_option("--cv", cv, "K-fold cross-validation on --data");
  eval_cmd->add_option("--sweep", sweep, "comma list of template counts, trained on --train-data, tested on --data");
  eval_cmd->add_option("--train-data", train_data, "training set for --sweep");
  eval_cmd->add_option("--sweep-out", sweep_out, "CSV path for --sweep (default: standard output)");

  // explain
  CLI::App* explain_cmd = app.add_subcommand("explain", "write per-instance importance reports");
  KeyFlags explain_flags;
  explain_flags.attach(explain_cmd, {std::vector<std::string>{"ckpt", "data"}});
  std::int64_t bag_id = 0;
  bool all = false;
  std::string format = "csv", out_dir, credit = "own";
  CLI::Option* bag_opt = explain_cmd->add_option("--bag-id", bag_id, "bag to explain");
  explain_cmd->add_flag("--all", all, "explain every bag");
  explain_cmd->add_option("--format", format, "csv, pgm or jsonl");
  explain_cmd->add_option("--out-dir", out_dir, "directory for the reports");
  explain_cmd->add_option("--credit", credit, "neighbor credit rule: own or received");

  // gradcheck
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  KeyFlags grad_flags;
  grad_flags.attach(gradcheck, {kModelKeys});
  std::size_t m = 5, input_dim = 6;
  double eps = 1e-4, tol = 1e-3;
  gradcheck->add_option("--m", m, "instances in the random bag");
  gradcheck->add_option("--input-dim", input_dim, "feature dimension of the random bag");
  gradcheck->add_option("--eps", eps, "finite-difference step");
  gradcheck->add_option("--tol", tol, "maximum relative error");

  // templates
  CLI::App* templates = app.add_subcommand("templates", "prune or add templates in a checkpoint");
  KeyFlags tmpl_flags;
  tmpl_flags.attach(templates, {std::vector<std::string>{"ckpt", "data", "out", "seed"}});
  std::size_t prune_to = 0, add = 0;
  templates->add_option("--prune-to", prune_to, "keep the K templates with the largest total attention over --data");
  templates->add_option("--add", add, "append N fresh templates");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadFlags;
  }

  try {
    if (generate->parsed()) {
      return cmd_generate(gen_flags.resolve_with(RunConfig{}), images, labels, tabular, out);
    }
    if (train_cmd->parsed()) {
      return cmd_train(train_flags.resolve_with(RunConfig{}), init_ckpt, freeze_old, history, out, err);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_flags.resolve_with(RunConfig{}), cv, sweep, train_data, sweep_out, out);
    }
    if (explain_cmd->parsed()) {
      std::optional<std::int64_t> id;
      if (bag_opt->count() > 0) id = bag_id;
      return cmd_explain(explain_flags.resolve_with(RunConfig{}), id, all, format, out_dir, credit, out);
    }
    if (gradcheck->parsed()) {
      RunConfig base;
      base.templates = 3;
      base.dim_f = 8;
      base.encoder_layers = {4};
      base.classifier_layers = {3};
      return cmd_gradcheck(grad_flags.resolve_with(base), m, input_dim, eps, tol, out, err);
    }
    if (templates->parsed()) {
      return cmd_templates(tmpl_flags.resolve_with(RunConfig{}), prune_to, add, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  }
  return kBadFlags;
}

}  // namespace mamil::cli
