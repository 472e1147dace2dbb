#include "urep/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <ostream>

#include "urep/checkpoint.hpp"
#include "urep/derivable.hpp"
#include "urep/error.hpp"
#include "urep/pipeline.hpp"

namespace fs = std::filesystem;

namespace urep {

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  RunConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, key));
    else if (key == "epochs") c.epochs = static_cast<int>(parse_int(value, key));
    else if (key == "patience") c.patience = static_cast<int>(parse_int(value, key));
    else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(value, key));
    else if (key == "lr") c.lr = parse_double(value, key);
    else if (key == "plateau") c.plateau = parse_bool(value, key);
    else if (key == "noise_sigma") c.noise_sigma = parse_double(value, key);
    else if (key == "freeze_backbone") c.freeze_backbone = parse_bool(value, key);
    else if (key == "tasks") c.tasks = value;
    else if (key == "weights") c.weights = value;
    else if (key == "hidden") c.hidden = static_cast<int>(parse_int(value, key));
    else if (key == "dropout") c.dropout = parse_double(value, key);
    else if (key == "optimizer") c.optimizer = value;
    else if (key == "kernel") c.kernel = static_cast<int>(parse_int(value, key));
    else if (key == "source_task") c.source_task = value;
    else if (key == "space") c.space = value;
    else if (key == "timing") c.timing = parse_bool(value, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

void RunConfig::override_with(const RunConfig& f) {
  auto take = [](auto& mine, const auto& theirs) {
    if (theirs) mine = theirs;
  };
  take(seed, f.seed);
  take(epochs, f.epochs);
  take(patience, f.patience);
  take(batch_size, f.batch_size);
  take(lr, f.lr);
  take(plateau, f.plateau);
  take(noise_sigma, f.noise_sigma);
  take(freeze_backbone, f.freeze_backbone);
  take(tasks, f.tasks);
  take(weights, f.weights);
  take(hidden, f.hidden);
  take(dropout, f.dropout);
  take(optimizer, f.optimizer);
  take(kernel, f.kernel);
  take(source_task, f.source_task);
  take(space, f.space);
  take(timing, f.timing);
}

namespace {

constexpr const char* kBackboneSpace = "kernel=3,5,7;optimizer=sgd,adam,rmsprop";
constexpr const char* kSupervisedSpace = "kernel=3,5,7;dilation=2,3;dropout=0.1,0.3,0.5;optimizer=sgd,adam,rmsprop";
constexpr const char* kHeadSpace = "dropout=0.1,0.3,0.5;optimizer=sgd,adam,rmsprop";

class ExplainFailure : public Error {
 public:
  using Error::Error;
};

// Flag values as typed by the user; booleans arrive as text so "on"/"off"
// work the same as in config files.
struct RunFlags {
  std::string config_path;
  RunConfig run;
  std::optional<std::string> plateau, freeze, timing;

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::from_key_values(read_key_values(config_path));
    RunConfig f = run;
    if (plateau) f.plateau = parse_bool(*plateau, "--plateau");
    if (freeze) f.freeze_backbone = parse_bool(*freeze, "--freeze");
    if (timing) f.timing = parse_bool(*timing, "--timing");
    c.override_with(f);
    return c;
  }
};

enum RunFlag : unsigned {
  f_budget = 1u << 0,
  f_noise = 1u << 1,
  f_freeze = 1u << 2,
  f_tasks = 1u << 3,
  f_weights = 1u << 4,
  f_head = 1u << 5,
  f_kernel = 1u << 6,
  f_source = 1u << 7,
  f_space = 1u << 8,
};

void add_run_flags(CLI::App* cmd, RunFlags& f, unsigned which) {
  cmd->add_option("--config", f.config_path, "key=value run config; flags override it");
  cmd->add_option("--seed", f.run.seed, "Random seed");
  cmd->add_option("--timing", f.timing, "on|off: write wall-clock seconds in reports");
  if (which & f_budget) {
    cmd->add_option("--epochs", f.run.epochs, "Epoch budget");
    cmd->add_option("--patience", f.run.patience, "Early-stopping patience (0 = full budget)");
    cmd->add_option("--batch-size", f.run.batch_size, "Mini-batch size");
    cmd->add_option("--lr", f.run.lr, "Initial learning rate");
    cmd->add_option("--plateau", f.plateau, "on|off: halve the rate on validation plateaus");
  }
  if (which & f_noise) cmd->add_option("--noise-sigma", f.run.noise_sigma, "Gaussian noise std for denoising");
  if (which & f_freeze) cmd->add_option("--freeze", f.freeze, "on|off: keep backbone weights fixed");
  if (which & f_tasks) cmd->add_option("--tasks", f.run.tasks, "Comma-separated task ids (seg, cls, quality)");
  if (which & f_weights) cmd->add_option("--weights", f.run.weights, "Comma-separated loss weights");
  if (which & f_head) {
    cmd->add_option("--hidden", f.run.hidden, "Hidden width of classification heads");
    cmd->add_option("--dropout", f.run.dropout, "Dropout of classification heads");
    cmd->add_option("--optimizer", f.run.optimizer, "sgd|adam|rmsprop");
  }
  if (which & f_kernel) cmd->add_option("--kernel", f.run.kernel, "Convolution kernel size");
  if (which & f_source) cmd->add_option("--source-task", f.run.source_task, "Labeled source task for supervised mode");
  if (which & f_space) cmd->add_option("--space", f.run.space, "Search space file or inline 'axis=v1,v2;...'");
}

TrainBudget budget_from(const RunConfig& c, TrainBudget defaults) {
  TrainBudget b = defaults;
  if (c.epochs) b.epochs = *c.epochs;
  if (c.patience) b.patience = *c.patience;
  if (c.batch_size) b.batch_size = *c.batch_size;
  if (c.lr) b.lr = *c.lr;
  if (c.plateau) b.plateau = *c.plateau;
  if (b.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (b.patience < 0) throw ConfigError("patience must be non-negative");
  if (b.batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(b.lr > 0)) throw ConfigError("lr must be positive");
  return b;
}

std::string manifest_path(const std::string& data) {
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.tsv").string();
  return data;
}

HyperparameterSpace load_space(const std::string& spec) {
  if (fs::is_regular_file(spec)) return HyperparameterSpace::parse(read_text_file(spec));
  try {
    return HyperparameterSpace::parse(spec);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("bad search space: ") + e.what());
  }
}

std::vector<std::string> task_list(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& t : split(text, ',')) {
    const auto id = trim(t);
    if (id.empty()) continue;
    task_spec(id);
    if (std::find(out.begin(), out.end(), id) != out.end()) throw ConfigError("task '" + id + "' listed twice");
    out.push_back(id);
  }
  if (out.empty()) throw ConfigError("no tasks given");
  return out;
}

HeadConfig head_from(const std::string& task, const ImageSet& train, const ImageSet& val, const RunConfig& c) {
  const auto spec = task_spec(task);
  HeadConfig hc;
  hc.task_id = task;
  hc.kind = spec.kind;
  if (spec.kind == HeadKind::classification) {
    hc.num_classes = std::max(train.class_count(spec.target), val.class_count(spec.target));
  }
  if (c.hidden) hc.hidden = *c.hidden;
  hc.dropout = c.dropout.value_or(0.25);
  if (c.optimizer) hc.optimizer = parse_optimizer(*c.optimizer);
  return hc;
}

void put_head(URepModel<float>& model, TaskHead<float> head) {
  auto& heads = model.heads;
  heads.erase(std::remove_if(heads.begin(), heads.end(), [&](const auto& h) { return h.task_id() == head.task_id(); }),
              heads.end());
  heads.push_back(std::move(head));
}

std::string sibling(const std::string& path, const std::string& suffix) { return path + suffix; }

std::string summary_line(const Manifest& m) {
  std::map<std::string, int> counts;
  for (const auto& r : m.records) {
    ++counts["split_" + std::string(to_string(r.split))];
    if (r.class_label) ++counts["class_" + std::to_string(*r.class_label)];
    if (r.quality) ++counts[std::string(to_string(*r.quality))];
    if (r.mask_path) ++counts["masks"];
  }
  std::string s = "images=" + std::to_string(m.records.size());
  for (const auto& [k, v] : counts) s += ' ' + k + '=' + std::to_string(v);
  return s;
}

TaskHead<float>& classification_head(URepModel<float>& model, const std::string& task, const char* role) {
  auto* head = model.find_head(task);
  if (head == nullptr) throw CompatibilityError(std::string(role) + " checkpoint has no head '" + task + "'");
  if (head->kind() != HeadKind::classification) {
    throw CompatibilityError(std::string(role) + " head '" + task + "' is not a classification head");
  }
  return *head;
}

std::vector<float> image_probabilities(URepModel<float>& model, TaskHead<float>& head, const Tensor<float>& image) {
  const auto probs = predict(model, head, image.reshaped({1, 1, image.dim(0), image.dim(1)}));
  return probs.values();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shared-representation multi-task training on synthetic imaging data", "urep"};
  app.require_subcommand(1, 1);

  // gen-data
  std::string gen_config, gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset (images, masks, manifest)");
  gen->add_option("--config", gen_config, "Generator config (key=value)");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train-backbone
  std::string tb_mode, tb_data, tb_out, tb_report;
  RunFlags tb_flags;
  auto* tb = app.add_subcommand("train-backbone", "Grid-search and train the shared backbone");
  tb->add_option("--mode", tb_mode, "unsupervised|supervised")
      ->required()
      ->check(CLI::IsMember({"unsupervised", "supervised"}));
  tb->add_option("--data", tb_data, "Dataset directory or manifest")->required();
  tb->add_option("--out", tb_out, "Checkpoint path")->required();
  tb->add_option("--report", tb_report, "Grid report path (default <out>.grid.tsv)");
  add_run_flags(tb, tb_flags, f_budget | f_noise | f_source | f_space);

  // train-head
  std::string th_ckpt, th_task, th_data, th_out, th_log, th_report;
  bool th_search = false;
  RunFlags th_flags;
  auto* th = app.add_subcommand("train-head", "Attach and train one task head");
  th->add_option("--checkpoint", th_ckpt, "Backbone checkpoint")->required();
  th->add_option("--task", th_task, "seg|cls|quality")->required();
  th->add_option("--data", th_data, "Dataset directory or manifest")->required();
  th->add_option("--out", th_out, "Output checkpoint")->required();
  th->add_option("--log", th_log, "Per-epoch log path (default <out>.log.tsv)");
  th->add_flag("--search", th_search, "Grid-search head dropout and optimizer");
  th->add_option("--report", th_report, "Head grid report path with --search (default <out>.grid.tsv)");
  add_run_flags(th, th_flags, f_budget | f_freeze | f_head | f_space);

  // train-joint
  std::string tj_ckpt, tj_data, tj_out, tj_log;
  RunFlags tj_flags;
  auto* tj = app.add_subcommand("train-joint", "Train several heads and the backbone on a combined loss");
  tj->add_option("--checkpoint", tj_ckpt, "Backbone checkpoint")->required();
  tj->add_option("--data", tj_data, "Dataset directory or manifest")->required();
  tj->add_option("--out", tj_out, "Output checkpoint")->required();
  tj->add_option("--log", tj_log, "Per-epoch log path (default <out>.log.tsv)");
  add_run_flags(tj, tj_flags, f_budget | f_tasks | f_weights | f_head);

  // eval
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out, ev_tasks;
  std::optional<double> ev_sigma;
  std::optional<std::uint64_t> ev_seed;
  auto* ev = app.add_subcommand("eval", "Metrics report for a checkpoint on one split");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory or manifest")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--tasks", ev_tasks, "Tasks to report (default: all; 'denoise' for PSNR)");
  ev->add_option("--noise-sigma", ev_sigma, "Noise std for the PSNR row (default 0.03)");
  ev->add_option("--seed", ev_seed, "Noise seed for the PSNR row (default: checkpoint seed)");
  ev->add_option("--out", ev_out, "Also write the report here");

  // explain
  std::string ex_ckpt, ex_image, ex_out, ex_task;
  std::optional<int> ex_class;
  auto* ex = app.add_subcommand("explain", "Grad-CAM heatmap and overlay for one image");
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint with a classification head")->required();
  ex->add_option("--image", ex_image, "PGM image")->required();
  ex->add_option("--class", ex_class, "Class to explain (default: predicted class)");
  ex->add_option("--task", ex_task, "Classification head (default: cls, else the first one)");
  ex->add_option("--out", ex_out, "Output directory for heatmap.pgm and overlay.pgm")->required();

  // recommend
  std::string rc_cls, rc_quality, rc_image, rc_rules, rc_cls_task = "cls", rc_quality_task = "quality";
  auto* rc = app.add_subcommand("recommend", "Usability verdict from class and quality heads");
  rc->add_option("--cls-checkpoint", rc_cls, "Checkpoint with the classification head")->required();
  rc->add_option("--quality-checkpoint", rc_quality, "Checkpoint with the quality head")->required();
  rc->add_option("--image", rc_image, "PGM image")->required();
  rc->add_option("--cls-task", rc_cls_task, "Classification head id");
  rc->add_option("--quality-task", rc_quality_task, "Quality head id");
  rc->add_option("--rules", rc_rules, "Rule table file (default: low quality is not usable)");

  // compare
  std::string cp_data, cp_out;
  RunFlags cp_flags;
  auto* cp = app.add_subcommand("compare", "Shared backbone with frozen heads vs individually trained models");
  cp->add_option("--data", cp_data, "Dataset directory or manifest (default: built-in synthetic set)");
  cp->add_option("--out", cp_out, "Also write the report here");
  add_run_flags(cp, cp_flags, f_budget | f_noise | f_tasks | f_head | f_kernel);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (*gen) {
      SyntheticConfig c;
      if (!gen_config.empty()) c = SyntheticConfig::from_key_values(read_key_values(gen_config));
      c.validate();
      const auto manifest = write_dataset(generate(c), gen_out, c.seed);
      write_text_file((fs::path(gen_out) / "generator.cfg").string(), c.to_text());
      out << summary_line(manifest) << '\n';
    } else if (*tb) {
      const auto rc_cfg = tb_flags.resolve();
      const bool supervised = tb_mode == "supervised";
      const auto data = load_dataset(manifest_path(tb_data));
      BackboneSearch search;
      search.space = load_space(rc_cfg.space.value_or(supervised ? kSupervisedSpace : kBackboneSpace));
      search.base = supervised ? BackboneConfig::dilated_cnn() : BackboneConfig::cdae();
      search.budget = budget_from(rc_cfg, TrainBudget{10, 0, 8, 3e-3, true});
      search.noise_sigma = rc_cfg.noise_sigma.value_or(0.03);
      search.seed = rc_cfg.seed.value_or(1);
      search.source_task = rc_cfg.source_task.value_or("cls");
      search.timing = rc_cfg.timing.value_or(true);
      const auto train = make_image_set(data, Split::train);
      const auto val = make_image_set(data, Split::val);
      auto result = supervised ? train_backbone_supervised(train, val, search)
                               : train_backbone_unsupervised(train, val, search);
      const auto report_path = tb_report.empty() ? sibling(tb_out, ".grid.tsv") : tb_report;
      result.model.provenance["grid_report"] = fs::path(report_path).filename().string();
      write_text_file(report_path, result.report);
      save_checkpoint(result.model, tb_out);
      const auto& best = result.grid.best_record();
      out << "best " << best.point.describe() << " val_loss=" << format_double(best.record->best_val_loss()) << '\n';
      out << "checkpoint=" << tb_out << " report=" << report_path << '\n';
    } else if (*th) {
      const auto cfg = th_flags.resolve();
      auto model = load_checkpoint(th_ckpt);
      const auto data = load_dataset(manifest_path(th_data));
      const auto train = make_image_set(data, Split::train);
      const auto val = make_image_set(data, Split::val);
      HeadTraining opts;
      opts.budget = budget_from(cfg, TrainBudget{30, 8, 8, 3e-3, true});
      opts.freeze_backbone = cfg.freeze_backbone.value_or(false);
      opts.seed = cfg.seed.value_or(model.seed);
      const auto base = head_from(th_task, train, val, cfg);
      TrainRecord record;
      if (th_search) {
        auto res = search_head(model, base, load_space(cfg.space.value_or(kHeadSpace)), train, val, opts,
                               cfg.timing.value_or(true));
        const auto report_path = th_report.empty() ? sibling(th_out, ".grid.tsv") : th_report;
        write_text_file(report_path, res.report);
        record = res.record;
        out << "head search best " << res.grid.best_record().point.describe() << " report=" << report_path << '\n';
      } else {
        Rng rng(opts.seed);
        put_head(model, attach_head(model, base, rng));
        record = train_head(model, th_task, train, val, opts);
      }
      record_provenance(model, record, "head." + th_task + ".");
      const auto log_path = th_log.empty() ? sibling(th_out, ".log.tsv") : th_log;
      write_text_file(log_path, format_train_log(record, cfg.timing.value_or(true)));
      save_checkpoint(model, th_out);
      out << "task=" << th_task << " best_val_loss=" << format_double(record.best_val_loss())
          << " epochs=" << record.epochs.size() << " checkpoint=" << th_out << " log=" << log_path << '\n';
    } else if (*tj) {
      const auto cfg = tj_flags.resolve();
      auto model = load_checkpoint(tj_ckpt);
      const auto data = load_dataset(manifest_path(tj_data));
      const auto train = make_image_set(data, Split::train);
      const auto val = make_image_set(data, Split::val);
      const auto tasks = task_list(cfg.tasks.value_or("seg,cls"));
      std::vector<double> weights(tasks.size(), 1.0);
      if (cfg.weights) weights = parse_double_list(*cfg.weights, "weights");
      if (weights.size() != tasks.size()) throw ConfigError("need one weight per task");
      const std::uint64_t seed = cfg.seed.value_or(model.seed);
      Rng rng(seed);
      for (const auto& t : tasks) {
        if (model.find_head(t) == nullptr) put_head(model, attach_head(model, head_from(t, train, val, cfg), rng));
      }
      const auto optimizer = cfg.optimizer ? parse_optimizer(*cfg.optimizer) : model.optimizer;
      const auto record = train_joint(model, tasks, weights, train, val,
                                      budget_from(cfg, TrainBudget{15, 5, 8, 1e-3, true}), optimizer, seed);
      record_provenance(model, record, "joint.");
      const auto log_path = tj_log.empty() ? sibling(tj_out, ".log.tsv") : tj_log;
      write_text_file(log_path, format_train_log(record, cfg.timing.value_or(true)));
      save_checkpoint(model, tj_out);
      out << "tasks=" << join(tasks, ",") << " best_val_loss=" << format_double(record.best_val_loss())
          << " checkpoint=" << tj_out << " log=" << log_path << '\n';
    } else if (*ev) {
      auto model = load_checkpoint(ev_ckpt);
      const auto data = load_dataset(manifest_path(ev_data));
      const auto set = make_image_set(data, parse_split(ev_split));
      EvalOptions eo;
      if (!ev_tasks.empty()) {
        for (const auto& t : split(ev_tasks, ',')) eo.tasks.push_back(trim(t));
      }
      eo.noise_sigma = ev_sigma.value_or(0.03);
      eo.noise_seed = ev_seed.value_or(model.seed);
      const auto report = format_metrics_report(evaluate(model, set, eo));
      if (!ev_out.empty()) write_text_file(ev_out, report);
      out << report;
    } else if (*ex) {
      auto model = load_checkpoint(ex_ckpt);
      const auto image = read_pgm(ex_image);
      try {
        TaskHead<float>* head = nullptr;
        if (!ex_task.empty()) {
          head = model.find_head(ex_task);
          if (head == nullptr) throw ExplainFailure("checkpoint has no head '" + ex_task + "'");
        } else {
          head = model.find_head("cls");
          for (auto& h : model.heads) {
            if (head == nullptr && h.kind() == HeadKind::classification) head = &h;
          }
          if (head == nullptr) throw ExplainFailure("checkpoint has no classification head");
        }
        if (head->kind() != HeadKind::classification) {
          throw ExplainFailure("head '" + head->task_id() + "' is not a classification head");
        }
        const int k = head->config.num_classes;
        int cls = 0;
        if (ex_class) {
          cls = *ex_class;
          if (cls < 0 || cls >= k) {
            throw ExplainFailure("class " + std::to_string(cls) + " out of range, head has K=" + std::to_string(k));
          }
        } else {
          cls = top_prediction(image_probabilities(model, *head, image)).label;
        }
        const auto heat = grad_cam(model, *head, image, cls);
        fs::create_directories(ex_out);
        const auto heat_path = (fs::path(ex_out) / "heatmap.pgm").string();
        const auto overlay_path = (fs::path(ex_out) / "overlay.pgm").string();
        write_pgm(heat.values, heat_path);
        write_pgm(overlay(image, heat.values), overlay_path);
        std::vector<std::string> ps;
        for (float p : heat.probabilities) ps.push_back(format_fixed(p, 6));
        out << "task=" << head->task_id() << " class=" << cls << " raw_max=" << format_double(heat.raw_max)
            << " probabilities=" << join(ps, ",") << '\n';
        out << "heatmap=" << heat_path << " overlay=" << overlay_path << '\n';
      } catch (const ContractError& e) {
        throw ExplainFailure(e.what());
      } catch (const ShapeError& e) {
        throw ExplainFailure(e.what());
      }
    } else if (*rc) {
      auto cls_model = load_checkpoint(rc_cls);
      auto quality_model = load_checkpoint(rc_quality);
      const auto image = read_pgm(rc_image);
      auto& cls_head = classification_head(cls_model, rc_cls_task, "class");
      auto& q_head = classification_head(quality_model, rc_quality_task, "quality");
      if (q_head.config.num_classes != 2) throw CompatibilityError("quality head must have 2 classes (good, low)");
      const auto table = rc_rules.empty() ? RuleTable::defaults() : parse_rule_table(read_text_file(rc_rules));
      validate_rule_table(table, cls_head.config.num_classes);
      const auto r = recommend(top_prediction(image_probabilities(cls_model, cls_head, image)),
                               top_prediction(image_probabilities(quality_model, q_head, image)), table);
      out << format_recommendation(r) << '\n';
    } else if (*cp) {
      const auto cfg = cp_flags.resolve();
      Dataset data;
      if (cp_data.empty()) {
        SyntheticConfig sc;
        sc.image_size = 32;
        sc.count = 160;
        sc.seed = cfg.seed.value_or(1);
        data = make_dataset(generate(sc), sc.seed);
      } else {
        data = load_dataset(manifest_path(cp_data));
      }
      CompareOptions o;
      if (cfg.tasks) o.tasks = task_list(*cfg.tasks);
      o.budget = budget_from(cfg, o.budget);
      if (cfg.kernel) o.kernel = *cfg.kernel;
      if (cfg.hidden) o.hidden = *cfg.hidden;
      if (cfg.dropout) o.dropout = *cfg.dropout;
      if (cfg.optimizer) o.optimizer = parse_optimizer(*cfg.optimizer);
      if (cfg.noise_sigma) o.noise_sigma = *cfg.noise_sigma;
      o.seed = cfg.seed.value_or(1);
      o.timing = cfg.timing.value_or(true);
      const auto result = compare_pipelines(make_image_set(data, Split::train), make_image_set(data, Split::val),
                                            make_image_set(data, Split::test), o);
      if (!cp_out.empty()) write_text_file(cp_out, result.report);
      out << result.report;
    }
  } catch (const ExplainFailure& e) {
    err << "error: " << e.what() << '\n';
    return exit_explain;
  } catch (const MissingLabelsError& e) {
    err << "error: " << e.what() << '\n';
    return exit_missing_labels;
  } catch (const CompatibilityError& e) {
    err << "error: " << e.what() << '\n';
    return exit_compatibility;
  } catch (const SearchError& e) {
    err << "error: " << e.what() << '\n';
    return exit_search;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return exit_io;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return exit_compatibility;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return exit_compatibility;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_failure;
  }
  return exit_ok;
}

}  // namespace urep
