#include "urep/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include "urep/error.hpp"
#include "urep/text.hpp"

namespace urep {

namespace {

std::string num(double v) { return format_fixed(v, 6); }

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : "-"; }

TaskEvaluation evaluate_head(URepModel<float>& model, TaskHead<float>& head, const ImageSet& set) {
  const auto spec = task_spec(head.task_id());
  const auto idx = set.labeled(spec.target);
  if (idx.empty()) throw MissingLabelsError("no ground truth for task '" + head.task_id() + "' in this split");
  TaskEvaluation e;
  e.task = head.task_id();
  e.samples = idx.size();
  const auto probs = predict(model, head, gather_rows(set.images, idx));
  if (head.kind() == HeadKind::segmentation) {
    const auto truth = set.gather_masks(idx);
    e.segmentation = segmentation_metrics(std::span<const float>(probs.data()), std::span<const float>(truth.data()));
    return e;
  }
  ScoredLabelSet scored;
  scored.num_classes = head.config.num_classes;
  scored.labels = set.gather_labels(spec.target, idx);
  for (const int label : scored.labels) {
    if (label >= scored.num_classes) {
      throw CompatibilityError("label " + std::to_string(label) + " exceeds the head's " +
                               std::to_string(scored.num_classes) + " classes");
    }
  }
  scored.scores.assign(probs.data().begin(), probs.data().end());
  e.classification = classification_metrics(scored);
  return e;
}

TaskEvaluation evaluate_denoising(URepModel<float>& model, const ImageSet& set, const EvalOptions& options) {
  if (model.construction_mode != ConstructionMode::unsupervised_denoising || !model.backbone.config().has_decoder) {
    throw CompatibilityError("PSNR applies only to denoising checkpoints");
  }
  TaskEvaluation e;
  e.task = "denoise";
  e.samples = set.size();
  const auto noisy = noisy_images(set.images, options.noise_sigma, options.noise_seed);
  const auto recon = reconstruct(model, noisy);
  e.psnr_denoised = psnr(std::span<const float>(set.images.data()), std::span<const float>(recon.data()));
  e.psnr_noisy = psnr(std::span<const float>(set.images.data()), std::span<const float>(noisy.data()));
  return e;
}

}  // namespace

std::vector<TaskEvaluation> evaluate(URepModel<float>& model, const ImageSet& set, const EvalOptions& options) {
  if (set.size() == 0) throw DataError("evaluation split is empty");
  std::vector<std::string> tasks = options.tasks;
  if (tasks.empty()) {
    if (model.construction_mode == ConstructionMode::unsupervised_denoising && model.backbone.config().has_decoder) {
      tasks.push_back("denoise");
    }
    for (const auto& h : model.heads) tasks.push_back(h.task_id());
  }
  std::vector<TaskEvaluation> out;
  for (const auto& t : tasks) {
    if (t == "denoise") {
      out.push_back(evaluate_denoising(model, set, options));
      continue;
    }
    auto* head = model.find_head(t);
    if (head == nullptr) throw CompatibilityError("checkpoint has no head '" + t + "'");
    out.push_back(evaluate_head(model, *head, set));
  }
  return out;
}

std::string format_metrics_report(const std::vector<TaskEvaluation>& rows) {
  std::string s = "task\tn\taccuracy\tsensitivity\tprecision\tf_score\tauc\tiou\tpixel_accuracy\tpsnr\tpsnr_noisy\n";
  for (const auto& r : rows) {
    std::vector<std::string> f{r.task, std::to_string(r.samples)};
    if (r.classification) {
      const auto& c = *r.classification;
      for (double v : {c.accuracy, c.sensitivity, c.precision, c.f_score, c.auc}) f.push_back(num(v));
    } else {
      f.insert(f.end(), 5, "-");
    }
    if (r.segmentation) {
      f.push_back(num(r.segmentation->iou));
      f.push_back(num(r.segmentation->pixel_accuracy));
    } else {
      f.insert(f.end(), 2, "-");
    }
    f.push_back(opt_num(r.psnr_denoised));
    f.push_back(opt_num(r.psnr_noisy));
    s += join(f, "\t") + '\n';
  }
  return s;
}

std::string format_train_log(const TrainRecord& record, bool timing) {
  std::string s = "epoch\ttrain_loss\tval_loss\tlr\tseconds\tbest\n";
  for (std::size_t i = 0; i < record.epochs.size(); ++i) {
    const auto& e = record.epochs[i];
    s += std::to_string(i + 1) + '\t' + format_double(e.train_loss) + '\t' + format_double(e.val_loss) + '\t' +
         format_double(e.lr) + '\t' + (timing ? format_fixed(e.seconds, 3) : std::string("-")) + '\t' +
         (i == record.best_epoch ? "*" : "") + '\n';
  }
  return s;
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

BackboneSearch denoiser_search(const CompareOptions& o) {
  BackboneSearch s;
  s.space.add_axis("kernel", {AxisValue{std::int64_t{o.kernel}}});
  s.space.add_axis("optimizer", {AxisValue{std::string(to_string(o.optimizer))}});
  s.base = BackboneConfig::cdae(o.kernel);
  s.budget = o.budget;
  s.noise_sigma = o.noise_sigma;
  s.seed = o.seed;
  s.timing = o.timing;
  return s;
}

HeadConfig compare_head(const std::string& task, const ImageSet& train, const CompareOptions& o) {
  const auto spec = task_spec(task);
  HeadConfig hc;
  hc.task_id = task;
  hc.kind = spec.kind;
  hc.num_classes = spec.kind == HeadKind::classification ? train.class_count(spec.target) : 2;
  hc.hidden = o.hidden;
  hc.dropout = o.dropout;
  hc.optimizer = o.optimizer;
  return hc;
}

CompareRow task_row(const std::string& approach, URepModel<float>& model, const std::string& task,
                    const TrainRecord& record, const ImageSet& test, double seconds) {
  auto* head = model.find_head(task);
  const auto e = evaluate_head(model, *head, test);
  CompareRow r{approach, task, record.best_val_loss(), "", 0, seconds};
  if (e.segmentation) {
    r.metric = "iou";
    r.value = e.segmentation->iou;
  } else {
    r.metric = "accuracy";
    r.value = e.classification->accuracy;
  }
  return r;
}

CompareRow denoise_row(const std::string& approach, BackboneResult& result, const ImageSet& test,
                       const CompareOptions& o, double seconds) {
  EvalOptions eo;
  eo.noise_sigma = o.noise_sigma;
  eo.noise_seed = o.seed;
  const auto e = evaluate_denoising(result.model, test, eo);
  return {approach, "denoise", result.grid.best_record().record->best_val_loss(), "psnr", *e.psnr_denoised, seconds};
}

}  // namespace

CompareResult compare_pipelines(const ImageSet& train, const ImageSet& val, const ImageSet& test,
                                const CompareOptions& options) {
  if (options.tasks.empty()) throw ConfigError("compare needs at least one task");
  for (const auto& t : options.tasks) {
    if (std::count(options.tasks.begin(), options.tasks.end(), t) > 1) throw ConfigError("task '" + t + "' listed twice");
    task_spec(t);
  }
  CompareResult out;
  const auto search = denoiser_search(options);

  // shared backbone, trained once, heads on frozen features
  {
    auto t0 = Clock::now();
    auto shared = train_backbone_unsupervised(train, val, search);
    const double bb_seconds = since(t0);
    out.shared_seconds += bb_seconds;
    out.rows.push_back(denoise_row("shared", shared, test, options, bb_seconds));
    for (const auto& task : options.tasks) {
      t0 = Clock::now();
      Rng rng(options.seed);
      shared.model.heads.push_back(attach_head(shared.model, compare_head(task, train, options), rng));
      HeadTraining ht{options.budget, true, options.seed};
      const auto record = train_head(shared.model, task, train, val, ht);
      const double s = since(t0);
      out.shared_seconds += s;
      out.rows.push_back(task_row("shared", shared.model, task, record, test, s));
    }
  }

  // traditional: a separate denoiser and one full model per task
  {
    auto t0 = Clock::now();
    auto denoiser = train_backbone_unsupervised(train, val, search);
    const double bb_seconds = since(t0);
    out.traditional_seconds += bb_seconds;
    out.rows.push_back(denoise_row("traditional", denoiser, test, options, bb_seconds));
    for (const auto& task : options.tasks) {
      t0 = Clock::now();
      Rng rng(options.seed);
      URepModel<float> model;
      model.backbone = Backbone<float>(search.base, rng);
      model.construction_mode = ConstructionMode::unsupervised_denoising;
      model.optimizer = options.optimizer;
      model.seed = options.seed;
      model.input_size = train.image_size();
      model.provenance["init"] = "random";
      model.heads.push_back(attach_head(model, compare_head(task, train, options), rng));
      HeadTraining ht{options.budget, false, options.seed};
      const auto record = train_head(model, task, train, val, ht);
      const double s = since(t0);
      out.traditional_seconds += s;
      out.rows.push_back(task_row("traditional", model, task, record, test, s));
    }
  }
  out.report = format_compare_report(out, options.timing);
  return out;
}

std::string format_compare_report(const CompareResult& result, bool timing) {
  auto secs = [&](double v) { return timing ? format_fixed(v, 3) : std::string("-"); };
  std::string s = "approach\ttask\tval_loss\tmetric\tvalue\tseconds\n";
  for (const std::string approach : {"shared", "traditional"}) {
    s += approach == "shared" ? "# shared: one denoising backbone, frozen task heads\n"
                              : "# traditional: separate denoiser, one randomly initialized model per task\n";
    for (const auto& r : result.rows) {
      if (r.approach != approach) continue;
      s += r.approach + '\t' + r.task + '\t' + num(r.val_loss) + '\t' + r.metric + '\t' + num(r.value) + '\t' +
           secs(r.seconds) + '\n';
    }
  }
  s += "# totals\n";
  s += "total\tshared\t-\t-\t-\t" + secs(result.shared_seconds) + '\n';
  s += "total\ttraditional\t-\t-\t-\t" + secs(result.traditional_seconds) + '\n';
  return s;
}

}  // namespace urep
