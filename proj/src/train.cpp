#include "urep/train.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "urep/error.hpp"
#include "urep/losses.hpp"
#include "urep/text.hpp"

namespace urep {

TaskSpec task_spec(std::string_view task_id) {
  if (task_id == "seg") return {"seg", HeadKind::segmentation, Target::mask};
  if (task_id == "cls") return {"cls", HeadKind::classification, Target::class_label};
  if (task_id == "quality") return {"quality", HeadKind::classification, Target::quality};
  throw ConfigError("unknown task '" + std::string(task_id) + "' (seg, cls, quality)");
}

Tensor<float> gather_rows(const Tensor<float>& t, std::span<const std::size_t> idx) {
  if (idx.empty()) throw ContractError("gather of zero rows");
  Shape s = t.shape();
  const std::size_t row = t.size() / static_cast<std::size_t>(s[0]);
  s[0] = static_cast<std::int64_t>(idx.size());
  Tensor<float> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= static_cast<std::size_t>(t.dim(0))) throw ContractError("row index out of range");
    std::memcpy(out.data().data() + i * row, t.data().data() + idx[i] * row, row * sizeof(float));
  }
  return out;
}

Tensor<float> ImageSet::gather_images(std::span<const std::size_t> idx) const { return gather_rows(images, idx); }

Tensor<float> ImageSet::gather_masks(std::span<const std::size_t> idx) const {
  if (!masks) throw MissingLabelsError("dataset has no masks");
  return gather_rows(*masks, idx);
}

std::vector<int> ImageSet::gather_labels(Target t, std::span<const std::size_t> idx) const {
  const auto& src = t == Target::quality ? quality_labels : class_labels;
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    if (src.at(i) < 0) throw MissingLabelsError("sample " + std::to_string(i) + " has no label for the task");
    out.push_back(src[i]);
  }
  return out;
}

std::vector<std::size_t> ImageSet::labeled(Target t) const {
  std::vector<std::size_t> out;
  if (t == Target::mask) {
    if (masks) {
      for (std::size_t i = 0; i < size(); ++i) out.push_back(i);
    }
    return out;
  }
  const auto& src = t == Target::quality ? quality_labels : class_labels;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] >= 0) out.push_back(i);
  }
  return out;
}

int ImageSet::class_count(Target t) const {
  if (t == Target::quality) return 2;
  int k = 0;
  for (int c : class_labels) k = std::max(k, c + 1);
  return std::max(k, 2);
}

ImageSet make_image_set(const std::vector<Sample>& samples) {
  ImageSet s;
  if (samples.empty()) return s;
  const auto h = samples.front().image.dim(0), w = samples.front().image.dim(1);
  const auto n = static_cast<std::int64_t>(samples.size());
  s.images = Tensor<float>({n, 1, h, w});
  const bool all_masks = std::all_of(samples.begin(), samples.end(), [](const Sample& x) { return x.mask.has_value(); });
  if (all_masks) s.masks = Tensor<float>({n, 1, h, w});
  const std::size_t px = static_cast<std::size_t>(h * w);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& smp = samples[i];
    if (smp.image.shape() != samples.front().image.shape()) throw DataError("images differ in size");
    std::copy(smp.image.data().begin(), smp.image.data().end(), s.images.data().begin() + static_cast<long>(i * px));
    if (all_masks) {
      std::copy(smp.mask->data().begin(), smp.mask->data().end(), s.masks->data().begin() + static_cast<long>(i * px));
    }
    s.class_labels.push_back(smp.class_label.value_or(-1));
    s.quality_labels.push_back(smp.quality ? (*smp.quality == Quality::low ? 1 : 0) : -1);
  }
  return s;
}

ImageSet make_image_set(const Dataset& d, Split split) {
  std::vector<Sample> picked;
  for (auto i : d.indices(split)) picked.push_back(d.samples[i]);
  if (picked.empty()) throw DataError("split '" + std::string(to_string(split)) + "' is empty");
  return make_image_set(picked);
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> indices, int batch_size, Rng& rng) {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (indices.size() < 2) throw DataError("training needs at least 2 samples");
  shuffle(indices, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < indices.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(indices.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(indices.begin() + static_cast<long>(i), indices.begin() + static_cast<long>(end));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<Tensor<float>> snapshot(const std::vector<Tensor<float>*>& state) {
  std::vector<Tensor<float>> out;
  out.reserve(state.size());
  for (auto* t : state) out.push_back(t->detached());
  return out;
}

void restore(const std::vector<Tensor<float>*>& state, const std::vector<Tensor<float>>& saved) {
  for (std::size_t i = 0; i < state.size(); ++i) {
    std::copy(saved[i].data().begin(), saved[i].data().end(), state[i]->data().begin());
  }
}

constexpr int kEvalBatch = 32;

// Batched evaluation of a per-batch mean loss; returns the sample-weighted mean.
double batched_mean(std::size_t n, const std::function<double(std::span<const std::size_t>)>& fn) {
  if (n == 0) throw DataError("validation set is empty");
  double total = 0;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; i += kEvalBatch) {
    idx.clear();
    for (std::size_t j = i; j < std::min(n, i + kEvalBatch); ++j) idx.push_back(j);
    total += fn(idx) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(n);
}

Var<float> output_loss(HeadKind kind, Var<float> out, const ImageSet& set, Target target,
                       std::span<const std::size_t> idx) {
  if (kind == HeadKind::segmentation) return segmentation_loss(out, set.gather_masks(idx));
  return cce_loss(out, set.gather_labels(target, idx));
}

std::vector<std::size_t> pick(const std::vector<std::size_t>& base, std::span<const std::size_t> positions) {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (auto p : positions) out.push_back(base[p]);
  return out;
}

// Features for all listed samples in infer mode, without a graph that keeps
// gradients.
Tensor<float> extract_features(Backbone<float>& bb, const TaskHead<float>& head, const ImageSet& set,
                               const std::vector<std::size_t>& idx) {
  Rng unused(0);
  std::vector<Tensor<float>> parts;
  for (std::size_t i = 0; i < idx.size(); i += kEvalBatch) {
    std::vector<std::size_t> chunk(idx.begin() + static_cast<long>(i),
                                   idx.begin() + static_cast<long>(std::min(idx.size(), i + kEvalBatch)));
    Graph<float> g;
    g.set_grad_enabled(false);
    auto f = head_input(bb, head, g, g.constant(set.gather_images(chunk)), Mode::infer, unused);
    parts.push_back(f.value());
  }
  Shape s = parts.front().shape();
  s[0] = static_cast<std::int64_t>(idx.size());
  Tensor<float> out(s);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<long>(off));
    off += p.size();
  }
  return out;
}

std::vector<Tensor<float>*> head_state(TaskHead<float>& head) {
  std::vector<Tensor<float>*> out;
  for (auto& nt : head.layers.state()) out.push_back(nt.tensor);
  return out;
}

std::vector<Tensor<float>*> backbone_state(Backbone<float>& bb) {
  std::vector<Tensor<float>*> out;
  for (auto& nt : bb.state()) out.push_back(nt.tensor);
  return out;
}

std::uint64_t point_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t sm = seed + 0x51ed270b27a5e1ULL * (index + 1);
  return splitmix64(sm);
}

}  // namespace

TrainRecord fit(FitProblem& problem, const TrainBudget& budget, OptimizerKind optimizer, Rng& rng) {
  if (budget.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (budget.patience < 0) throw ConfigError("patience must be >= 0");
  if (!(budget.lr > 0)) throw ConfigError("learning rate must be positive");
  OptimizerConfig oc;
  oc.kind = optimizer;
  oc.lr = budget.lr;
  Optimizer<float> opt(oc);
  PlateauScheduler sched(budget.lr);
  TrainRecord rec;
  double best = std::numeric_limits<double>::infinity();
  auto saved = snapshot(problem.state);
  std::vector<double> history;
  for (int epoch = 0; epoch < budget.epochs; ++epoch) {
    const auto t0 = Clock::now();
    auto batches = problem.plan_epoch(rng);
    double train_sum = 0;
    for (auto& batch : batches) {
      Optimizer<float>::zero_grad(problem.params);
      Graph<float> g;
      auto loss = batch(g);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
      g.backward(loss);
      // parameters a batch did not touch (e.g. another task's head) keep no grad
      opt.step(problem.params, true);
      train_sum += lv;
    }
    const double val = problem.validate();
    if (!std::isfinite(val)) throw NumericError("validation loss became non-finite at epoch " + std::to_string(epoch));
    EpochRecord er;
    er.train_loss = batches.empty() ? 0.0 : train_sum / static_cast<double>(batches.size());
    er.val_loss = val;
    er.lr = opt.lr();
    er.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    rec.epochs.push_back(er);
    history.push_back(val);
    if (val < best) {
      best = val;
      rec.best_epoch = rec.epochs.size() - 1;
      saved = snapshot(problem.state);
    }
    if (budget.plateau) opt.set_lr(sched.observe(val));
    if (budget.patience > 0 && early_stop(history, budget.patience)) {
      rec.status = TrainStatus::early_stopped;
      break;
    }
  }
  restore(problem.state, saved);
  Optimizer<float>::zero_grad(problem.params);
  return rec;
}

Tensor<float> noisy_images(const Tensor<float>& clean, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  return add_gaussian_noise(clean, sigma, rng);
}

double denoise_loss(URepModel<float>& model, const ImageSet& set, double sigma, std::uint64_t seed) {
  const auto noisy = noisy_images(set.images, sigma, seed);
  Rng unused(0);
  return batched_mean(set.size(), [&](std::span<const std::size_t> idx) {
    Graph<float> g;
    g.set_grad_enabled(false);
    auto out = model.backbone.reconstruct(g, g.constant(gather_rows(noisy, idx)), Mode::infer, unused);
    return static_cast<double>(mse_loss(out, g.constant(set.gather_images(idx))).value().item());
  });
}

void record_provenance(URepModel<float>& model, const TrainRecord& record, const std::string& prefix) {
  std::vector<std::string> vals;
  for (const auto& e : record.epochs) vals.push_back(format_double(e.val_loss));
  model.provenance[prefix + "best_val_loss"] = format_double(record.best_val_loss());
  model.provenance[prefix + "best_epoch"] = std::to_string(record.best_epoch);
  model.provenance[prefix + "epochs"] = std::to_string(record.epochs.size());
  model.provenance[prefix + "status"] = std::string(to_string(record.status));
  model.provenance[prefix + "val_losses"] = join(vals, ",");
}

std::uint64_t validation_noise_seed(std::uint64_t search_seed) noexcept { return search_seed ^ 0x7a1d5eedULL; }

namespace {

BackboneConfig config_for(const BackboneConfig& base, const GridPoint& p) {
  BackboneConfig c = base;
  if (p.has("kernel")) c.kernel = static_cast<int>(p.get_int("kernel"));
  if (p.has("dilation")) c.dilation = static_cast<int>(p.get_int("dilation"));
  c.validate();
  return c;
}

OptimizerKind optimizer_for(const GridPoint& p, OptimizerKind fallback) {
  return p.has("optimizer") ? parse_optimizer(p.get_name("optimizer")) : fallback;
}

void check_axes(const HyperparameterSpace& space, std::initializer_list<std::string_view> allowed) {
  for (const auto& a : space.axes()) {
    if (std::find(allowed.begin(), allowed.end(), a.name) == allowed.end()) {
      throw ConfigError("unsupported search axis '" + a.name + "'");
    }
  }
}

void finish_backbone(BackboneResult& res, const HyperparameterSpace& space, const BackboneSearch& search) {
  const auto& best = res.grid.best_record();
  record_provenance(res.model, *best.record, "");
  res.model.provenance["grid_size"] = std::to_string(space.size());
  res.model.provenance["grid_best"] = best.point.describe();
  res.model.provenance["space"] = space.to_text();
  res.report = format_grid_report(space, res.grid, search.timing);
}

}  // namespace

BackboneResult train_backbone_unsupervised(const ImageSet& train, const ImageSet& val, const BackboneSearch& search) {
  if (train.size() == 0 || val.size() == 0) throw DataError("denoising needs nonempty train and val splits");
  if (search.base.arch != BackboneArch::cdae) throw ConfigError("unsupervised construction trains a cdae");
  check_axes(search.space, {"kernel", "optimizer"});
  const auto val_noisy = noisy_images(val.images, search.noise_sigma, validation_noise_seed(search.seed));
  std::vector<std::optional<URepModel<float>>> models(search.space.size());

  auto trainer = [&](const GridPoint& p) {
    Rng rng(point_seed(search.seed, p.index));
    URepModel<float> m;
    m.backbone = build_cdae<float>(config_for(search.base, p), rng);
    m.backbone.check_input(train.images.shape());
    m.construction_mode = ConstructionMode::unsupervised_denoising;
    m.optimizer = optimizer_for(p, OptimizerKind::adam);
    m.seed = search.seed;
    m.input_size = train.image_size();
    FitProblem prob;
    prob.params = m.backbone.parameter_ptrs();
    prob.state = backbone_state(m.backbone);
    std::vector<std::size_t> all(train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    prob.plan_epoch = [&](Rng& r) {
      std::vector<BatchLoss> out;
      for (auto& b : make_batches(all, search.budget.batch_size, r)) {
        auto clean = train.gather_images(b);
        auto noisy = add_gaussian_noise(clean, search.noise_sigma, r);
        out.push_back([&m, &r, clean = std::move(clean), noisy = std::move(noisy)](Graph<float>& g) {
          auto y = m.backbone.reconstruct(g, g.constant(noisy), Mode::train, r);
          return mse_loss(y, g.constant(clean));
        });
      }
      return out;
    };
    prob.validate = [&]() {
      Rng unused(0);
      return batched_mean(val.size(), [&](std::span<const std::size_t> idx) {
        Graph<float> g;
        g.set_grad_enabled(false);
        auto out = m.backbone.reconstruct(g, g.constant(gather_rows(val_noisy, idx)), Mode::infer, unused);
        return static_cast<double>(mse_loss(out, g.constant(val.gather_images(idx))).value().item());
      });
    };
    auto rec = fit(prob, search.budget, m.optimizer, rng);
    models[p.index] = std::move(m);
    return rec;
  };

  BackboneResult res;
  res.grid = grid_search(search.space, trainer);
  res.model = std::move(*models[res.grid.best]);
  res.model.provenance["noise_sigma"] = format_double(search.noise_sigma);
  finish_backbone(res, search.space, search);
  return res;
}

BackboneResult train_backbone_supervised(const ImageSet& train, const ImageSet& val, const BackboneSearch& search) {
  if (search.base.arch != BackboneArch::dilated_cnn) throw ConfigError("supervised construction trains a dilated_cnn");
  check_axes(search.space, {"kernel", "dilation", "dropout", "optimizer"});
  const TaskSpec spec = task_spec(search.source_task);
  if (spec.kind != HeadKind::classification) throw ConfigError("the supervised source task must be a classification");
  const auto train_idx = train.labeled(spec.target);
  const auto val_idx = val.labeled(spec.target);
  if (train_idx.size() != train.size()) throw MissingLabelsError("source-task labels are missing for some training images");
  if (val_idx.empty()) throw MissingLabelsError("no labeled validation images for the source task");
  const int k = std::max(train.class_count(spec.target), val.class_count(spec.target));
  std::vector<std::optional<URepModel<float>>> models(search.space.size());

  auto trainer = [&](const GridPoint& p) {
    Rng rng(point_seed(search.seed, p.index));
    URepModel<float> m;
    m.backbone = build_dilated_cnn<float>(config_for(search.base, p), rng);
    m.backbone.check_input(train.images.shape());
    m.construction_mode = ConstructionMode::supervised_source;
    m.optimizer = optimizer_for(p, OptimizerKind::adam);
    m.seed = search.seed;
    m.input_size = train.image_size();
    HeadConfig hc;
    hc.task_id = spec.task_id;
    hc.kind = HeadKind::classification;
    hc.num_classes = k;
    hc.dropout = p.has("dropout") ? p.get_real("dropout") : hc.dropout;
    hc.optimizer = m.optimizer;
    m.heads.push_back(make_head(m.backbone, hc, rng));
    m.heads.back().inherited.clear();
    auto& head = m.heads.back();
    FitProblem prob;
    prob.params = m.backbone.parameter_ptrs();
    for (auto* t : head.layers.parameter_ptrs()) prob.params.push_back(t);
    prob.state = backbone_state(m.backbone);
    for (auto* t : head_state(head)) prob.state.push_back(t);
    prob.plan_epoch = [&](Rng& r) {
      std::vector<BatchLoss> out;
      for (auto& b : make_batches(train_idx, search.budget.batch_size, r)) {
        out.push_back([&, b](Graph<float>& g) {
          auto y = head_forward(m, head, g, g.constant(train.gather_images(b)), Mode::train, r);
          return cce_loss(y, train.gather_labels(spec.target, b));
        });
      }
      return out;
    };
    prob.validate = [&]() {
      Rng unused(0);
      return batched_mean(val_idx.size(), [&](std::span<const std::size_t> pos) {
        const auto idx = pick(val_idx, pos);
        Graph<float> g;
        g.set_grad_enabled(false);
        auto y = head_forward(m, head, g, g.constant(val.gather_images(idx)), Mode::infer, unused);
        return static_cast<double>(cce_loss(y, val.gather_labels(spec.target, idx)).value().item());
      });
    };
    auto rec = fit(prob, search.budget, m.optimizer, rng);
    models[p.index] = std::move(m);
    return rec;
  };

  BackboneResult res;
  res.grid = grid_search(search.space, trainer);
  res.model = std::move(*models[res.grid.best]);
  res.model.provenance["source_task"] = spec.task_id;
  finish_backbone(res, search.space, search);
  return res;
}

Var<float> task_loss(URepModel<float>& model, TaskHead<float>& head, Graph<float>& g, const ImageSet& set,
                     std::span<const std::size_t> idx, Mode mode, Rng& rng) {
  const auto spec = task_spec(head.task_id());
  auto out = head_forward(model, head, g, g.constant(set.gather_images(idx)), mode, rng);
  return output_loss(head.kind(), out, set, spec.target, idx);
}

TrainRecord train_head(URepModel<float>& model, const std::string& task_id, const ImageSet& train,
                       const ImageSet& val, const HeadTraining& options) {
  TaskHead<float>* head = model.find_head(task_id);
  if (!head) throw ContractError("model has no head '" + task_id + "'");
  const auto spec = task_spec(task_id);
  if (spec.kind != head->kind()) throw CompatibilityError("head '" + task_id + "' has the wrong kind for its task");
  const auto train_idx = train.labeled(spec.target);
  const auto val_idx = val.labeled(spec.target);
  if (train_idx.empty()) throw MissingLabelsError("no training labels for task '" + task_id + "'");
  if (val_idx.empty()) throw MissingLabelsError("no validation labels for task '" + task_id + "'");
  Rng rng(options.seed);
  FitProblem prob;
  prob.params = head->layers.parameter_ptrs();
  prob.state = head_state(*head);

  if (options.freeze_backbone) {
    auto& bb = model.backbone_for(*head);
    auto train_feat = std::make_shared<Tensor<float>>(extract_features(bb, *head, train, train_idx));
    auto val_feat = std::make_shared<Tensor<float>>(extract_features(bb, *head, val, val_idx));
    std::vector<std::size_t> positions(train_idx.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    prob.plan_epoch = [&, train_feat, positions](Rng& r) {
      std::vector<BatchLoss> out;
      for (auto& b : make_batches(positions, options.budget.batch_size, r)) {
        out.push_back([&, train_feat, b](Graph<float>& g) {
          auto y = head->layers.forward(g, g.constant(gather_rows(*train_feat, b)), Mode::train, r);
          return output_loss(head->kind(), y, train, spec.target, pick(train_idx, b));
        });
      }
      return out;
    };
    prob.validate = [&, val_feat]() {
      Rng unused(0);
      return batched_mean(val_idx.size(), [&](std::span<const std::size_t> pos) {
        Graph<float> g;
        g.set_grad_enabled(false);
        auto y = head->layers.forward(g, g.constant(gather_rows(*val_feat, pos)), Mode::infer, unused);
        return static_cast<double>(output_loss(head->kind(), y, val, spec.target, pick(val_idx, pos)).value().item());
      });
    };
    return fit(prob, options.budget, head->config.optimizer, rng);
  }

  if (!head->tuned_backbone) head->tuned_backbone = model.backbone;
  head->tuned_backbone->set_trainable(true);
  for (auto* t : head->tuned_backbone->parameter_ptrs()) prob.params.push_back(t);
  for (auto* t : backbone_state(*head->tuned_backbone)) prob.state.push_back(t);
  prob.plan_epoch = [&](Rng& r) {
    std::vector<BatchLoss> out;
    for (auto& b : make_batches(train_idx, options.budget.batch_size, r)) {
      out.push_back([&, b](Graph<float>& g) { return task_loss(model, *head, g, train, b, Mode::train, r); });
    }
    return out;
  };
  prob.validate = [&]() {
    Rng unused(0);
    return batched_mean(val_idx.size(), [&](std::span<const std::size_t> pos) {
      Graph<float> g;
      g.set_grad_enabled(false);
      return static_cast<double>(task_loss(model, *head, g, val, pick(val_idx, pos), Mode::infer, unused).value().item());
    });
  };
  return fit(prob, options.budget, head->config.optimizer, rng);
}

HeadSearchResult search_head(URepModel<float>& model, const HeadConfig& base, const HyperparameterSpace& space,
                             const ImageSet& train, const ImageSet& val, const HeadTraining& options, bool timing) {
  check_axes(space, {"dropout", "optimizer"});
  std::vector<std::optional<TaskHead<float>>> heads(space.size());
  auto trainer = [&](const GridPoint& p) {
    HeadConfig hc = base;
    if (p.has("dropout")) hc.dropout = p.get_real("dropout");
    hc.optimizer = optimizer_for(p, base.optimizer);
    Rng rng(point_seed(options.seed, p.index));
    URepModel<float> trial = model;
    std::erase_if(trial.heads, [&](const TaskHead<float>& h) { return h.task_id() == hc.task_id; });
    trial.heads.push_back(attach_head(trial, hc, rng));
    HeadTraining opts = options;
    opts.seed = rng.next();
    auto rec = train_head(trial, hc.task_id, train, val, opts);
    heads[p.index] = std::move(*trial.find_head(hc.task_id));
    return rec;
  };
  HeadSearchResult res;
  res.grid = grid_search(space, trainer);
  res.report = format_grid_report(space, res.grid, timing);
  res.record = *res.grid.best_record().record;
  std::erase_if(model.heads, [&](const TaskHead<float>& h) { return h.task_id() == base.task_id; });
  model.heads.push_back(std::move(*heads[res.grid.best]));
  return res;
}

JointLoss joint_loss(URepModel<float>& model, std::span<TaskHead<float>* const> heads, std::span<const double> weights,
                     Graph<float>& g, const ImageSet& set, std::span<const std::size_t> idx, Mode mode, Rng& rng) {
  if (heads.size() != weights.size()) throw ConfigError("one loss weight per task is required");
  if (heads.empty()) throw ConfigError("joint loss needs at least one head");
  JointLoss jl;
  auto& bb = model.backbone;
  auto latent = bb.encode(g, g.constant(set.gather_images(idx)), mode, rng);
  std::optional<Var<float>> decoded;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    auto& head = *heads[i];
    Var<float> features = latent;
    if (head.kind() == HeadKind::segmentation && bb.config().arch == BackboneArch::cdae) {
      if (!decoded) decoded = bb.decode(g, latent, mode, rng);
      features = *decoded;
    }
    auto out = head.layers.forward(g, features, mode, rng);
    auto part = output_loss(head.kind(), out, set, task_spec(head.task_id()).target, idx);
    jl.parts.push_back(part);
    auto weighted = scale(part, static_cast<float>(weights[i]));
    jl.total = i == 0 ? weighted : add(jl.total, weighted);
  }
  return jl;
}

TrainRecord train_joint(URepModel<float>& model, const std::vector<std::string>& task_ids,
                        const std::vector<double>& weights_in, const ImageSet& train, const ImageSet& val,
                        const TrainBudget& budget, OptimizerKind optimizer, std::uint64_t seed) {
  if (task_ids.empty()) throw ConfigError("joint training needs at least one task");
  std::vector<double> weights = weights_in.empty() ? std::vector<double>(task_ids.size(), 1.0) : weights_in;
  if (weights.size() != task_ids.size()) throw ConfigError("one loss weight per task is required");
  for (double w : weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  }
  std::vector<TaskHead<float>*> heads;
  std::vector<std::vector<std::size_t>> train_sets, val_sets;
  for (const auto& id : task_ids) {
    auto* h = model.find_head(id);
    if (!h) throw ContractError("model has no head '" + id + "'");
    h->tuned_backbone.reset();
    heads.push_back(h);
    const auto spec = task_spec(id);
    train_sets.push_back(train.labeled(spec.target));
    val_sets.push_back(val.labeled(spec.target));
    if (train_sets.back().empty()) throw MissingLabelsError("no training labels for task '" + id + "'");
    if (val_sets.back().empty()) throw MissingLabelsError("no validation labels for task '" + id + "'");
  }
  model.backbone.set_trainable(true);
  FitProblem prob;
  prob.params = model.backbone.parameter_ptrs();
  prob.state = backbone_state(model.backbone);
  for (auto* h : heads) {
    for (auto* t : h->layers.parameter_ptrs()) prob.params.push_back(t);
    for (auto* t : head_state(*h)) prob.state.push_back(t);
  }
  const bool shared = std::all_of(train_sets.begin(), train_sets.end(), [&](const auto& s) { return s == train_sets[0]; });

  prob.plan_epoch = [&](Rng& r) {
    std::vector<BatchLoss> out;
    if (shared) {
      for (auto& b : make_batches(train_sets[0], budget.batch_size, r)) {
        out.push_back([&, b](Graph<float>& g) { return joint_loss(model, heads, weights, g, train, b, Mode::train, r).total; });
      }
      return out;
    }
    std::vector<std::vector<std::vector<std::size_t>>> per_task;
    for (const auto& s : train_sets) per_task.push_back(make_batches(s, budget.batch_size, r));
    for (std::size_t step = 0;; ++step) {
      bool any = false;
      for (std::size_t t = 0; t < heads.size(); ++t) {
        if (step >= per_task[t].size()) continue;
        any = true;
        out.push_back([&, t, b = per_task[t][step]](Graph<float>& g) {
          std::array<TaskHead<float>*, 1> one{heads[t]};
          std::array<double, 1> w{weights[t]};
          return joint_loss(model, one, w, g, train, b, Mode::train, r).total;
        });
      }
      if (!any) break;
    }
    return out;
  };
  prob.validate = [&]() {
    Rng unused(0);
    double total = 0;
    for (std::size_t t = 0; t < heads.size(); ++t) {
      total += weights[t] * batched_mean(val_sets[t].size(), [&](std::span<const std::size_t> pos) {
                 std::array<TaskHead<float>*, 1> one{heads[t]};
                 std::array<double, 1> w{1.0};
                 Graph<float> g;
                 g.set_grad_enabled(false);
                 return static_cast<double>(
                     joint_loss(model, one, w, g, val, pick(val_sets[t], pos), Mode::infer, unused).total.value().item());
               });
    }
    return total;
  };
  Rng rng(seed);
  return fit(prob, budget, optimizer, rng);
}

Tensor<float> predict(URepModel<float>& model, TaskHead<float>& head, const Tensor<float>& images) {
  Rng unused(0);
  std::vector<Tensor<float>> parts;
  const auto n = static_cast<std::size_t>(images.dim(0));
  for (std::size_t i = 0; i < n; i += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(n, i + kEvalBatch); ++j) idx.push_back(j);
    Graph<float> g;
    g.set_grad_enabled(false);
    parts.push_back(head_forward(model, head, g, g.constant(gather_rows(images, idx)), Mode::infer, unused).value());
  }
  Shape s = parts.front().shape();
  s[0] = static_cast<std::int64_t>(n);
  Tensor<float> out(s);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<long>(off));
    off += p.size();
  }
  return out;
}

Tensor<float> reconstruct(URepModel<float>& model, const Tensor<float>& images) {
  Rng unused(0);
  std::vector<Tensor<float>> parts;
  const auto n = static_cast<std::size_t>(images.dim(0));
  for (std::size_t i = 0; i < n; i += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(n, i + kEvalBatch); ++j) idx.push_back(j);
    Graph<float> g;
    g.set_grad_enabled(false);
    parts.push_back(model.backbone.reconstruct(g, g.constant(gather_rows(images, idx)), Mode::infer, unused).value());
  }
  Tensor<float> out(images.shape());
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<long>(off));
    off += p.size();
  }
  return out;
}

}  // namespace urep
