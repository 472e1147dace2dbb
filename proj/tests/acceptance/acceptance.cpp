// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance <path to the urep binary> [--only N,M,...]
//
// The binary is used for the cross-process checkpoint check and the
// determinism runs. Exit status is 0 only when every selected criterion passes.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "support/gradcheck.hpp"
#include "urep/checkpoint.hpp"
#include "urep/cli.hpp"
#include "urep/derivable.hpp"
#include "urep/error.hpp"
#include "urep/grid_search.hpp"
#include "urep/losses.hpp"
#include "urep/metrics.hpp"
#include "urep/nn.hpp"
#include "urep/pipeline.hpp"
#include "urep/relatedness.hpp"
#include "urep/text.hpp"
#include "urep/train.hpp"

namespace fs = std::filesystem;
using namespace urep;
using urep::testing::grad_check;
using urep::testing::GradCheckResult;
using urep::testing::probe;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects the failed sub-checks of one criterion.
struct Check {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// ---------------------------------------------------------------- 1

Tensor<double> param_tensor(Shape shape, double lo, double hi, Rng& rng) {
  auto t = Tensor<double>::uniform(std::move(shape), lo, hi, rng);
  t.set_requires_grad(true);
  return t;
}

// Values bounded away from zero, so a ReLU kink never lies within h.
Tensor<double> away_from(Shape shape, double center, double gap, double spread, Rng& rng) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.data()) v = center + (rng.below(2) ? 1 : -1) * rng.uniform(gap, gap + spread);
  t.set_requires_grad(true);
  return t;
}

using Instance = std::function<GradCheckResult(Rng&, int)>;

std::vector<std::pair<std::string, Instance>> gradient_cases() {
  std::vector<std::pair<std::string, Instance>> c;
  auto unary = [](std::function<Var<double>(Var<double>)> f, double lo, double hi) {
    return [f, lo, hi](Rng& rng, int) {
      auto x = param_tensor({3, 4}, lo, hi, rng);
      return grad_check({&x}, [&](Graph<double>& g) { return probe(f(g.param(x)), 11); });
    };
  };
  auto binary = [](std::function<Var<double>(Var<double>, Var<double>)> f, double lo, double hi) {
    return [f, lo, hi](Rng& rng, int) {
      auto a = param_tensor({3, 4}, -1, 1, rng);
      auto b = param_tensor({3, 4}, lo, hi, rng);
      return grad_check({&a, &b}, [&](Graph<double>& g) { return probe(f(g.param(a), g.param(b)), 12); });
    };
  };
  c.emplace_back("add", binary([](auto a, auto b) { return add(a, b); }, -1, 1));
  c.emplace_back("sub", binary([](auto a, auto b) { return sub(a, b); }, -1, 1));
  c.emplace_back("mul", binary([](auto a, auto b) { return mul(a, b); }, -1, 1));
  c.emplace_back("div", binary([](auto a, auto b) { return div(a, b); }, 0.5, 1.5));
  c.emplace_back("add(scalar)", [](Rng& rng, int) {
    auto a = param_tensor({3, 4}, -1, 1, rng);
    auto s = param_tensor({}, -1, 1, rng);
    return grad_check({&a, &s}, [&](Graph<double>& g) { return probe(add(g.param(a), g.param(s)), 13); });
  });
  c.emplace_back("scale", unary([](auto x) { return scale(x, -1.7); }, -1, 1));
  c.emplace_back("add_scalar", unary([](auto x) { return add_scalar(x, 0.3); }, -1, 1));
  c.emplace_back("relu", [](Rng& rng, int) {
    auto x = away_from({3, 4}, 0.0, 0.05, 1.0, rng);
    return grad_check({&x}, [&](Graph<double>& g) { return probe(relu(g.param(x)), 14); });
  });
  c.emplace_back("exp", unary([](auto x) { return exp(x); }, -2, 2));
  c.emplace_back("log", unary([](auto x) { return log(x); }, 0.3, 3));
  c.emplace_back("clip", [](Rng& rng, int) {
    // inside, below and above the band, never within 0.05 of an edge
    auto x = Tensor<double>::zeros({3, 4});
    for (auto& v : x.data()) {
      const auto r = rng.below(3);
      v = r == 0 ? rng.uniform(-0.45, 0.45) : r == 1 ? rng.uniform(-1.5, -0.55) : rng.uniform(0.55, 1.5);
    }
    x.set_requires_grad(true);
    return grad_check({&x}, [&](Graph<double>& g) { return probe(clip(g.param(x), -0.5, 0.5), 15); });
  });
  c.emplace_back("sigmoid", unary([](auto x) { return sigmoid(x); }, -3, 3));
  c.emplace_back("matmul", [](Rng& rng, int) {
    auto a = param_tensor({3, 4}, -1, 1, rng);
    auto b = param_tensor({4, 2}, -1, 1, rng);
    return grad_check({&a, &b}, [&](Graph<double>& g) { return probe(matmul(g.param(a), g.param(b)), 16); });
  });
  auto axes_for = [](int i) -> std::vector<int> {
    switch (i % 4) {
      case 0: return {};
      case 1: return {0};
      case 2: return {1};
      default: return {0, 2};
    }
  };
  c.emplace_back("sum", [axes_for](Rng& rng, int i) {
    auto x = param_tensor({2, 3, 2}, -1, 1, rng);
    return grad_check({&x}, [&](Graph<double>& g) { return probe(sum(g.param(x), axes_for(i)), 17); });
  });
  c.emplace_back("mean", [axes_for](Rng& rng, int i) {
    auto x = param_tensor({2, 3, 2}, -1, 1, rng);
    return grad_check({&x}, [&](Graph<double>& g) { return probe(mean(g.param(x), axes_for(i)), 18); });
  });
  c.emplace_back("max", [axes_for](Rng& rng, int i) {
    // distinct values at least 0.1 apart, so the arg-max is stable under h
    auto x = Tensor<double>::zeros({2, 3, 2});
    std::vector<int> order(x.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
    shuffle(order, rng);
    for (std::size_t k = 0; k < order.size(); ++k) x[k] = 0.1 * order[k] + rng.uniform(0.0, 0.01);
    x.set_requires_grad(true);
    return grad_check({&x}, [&](Graph<double>& g) { return probe(max(g.param(x), axes_for(i)), 19); });
  });
  c.emplace_back("reshape", [](Rng& rng, int) {
    auto x = param_tensor({2, 6}, -1, 1, rng);
    return grad_check({&x}, [&](Graph<double>& g) { return probe(reshape(g.param(x), {3, 2, 2}), 20); });
  });
  c.emplace_back("add_bias", [](Rng& rng, int i) {
    const Shape s = i % 2 ? Shape{2, 3, 2, 2} : Shape{4, 3};
    auto x = param_tensor(s, -1, 1, rng);
    auto b = param_tensor({3}, -1, 1, rng);
    return grad_check({&x, &b}, [&](Graph<double>& g) { return probe(add_bias(g.param(x), g.param(b)), 21); });
  });
  c.emplace_back("select", [](Rng& rng, int) {
    auto x = param_tensor({4, 3}, -1, 1, rng);
    std::vector<int> idx(4);
    for (auto& v : idx) v = static_cast<int>(rng.below(3));
    return grad_check({&x}, [&](Graph<double>& g) { return probe(select(g.param(x), idx), 22); });
  });
  c.emplace_back("conv2d", [](Rng& rng, int i) {
    ConvSpec s{2, 3, std::array{1, 3, 5}[i % 3], 1 + i % 2, 1 + (i / 3) % 2, (i / 6) % 2 ? Padding::valid : Padding::same};
    auto x = param_tensor({2, 2, 9, 9}, -1, 1, rng);
    auto w = param_tensor({3, 2, s.kernel, s.kernel}, -1, 1, rng);
    auto b = param_tensor({3}, -1, 1, rng);
    return grad_check({&x, &w, &b},
                      [&](Graph<double>& g) { return probe(conv2d(g.param(x), g.param(w), g.param(b), s), 23); });
  });
  c.emplace_back("upsample_nearest", [](Rng& rng, int i) {
    auto x = param_tensor({2, 2, 3, 3}, -1, 1, rng);
    return grad_check({&x}, [&](Graph<double>& g) { return probe(upsample_nearest(g.param(x), 2 + i % 2), 24); });
  });
  c.emplace_back("batch_norm", [](Rng& rng, int i) {
    BatchNormState<double> st(2);
    st.gamma = param_tensor({2}, 0.5, 1.5, rng);
    st.beta = param_tensor({2}, -0.5, 0.5, rng);
    auto x = param_tensor(i % 2 ? Shape{3, 2, 2, 2} : Shape{4, 2}, -1, 1, rng);
    return grad_check({&x, &st.gamma, &st.beta}, [&](Graph<double>& g) {
      return probe(batch_norm(g.param(x), g.param(st.gamma), g.param(st.beta), st, Mode::train), 25);
    });
  });
  c.emplace_back("global_avg_pool", [](Rng& rng, int) {
    auto x = param_tensor({2, 3, 3, 2}, -1, 1, rng);
    return grad_check({&x}, [&](Graph<double>& g) { return probe(global_avg_pool(g.param(x)), 26); });
  });
  c.emplace_back("dense", [](Rng& rng, int) {
    auto x = param_tensor({3, 4}, -1, 1, rng);
    auto w = param_tensor({4, 2}, -1, 1, rng);
    auto b = param_tensor({2}, -1, 1, rng);
    return grad_check({&x, &w, &b}, [&](Graph<double>& g) { return probe(dense(g.param(x), g.param(w), g.param(b)), 27); });
  });
  c.emplace_back("dropout", [](Rng& rng, int i) {
    auto x = param_tensor({4, 5}, -1, 1, rng);
    return grad_check({&x}, [&](Graph<double>& g) {
      Rng mask(100 + static_cast<std::uint64_t>(i));
      return probe(dropout(g.param(x), 0.3, Mode::train, mask), 28);
    });
  });
  c.emplace_back("softmax", unary([](auto x) { return softmax(x); }, -2, 2));

  auto prob_pair = [](Rng& rng) {
    auto p = param_tensor({2, 1, 3, 3}, 0.05, 0.95, rng);
    auto y = Tensor<double>::zeros({2, 1, 3, 3});
    for (auto& v : y.data()) v = static_cast<double>(rng.below(2));
    return std::pair{std::move(p), std::move(y)};
  };
  c.emplace_back("bce_loss", [prob_pair](Rng& rng, int) {
    auto [p, y] = prob_pair(rng);
    return grad_check({&p}, [&](Graph<double>& g) { return bce_loss(g.param(p), y); });
  });
  c.emplace_back("dice_loss", [prob_pair](Rng& rng, int) {
    auto [p, y] = prob_pair(rng);
    return grad_check({&p}, [&](Graph<double>& g) { return dice_loss(g.param(p), y); });
  });
  c.emplace_back("segmentation_loss", [prob_pair](Rng& rng, int) {
    auto [p, y] = prob_pair(rng);
    return grad_check({&p}, [&](Graph<double>& g) { return segmentation_loss(g.param(p), y); });
  });
  c.emplace_back("cce_loss", [](Rng& rng, int) {
    auto q = Tensor<double>::uniform({3, 4}, 0.05, 1.0, rng);
    for (int r = 0; r < 3; ++r) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += q[r * 4 + k];
      for (int k = 0; k < 4; ++k) q[r * 4 + k] /= s;
    }
    q.set_requires_grad(true);
    std::vector<int> labels(3);
    for (auto& l : labels) l = static_cast<int>(rng.below(4));
    return grad_check({&q}, [&](Graph<double>& g) { return cce_loss(g.param(q), labels); });
  });
  c.emplace_back("mse_loss", [](Rng& rng, int) {
    auto a = param_tensor({5}, -1, 1, rng);
    auto b = param_tensor({5}, -1, 1, rng);
    return grad_check({&a, &b}, [&](Graph<double>& g) { return mse_loss(g.param(a), g.param(b)); });
  });
  return c;
}

bool criterion_gradients(Check& c) {
  const auto t0 = Clock::now();
  constexpr int kInstances = 20;
  double worst = 0;
  std::string worst_op;
  std::size_t cases = 0;
  for (const auto& [name, run] : gradient_cases()) {
    Rng rng(fnv1a64(name));
    double op_worst = 0;
    for (int i = 0; i < kInstances; ++i) {
      const auto r = run(rng, i);
      c.expect(r.checked > 0, name + ": nothing checked");
      op_worst = std::max(op_worst, r.max_rel_error);
    }
    c.expect(op_worst <= 1e-4, name + " max rel err " + fmt(op_worst));
    if (op_worst >= worst) {
      worst = op_worst;
      worst_op = name;
    }
    ++cases;
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 60, "runtime " + fmt(secs) + " s");
  c.note(std::to_string(cases) + " ops/losses x " + std::to_string(kInstances) + " instances, max rel err " +
         fmt(worst, 3) + " (" + worst_op + "), " + fmt(secs, 3) + " s");
  return true;
}

// ---------------------------------------------------------------- 2

double loss_value(const std::function<Var<double>(Graph<double>&)>& f) {
  Graph<double> g;
  g.set_grad_enabled(false);
  return f(g).value().item();
}

bool criterion_loss_oracles(Check& c) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const Shape s{2, 1, 4, 4};
    auto y = Tensor<double>::zeros(s);
    for (auto& v : y.data()) v = static_cast<double>(rng.below(2));
    const double bce = loss_value([&](auto& g) { return bce_loss(g.constant(Tensor<double>::full(s, 0.5)), y); });
    c.expect(std::abs(bce - std::log(2.0)) <= 1e-6, "bce(0.5) = " + fmt(bce, 12));
  }
  for (int k : {2, 3, 5}) {
    std::vector<int> labels(6);
    for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    const double cce =
        loss_value([&](auto& g) { return cce_loss(g.constant(Tensor<double>::full({6, k}, 1.0 / k)), labels); });
    c.expect(std::abs(cce - std::log(static_cast<double>(k))) <= 1e-6, "cce(uniform, " + std::to_string(k) + ")");
  }
  for (int t = 0; t < 10; ++t) {
    const Shape s{1, 1, 6, 6};
    auto a = Tensor<double>::zeros(s);
    for (auto& v : a.data()) v = static_cast<double>(rng.below(2));
    a[0] = 1;
    a[1] = 0;
    auto disjoint = a.detached();
    for (auto& v : disjoint.data()) v = 1 - v;
    const double same = loss_value([&](auto& g) { return dice_loss(g.constant(a), a); });
    c.expect(same <= 1e-5, "dice(identical) = " + fmt(same));
    const double apart = loss_value([&](auto& g) { return dice_loss(g.constant(disjoint), a); });
    c.expect(apart >= 1 - 1e-5, "dice(disjoint) = " + fmt(apart));
  }
  for (int t = 0; t < 20; ++t) {
    auto p = Tensor<double>::uniform({2, 1, 5, 5}, 0.0, 1.0, rng);
    auto y = Tensor<double>::zeros({2, 1, 5, 5});
    for (auto& v : y.data()) v = static_cast<double>(rng.below(2));
    const double seg = loss_value([&](auto& g) { return segmentation_loss(g.constant(p), y); });
    const double parts = loss_value([&](auto& g) { return bce_loss(g.constant(p), y); }) +
                         loss_value([&](auto& g) { return dice_loss(g.constant(p), y); });
    c.expect(std::abs(seg - parts) <= 1e-6, "segmentation_loss != bce + dice");
  }
  return true;
}

// ---------------------------------------------------------------- 3

double brute_mann_whitney(const std::vector<double>& s, const std::vector<bool>& pos) {
  double u = 0;
  double np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (pos[i] ? np : nn) += 1;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) u += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
  return u / (np * nn);
}

bool criterion_metric_oracles(Check& c) {
  Rng rng(3);
  int auc_sets = 0, with_ties = 0;
  while (auc_sets < 100) {
    const std::size_t n = 4 + rng.below(40);
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    // coarse scores so ties are common
    const int levels = 2 + static_cast<int>(rng.below(10));
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) / levels;
      pos[i] = rng.below(2) == 1;
    }
    if (std::count(pos.begin(), pos.end(), true) == 0 || std::count(pos.begin(), pos.end(), false) == 0) continue;
    std::set<double> distinct(s.begin(), s.end());
    if (distinct.size() < n) ++with_ties;
    std::vector<char> pos_bytes(pos.begin(), pos.end());
    const std::span<const bool> pos_span(reinterpret_cast<const bool*>(pos_bytes.data()), n);
    const double got = auc_rank(s, pos_span);
    const double want = brute_mann_whitney(s, pos);
    c.expect(got == want, "auc " + fmt(got, 17) + " vs " + fmt(want, 17));
    ++auc_sets;
  }
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<double> pred(n), truth(n);
    const double p_on = rng.uniform(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng.uniform(0.0, 1.0);
      truth[i] = rng.uniform(0.0, 1.0) < p_on ? 1.0 : 0.0;
    }
    if (t % 10 == 0) std::fill(truth.begin(), truth.end(), 0.0);
    if (t % 20 == 0) std::fill(pred.begin(), pred.end(), 0.1);
    double tp = 0, fp = 0, fn = 0, agree = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = pred[i] >= 0.5, y = truth[i] == 1.0;
      tp += p && y;
      fp += p && !y;
      fn += !p && y;
      agree += p == y;
    }
    const double iou = tp + fp + fn == 0 ? 1.0 : tp / (tp + fp + fn);
    const auto m = segmentation_metrics(std::span<const double>(pred), std::span<const double>(truth));
    c.expect(m.iou == iou, "iou mismatch on set " + std::to_string(t));
    c.expect(m.pixel_accuracy == agree / static_cast<double>(n), "pixel accuracy mismatch on set " + std::to_string(t));
  }
  std::vector<double> clean(64, 0.3), recon(64);
  for (std::size_t i = 0; i < recon.size(); ++i) recon[i] = clean[i] + (i % 2 ? 0.1 : -0.1);
  const double p = psnr(std::span<const double>(clean), std::span<const double>(recon));
  c.expect(std::abs(p - 20.0) <= 1e-9, "psnr(mse=0.01) = " + fmt(p, 17));
  c.note("100 AUC sets (" + std::to_string(with_ties) + " with ties), 100 mask pairs, psnr " + fmt(p, 15));
  return true;
}

// ---------------------------------------------------------------- 4

TrainRecord record_with(double best) {
  TrainRecord r;
  r.epochs.push_back({best + 1, best + 0.5, 1e-3, 0});
  r.epochs.push_back({best, best, 1e-3, 0});
  r.best_epoch = 1;
  return r;
}

bool criterion_grid_search(Check& c) {
  Rng rng(4);
  const std::vector<std::string> names{"sgd", "adam", "rmsprop"};
  int tie_cases = 0;
  for (int t = 0; t < 50; ++t) {
    // axes: 0 = integer, 1 = real, 2 = categorical; up to 54 points
    std::vector<std::vector<AxisValue>> axes;
    std::vector<int> kinds;
    std::size_t total = 1;
    const int n_axes = 1 + static_cast<int>(rng.below(4));
    for (int a = 0; a < n_axes; ++a) {
      const int kind = static_cast<int>(rng.below(3));
      const std::size_t room = 54 / total;
      if (room < 1) break;
      const std::size_t n = 1 + rng.below(std::min<std::size_t>(room, 3));
      std::vector<AxisValue> vals;
      std::vector<std::string> pool = names;
      shuffle(pool, rng);
      std::vector<int> ints{1, 3, 5, 7, 9, 11};
      shuffle(ints, rng);
      std::vector<double> reals{0.5, 0.1, 0.3, 0.25, 0.05};
      shuffle(reals, rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (kind == 0) vals.emplace_back(static_cast<std::int64_t>(ints[i]));
        else if (kind == 1) vals.emplace_back(reals[i]);
        else vals.emplace_back(pool[i]);
      }
      axes.push_back(vals);
      kinds.push_back(kind);
      total *= n;
    }
    HyperparameterSpace space;
    for (std::size_t a = 0; a < axes.size(); ++a) space.add_axis("a" + std::to_string(a), axes[a]);
    c.expect(space.size() == total && total <= 54, "space size");

    // enumerate independently: mixed radix, last axis fastest
    std::vector<std::vector<std::size_t>> digits(total);
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t rest = i;
      digits[i].resize(axes.size());
      for (std::size_t a = axes.size(); a-- > 0;) {
        digits[i][a] = rest % axes[a].size();
        rest /= axes[a].size();
      }
    }
    std::vector<double> losses(total);
    for (auto& l : losses) l = 0.1 * static_cast<double>(1 + rng.below(3));
    if (total > 1 && rng.below(4) == 0) losses[rng.below(total)] = std::numeric_limits<double>::quiet_NaN();
    auto key_less = [&](std::size_t x, std::size_t y) {
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const auto& vx = axes[a][digits[x][a]];
        const auto& vy = axes[a][digits[y][a]];
        if (kinds[a] == 0 && std::get<std::int64_t>(vx) != std::get<std::int64_t>(vy))
          return std::get<std::int64_t>(vx) < std::get<std::int64_t>(vy);
        if (kinds[a] == 1 && std::get<double>(vx) != std::get<double>(vy))
          return std::get<double>(vx) < std::get<double>(vy);
        if (kinds[a] == 2 && digits[x][a] != digits[y][a]) return digits[x][a] < digits[y][a];
      }
      return false;
    };
    std::optional<std::size_t> oracle;
    std::size_t n_min = 0;
    double best = std::numeric_limits<double>::infinity();
    for (double l : losses)
      if (std::isfinite(l)) best = std::min(best, l);
    for (std::size_t i = 0; i < total; ++i) {
      if (losses[i] != best) continue;
      ++n_min;
      if (!oracle || key_less(i, *oracle)) oracle = i;
    }
    if (n_min > 1) ++tie_cases;

    const auto res = grid_search(space, [&](const GridPoint& p) { return record_with(losses[p.index]); });
    const auto& got = res.best_record().point;
    bool same = got.values.size() == axes.size();
    for (std::size_t a = 0; same && a < axes.size(); ++a) same = got.values[a].second == axes[a][digits[*oracle][a]];
    c.expect(same, "space " + std::to_string(t) + " (" + space.to_text() + "): got " + got.describe());
  }
  c.note("50 spaces, " + std::to_string(tie_cases) + " with tied minima");
  c.expect(tie_cases >= 10, "too few tie cases");
  return true;
}

// ---------------------------------------------------------------- 5, 6

struct Trained {
  std::optional<URepModel<float>> model;  // 64x64 denoiser with seg and cls heads
  ImageSet test;
};

Trained& shared_model() {
  static Trained t;
  return t;
}

ImageSet split_of(const Dataset& d, Split s) { return make_image_set(d, s); }

bool criterion_denoising(Check& c) {
  const auto t0 = Clock::now();
  SyntheticConfig sc;
  sc.mode = GenMode::seg_cls;
  sc.image_size = 64;
  sc.count = 300;
  sc.seed = 1;
  const auto data = make_dataset(generate(sc), sc.seed);
  const auto train = split_of(data, Split::train), val = split_of(data, Split::val);
  auto& shared = shared_model();
  shared.test = split_of(data, Split::test);

  BackboneSearch s;
  s.space = HyperparameterSpace::parse("kernel=3;optimizer=adam");
  s.budget = {10, 0, 8, 3e-3, true};
  s.noise_sigma = 0.03;
  s.seed = 1;
  s.timing = false;
  auto res = train_backbone_unsupervised(train, val, s);
  EvalOptions eo;
  eo.tasks = {"denoise"};
  eo.noise_sigma = 0.03;
  eo.noise_seed = 1;
  const auto rows = evaluate(res.model, shared.test, eo);
  const double denoised = *rows.at(0).psnr_denoised, noisy = *rows.at(0).psnr_noisy;
  c.expect(denoised >= noisy + 3.0, "psnr gain " + fmt(denoised - noisy) + " dB");
  const double secs = seconds_since(t0);
  c.expect(secs <= 300, "runtime " + fmt(secs) + " s");
  c.note("64x64, " + std::to_string(train.size()) + " train / " + std::to_string(shared.test.size()) +
         " test images: noisy " + fmt(noisy, 4) + " dB -> denoised " + fmt(denoised, 4) + " dB, " + fmt(secs, 3) + " s");
  shared.model = std::move(res.model);
  return true;
}

bool criterion_heads(Check& c) {
  auto& shared = shared_model();
  if (!shared.model) {
    c.expect(false, "needs the criterion 5 backbone");
    return true;
  }
  SyntheticConfig sc;
  sc.mode = GenMode::seg_cls;
  sc.image_size = 64;
  sc.count = 300;
  sc.seed = 1;
  const auto data = make_dataset(generate(sc), sc.seed);
  const auto train = split_of(data, Split::train), val = split_of(data, Split::val);
  auto& m = *shared.model;

  // the train-head default: each head fine-tunes its own copy of the trunk
  HeadTraining ht;
  ht.budget = {15, 5, 8, 1e-3, true};
  ht.freeze_backbone = false;
  ht.seed = 1;
  Rng rng(1);
  for (const std::string task : {"seg", "cls"}) {
    const auto t0 = Clock::now();
    HeadConfig hc;
    hc.task_id = task;
    hc.kind = task == "seg" ? HeadKind::segmentation : HeadKind::classification;
    hc.dropout = 0.25;
    m.heads.push_back(attach_head(m, hc, rng));
    train_head(m, task, train, val, ht);
    const double secs = seconds_since(t0);
    EvalOptions eo;
    eo.tasks = {task};
    const auto row = evaluate(m, shared.test, eo).at(0);
    if (task == "seg") {
      const double iou = row.segmentation->iou;
      c.expect(iou >= 0.90, "seg IoU " + fmt(iou));
      c.note("seg IoU " + fmt(iou, 4) + " (" + fmt(secs, 3) + " s)");
    } else {
      const double acc = row.classification->accuracy;
      c.expect(acc >= 0.85, "cls accuracy " + fmt(acc));
      c.note("cls accuracy " + fmt(acc, 4) + " (" + fmt(secs, 3) + " s)");
    }
    c.expect(secs <= 300, task + " runtime " + fmt(secs) + " s");
  }

  const auto t0 = Clock::now();
  SyntheticConfig qc;
  qc.mode = GenMode::quality;
  qc.image_size = 32;
  qc.count = 240;
  qc.seed = 3;
  const auto qdata = make_dataset(generate(qc), qc.seed);
  BackboneSearch s;
  s.base = BackboneConfig::dilated_cnn(3, 2);
  s.space = HyperparameterSpace::parse("kernel=3;dilation=2");
  s.budget = {15, 0, 8, 3e-3, true};
  s.seed = 3;
  s.source_task = "cls";
  s.timing = false;
  auto sup = train_backbone_supervised(split_of(qdata, Split::train), split_of(qdata, Split::val), s);
  EvalOptions eo;
  eo.tasks = {"cls"};
  const double acc = evaluate(sup.model, split_of(qdata, Split::test), eo).at(0).classification->accuracy;
  const double secs = seconds_since(t0);
  c.expect(acc >= 0.95, "supervised source accuracy " + fmt(acc));
  c.expect(secs <= 300, "supervised runtime " + fmt(secs) + " s");
  c.note("supervised source accuracy " + fmt(acc, 4) + " (" + fmt(secs, 3) + " s)");
  return true;
}

// ---------------------------------------------------------------- 7

bool criterion_compare(Check& c, const fs::path& work) {
  const auto report_path = (work / "compare.tsv").string();
  std::ostringstream out, err;
  const int code = run_cli({"compare", "--out", report_path}, out, err);
  c.expect(code == 0, "compare exit " + std::to_string(code) + ": " + err.str());
  if (code != 0) return true;
  const auto report = read_text_file(report_path);
  c.expect(report == out.str(), "printed and written reports differ");
  const auto lines = split(report, '\n');
  c.expect(!lines.empty() && lines[0] == "approach\ttask\tval_loss\tmetric\tvalue\tseconds", "header");
  std::map<std::string, double> totals;
  std::map<std::string, int> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    c.expect(f.size() == 6, "row with " + std::to_string(f.size()) + " fields: " + line);
    if (f.size() != 6) continue;
    if (f[0] == "total") {
      totals[f[1]] = std::stod(f[5]);
      continue;
    }
    c.expect(f[0] == "shared" || f[0] == "traditional", "approach " + f[0]);
    std::stod(f[2]);
    std::stod(f[4]);
    std::stod(f[5]);
    ++rows[f[0]];
  }
  c.expect(totals.count("shared") && totals.count("traditional"), "total lines");
  c.expect(rows["shared"] >= 2 && rows["traditional"] >= 2, "per-task rows");
  const double shared = totals["shared"], traditional = totals["traditional"];
  c.expect(shared < traditional, "shared " + fmt(shared) + " s not below traditional " + fmt(traditional) + " s");
  c.note("shared " + fmt(shared, 4) + " s < traditional " + fmt(traditional, 4) + " s");
  return true;
}

// ---------------------------------------------------------------- 8

URepModel<double> tiny_model(BackboneArch arch, std::uint64_t seed) {
  Rng rng(seed);
  BackboneConfig cfg = arch == BackboneArch::cdae ? BackboneConfig::cdae(3) : BackboneConfig::dilated_cnn(3, 2);
  cfg.channels = arch == BackboneArch::cdae ? std::vector<int>{3, 3, 4, 4} : std::vector<int>{3, 3, 4, 4, 4, 4};
  URepModel<double> m;
  m.backbone = Backbone<double>(cfg, rng);
  m.input_size = 8;
  HeadConfig hc;
  hc.task_id = "cls";
  hc.num_classes = 3;
  hc.hidden = 6;
  hc.dropout = 0.25;
  m.heads.push_back(make_head(m.backbone, hc, rng));
  for (auto& nt : m.backbone.parameters())
    if (nt.tensor->rank() == 1)
      for (auto& v : nt.tensor->data()) v = rng.uniform(0.05, 0.2);
  for (auto& nt : m.heads[0].layers.parameters())
    if (nt.tensor->rank() == 1)
      for (auto& v : nt.tensor->data()) v = rng.uniform(-0.2, 0.2);
  return m;
}

double class_score(TaskHead<double>& head, const Tensor<double>& features, int cls) {
  Rng rng(0);
  Graph<double> g;
  g.set_grad_enabled(false);
  return head_logits(head, g, g.constant(features), Mode::infer, rng).value()[cls];
}

// Per-channel weights from central differences of the class score.
Tensor<double> brute_force_cam(URepModel<double>& m, const Tensor<double>& img, int cls) {
  Rng rng(0);
  Graph<double> g;
  g.set_grad_enabled(false);
  const auto x = img.reshaped({1, 1, img.dim(0), img.dim(1)});
  const auto a = head_input(m.backbone, m.heads[0], g, g.constant(x), Mode::infer, rng).value().detached();
  const auto k_count = a.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<double> raw = Tensor<double>::zeros({a.dim(2), a.dim(3)});
  for (std::int64_t k = 0; k < k_count; ++k) {
    double alpha = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
      auto up = a.detached(), down = a.detached();
      up[k * hw + i] += 1e-5;
      down[k * hw + i] -= 1e-5;
      alpha += (class_score(m.heads[0], up, cls) - class_score(m.heads[0], down, cls)) / 2e-5;
    }
    alpha /= static_cast<double>(hw);
    for (std::int64_t i = 0; i < hw; ++i) raw[i] += alpha * a[k * hw + i];
  }
  for (auto& v : raw.data()) v = std::max(v, 0.0);
  return raw;
}

bool criterion_grad_cam(Check& c) {
  double worst_fd = 0, worst_scale = 0;
  int maps = 0;
  for (auto arch : {BackboneArch::cdae, BackboneArch::dilated_cnn}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto m = tiny_model(arch, seed);
      Rng irng(seed + 50);
      for (int size : {8, 16}) {
        const auto img = Tensor<double>::uniform({size, size}, 0.0, 1.0, irng);
        for (int cls = 0; cls < 3; ++cls) {
          const auto h = grad_cam(m, m.heads[0], img, cls);
          c.expect(h.values.shape() == img.shape(), "heatmap shape");
          for (double v : h.values.data()) c.expect(v >= 0 && v <= 1, "heatmap value " + fmt(v));
          for (double f : {0.1, 2.5, 30.0}) {
            auto scaled = m;
            auto params = scaled.heads[0].layers.parameters();
            for (std::size_t i = params.size() - 2; i < params.size(); ++i)
              for (auto& v : params[i].tensor->data()) v *= f;
            const auto hs = grad_cam(scaled, scaled.heads[0], img, cls);
            for (std::size_t i = 0; i < hs.values.size(); ++i)
              worst_scale = std::max(worst_scale, std::abs(hs.values.data()[i] - h.values.data()[i]));
          }
          if (size != 8) continue;
          const auto fast = grad_cam_raw(m, m.heads[0], img, cls);
          const auto slow = brute_force_cam(m, img, cls);
          c.expect(fast.shape() == slow.shape(), "raw map shape");
          if (fast.shape() != slow.shape()) continue;
          for (std::size_t i = 0; i < fast.size(); ++i)
            worst_fd = std::max(worst_fd, std::abs(fast.data()[i] - slow.data()[i]));
          ++maps;
        }
      }
    }
  }
  c.expect(worst_scale <= 1e-5, "scaling changed the heatmap by " + fmt(worst_scale));
  c.expect(worst_fd <= 1e-5, "brute-force mismatch " + fmt(worst_fd));
  c.note(std::to_string(maps) + " raw maps vs finite differences: max diff " + fmt(worst_fd, 3) +
         "; scaling max diff " + fmt(worst_scale, 3));
  return true;
}

// ---------------------------------------------------------------- 9, 10

int run_binary(const std::string& binary, const std::vector<std::string>& args, const fs::path& log) {
  std::string cmd = "'" + binary + "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " >>'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Full CLI pipeline with timing off. Returns an empty string or a failure.
std::string run_pipeline(const std::string& binary, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = [&](const std::string& name) { return (dir / name).string(); };
  const auto log = dir.parent_path() / (dir.filename().string() + ".log");
  fs::remove(log);
  write_text_file(p("gen.cfg"), "mode=seg_cls\nimage_size=32\ncount=80\nseed=7\n");
  const std::vector<std::vector<std::string>> steps{
      {"gen-data", "--config", p("gen.cfg"), "--out", p("data")},
      {"train-backbone", "--mode", "unsupervised", "--data", p("data"), "--space", "kernel=3,5;optimizer=adam",
       "--epochs", "2", "--seed", "7", "--timing", "off", "--out", p("backbone.ckpt")},
      {"train-head", "--checkpoint", p("backbone.ckpt"), "--task", "seg", "--data", p("data"), "--epochs", "2",
       "--freeze", "on", "--timing", "off", "--out", p("seg.ckpt")},
      {"train-head", "--checkpoint", p("seg.ckpt"), "--task", "cls", "--data", p("data"), "--epochs", "2",
       "--search", "--space", "dropout=0.25,0.5;optimizer=adam", "--timing", "off", "--out", p("model.ckpt")},
      {"eval", "--checkpoint", p("model.ckpt"), "--data", p("data"), "--seed", "7", "--out", p("eval.tsv")},
      {"explain", "--checkpoint", p("model.ckpt"), "--image", p("data/images/img_00000.pgm"), "--out", p("explain")},
      {"compare", "--data", p("data"), "--epochs", "1", "--timing", "off", "--out", p("compare.tsv")},
  };
  for (const auto& step : steps) {
    const int code = run_binary(binary, step, log);
    if (code != 0) return step[0] + " exited " + std::to_string(code) + " (see " + log.string() + ")";
  }
  return {};
}

std::map<std::string, std::string> files_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_text_file(e.path().string());
  return out;
}

template <typename F>
bool throws_as(F&& f, const char* kind, Check& c) {
  try {
    f();
  } catch (const CheckpointHeaderError&) {
    return std::string(kind) == "header";
  } catch (const CheckpointShapeError&) {
    return std::string(kind) == "shape";
  } catch (const CheckpointTruncatedError&) {
    return std::string(kind) == "truncated";
  } catch (const std::exception& e) {
    c.note(std::string("unexpected exception: ") + e.what());
    return false;
  }
  return false;
}

std::string reheader(const std::string& bytes, const std::string& from, const std::string& to) {
  const auto end = bytes.find("\n\n");
  std::string header = bytes.substr(0, end + 1);
  const std::string payload = bytes.substr(end + 2);
  const auto at = header.find(from);
  if (at == std::string::npos) return bytes;
  header.replace(at, from.size(), to);
  const auto ck = header.find("header_checksum=");
  header.erase(ck);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(header)));
  return header + "header_checksum=" + hex + "\n\n" + payload;
}

bool criterion_checkpoint(Check& c, const std::string& binary, const fs::path& work) {
  auto& shared = shared_model();
  if (!shared.model) {
    c.expect(false, "needs the criterion 5/6 model");
    return true;
  }
  auto& m = *shared.model;
  const auto path = (work / "trained.ckpt").string();
  save_checkpoint(m, path);
  auto loaded = load_checkpoint(path);
  // every tensor bit-exact
  const auto a = m.backbone.state(), b = loaded.backbone.state();
  bool weights_equal = a.size() == b.size();
  for (std::size_t i = 0; weights_equal && i < a.size(); ++i)
    weights_equal = a[i].name == b[i].name && a[i].tensor->shape() == b[i].tensor->shape() &&
                    std::equal(a[i].tensor->data().begin(), a[i].tensor->data().end(), b[i].tensor->data().begin());
  for (std::size_t h = 0; weights_equal && h < m.heads.size(); ++h) {
    const auto ha = m.heads[h].layers.state(), hb = loaded.heads[h].layers.state();
    weights_equal = ha.size() == hb.size();
    for (std::size_t i = 0; weights_equal && i < ha.size(); ++i)
      weights_equal = std::equal(ha[i].tensor->data().begin(), ha[i].tensor->data().end(), hb[i].tensor->data().begin());
  }
  c.expect(weights_equal, "weights differ after reload");
  c.expect(serialize_checkpoint(loaded) == read_text_file(path), "re-serialized bytes differ");
  const auto images = shared.test.images;
  auto same_output = [&](const std::function<Tensor<float>(URepModel<float>&)>& f) {
    const auto x = f(m), y = f(loaded);
    return x.shape() == y.shape() && std::equal(x.data().begin(), x.data().end(), y.data().begin());
  };
  c.expect(same_output([&](auto& mm) { return reconstruct(mm, images); }), "reconstructions differ");
  for (const std::string task : {"seg", "cls"})
    c.expect(same_output([&](auto& mm) { return predict(mm, *mm.find_head(task), images); }), task + " outputs differ");

  const auto bytes = read_text_file(path);
  const auto header_end = bytes.find("\n\n") + 2;
  int header_modes = 0;
  for (std::size_t i : {std::size_t{0}, std::size_t{3}, header_end / 2, header_end - 3}) {
    auto bad = bytes;
    bad[i] = static_cast<char>(bad[i] ^ 0x20);
    header_modes += throws_as([&] { parse_checkpoint(bad); }, "header", c);
  }
  c.expect(header_modes == 4, "flipped header bytes not rejected as header errors");
  c.expect(throws_as([&] { parse_checkpoint(bytes.substr(0, header_end + 100)); }, "truncated", c),
           "truncated payload");
  c.expect(throws_as([&] { parse_checkpoint(bytes.substr(0, bytes.size() - 1)); }, "truncated", c),
           "one byte short");
  const auto kernel_line = "backbone.kernel=" + std::to_string(m.backbone.config().kernel) + "\n";
  c.expect(throws_as([&] { parse_checkpoint(reheader(bytes, kernel_line, "backbone.kernel=5\n")); }, "shape", c),
           "kernel changed in header");

  // cross-process: the binary's checkpoint loads here and re-serializes to the same bytes
  const auto run_dir = work / "run_a";
  if (!fs::exists(run_dir / "model.ckpt")) {
    const auto failure = run_pipeline(binary, run_dir);
    c.expect(failure.empty(), "pipeline: " + failure);
    if (!failure.empty()) return true;
  }
  const auto written = read_text_file((run_dir / "model.ckpt").string());
  auto from_binary = load_checkpoint((run_dir / "model.ckpt").string());
  c.expect(serialize_checkpoint(from_binary) == written, "binary checkpoint does not round-trip in-process");
  const auto data = load_dataset((run_dir / "data" / "manifest.tsv").string());
  EvalOptions eo;
  eo.noise_seed = 7;
  const auto report = format_metrics_report(evaluate(from_binary, make_image_set(data, Split::test), eo));
  c.expect(report == read_text_file((run_dir / "eval.tsv").string()), "in-process eval differs from the binary's");
  c.note("trained 64x64 model bit-exact; 4 header flips, 2 truncations, 1 shape edit rejected; binary checkpoint agrees");
  return true;
}

bool criterion_determinism(Check& c, const std::string& binary, const fs::path& work) {
  const auto a = work / "run_a", b = work / "run_b";
  if (!fs::exists(a / "model.ckpt")) {
    const auto failure = run_pipeline(binary, a);
    c.expect(failure.empty(), "run a: " + failure);
  }
  const auto failure = run_pipeline(binary, b);
  c.expect(failure.empty(), "run b: " + failure);
  if (!c.failures.empty()) return true;
  const auto fa = files_under(a), fb = files_under(b);
  c.expect(fa.size() == fb.size(), "file counts differ");
  std::size_t checked = 0;
  for (const auto& [name, content] : fa) {
    const auto it = fb.find(name);
    c.expect(it != fb.end() && it->second == content, name + " differs");
    ++checked;
  }
  for (const char* must : {"backbone.ckpt", "model.ckpt", "backbone.ckpt.grid.tsv", "model.ckpt.log.tsv", "eval.tsv",
                           "compare.tsv", "explain/heatmap.pgm", "explain/overlay.pgm"})
    c.expect(fa.count(must) == 1, std::string("missing ") + must);
  c.note(std::to_string(checked) + " files byte-identical across two runs");
  return true;
}

// ---------------------------------------------------------------- 11

std::vector<Tensor<float>> images_of(const std::vector<Sample>& s) {
  std::vector<Tensor<float>> out;
  for (const auto& x : s) out.push_back(x.image);
  return out;
}

bool criterion_relatedness(Check& c) {
  std::ostringstream detail;
  for (auto mode : {GenMode::seg_cls, GenMode::quality, GenMode::flow3}) {
    SyntheticConfig sc;
    sc.mode = mode;
    sc.image_size = 64;
    sc.count = 80;
    sc.seed = 1;
    const auto a = images_of(generate(sc));
    sc.seed = 2;
    const auto b = images_of(generate(sc));
    const auto self = assess_relatedness(a, a);
    c.expect(self.divergence == 0.0 && self.verdict == Verdict::related, "divergence(A, A) != 0");
    const auto same = assess_relatedness(a, b);
    c.expect(same.verdict == Verdict::related, std::string(to_string(mode)) + " seeds 1/2 unrelated");
    const auto noise = assess_relatedness(a, images_of(generate_uniform_noise(80, 64, 3)));
    c.expect(noise.verdict == Verdict::unrelated, std::string(to_string(mode)) + " vs noise related");
    detail << to_string(mode) << ": same-gen " << fmt(same.divergence, 3) << ", noise " << fmt(noise.divergence, 3)
           << " ";
  }
  c.note(detail.str());
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <urep binary> [--only N,M,...]\n";
    return 2;
  }
  const std::string binary = fs::absolute(argv[1]).string();
  std::set<int> only;
  for (int i = 2; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only")
      for (const auto& n : split(argv[i + 1], ',')) only.insert(std::stoi(n));

  const auto work = fs::temp_directory_path() / ("urep_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<bool(Check&)>>> criteria{
      {"gradient suite", criterion_gradients},
      {"loss oracles", criterion_loss_oracles},
      {"metric oracles", criterion_metric_oracles},
      {"grid-search exactness", criterion_grid_search},
      {"denoising backbone", criterion_denoising},
      {"task heads", criterion_heads},
      {"shared vs traditional", [&](Check& c) { return criterion_compare(c, work); }},
      {"grad-cam properties", criterion_grad_cam},
      {"checkpoint round trip", [&](Check& c) { return criterion_checkpoint(c, binary, work); }},
      {"determinism", [&](Check& c) { return criterion_determinism(c, binary, work); }},
      {"relatedness", criterion_relatedness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(number)) continue;
    Check c;
    const auto t0 = Clock::now();
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = c.failures.empty();
    failed += !ok;
    std::cout << "criterion " << number << " " << criteria[i].first << ": " << (ok ? "PASS" : "FAIL") << " ["
              << fmt(seconds_since(t0), 3) << " s]";
    for (const auto& n : c.notes) std::cout << " " << n;
    std::cout << "\n";
    const std::size_t shown = std::min<std::size_t>(c.failures.size(), 10);
    for (std::size_t k = 0; k < shown; ++k) std::cout << "    " << c.failures[k] << "\n";
    if (c.failures.size() > shown) std::cout << "    ... " << c.failures.size() - shown << " more\n";
    std::cout.flush();
  }
  fs::remove_all(work);
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}
