#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "model.hpp"
#include "objective.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace dforest {

namespace detail {

struct BackwardScratch {
  std::vector<double> dpred, dy, domega, dgate_in, dhidden, ddesc;
  std::vector<double> dprob, reach, down;

  void shape(const Parameters& p) {
    const std::size_t k = p.forest.size(), f = p.forest.outputs(), d = p.forest.depth();
    dpred.resize(f);
    dy.resize(k * f);
    domega.resize(k);
    dgate_in.resize(k);
    dhidden.resize(p.attention.hidden());
    ddesc.resize(k);
    dprob.resize(leaf_count(d));
    reach.resize(2 * leaf_count(d));
    down.resize(2 * leaf_count(d));
  }
};

// Gate Jacobian-vector product: d(gate_in) from d(omega).
inline void gate_backward(GateKind gate, std::span<const double> omega,
                          std::span<const double> domega, std::span<double> dgate_in) {
  if (gate == GateKind::sigmoid) {
    for (std::size_t h = 0; h < omega.size(); ++h)
      dgate_in[h] = domega[h] * omega[h] * (1.0 - omega[h]);
  } else {
    double dot = 0;
    for (std::size_t h = 0; h < omega.size(); ++h) dot += omega[h] * domega[h];
    for (std::size_t h = 0; h < omega.size(); ++h) dgate_in[h] = omega[h] * (domega[h] - dot);
  }
}

// Accumulates one sample's gradient into `grads`.
inline void backward_sample(const Parameters& params, const ForwardTrace& trace,
                            const Batch& batch, const TaskBinding& binding, std::size_t i,
                            double scale, BackwardScratch& s, Parameters& grads) {
  const auto& forest = params.forest;
  const auto& att = params.attention;
  const std::size_t k = forest.size(), f_count = forest.outputs();
  const std::size_t depth = forest.depth(), nodes = internal_node_count(depth);
  const std::size_t leaves = leaf_count(depth);

  sample_loss_gradient<double>(binding, trace.predictions.row(i), batch.targets[i], s.dpred);
  for (auto& v : s.dpred) v *= scale;

  const double inv_k = 1.0 / double(k);
  if (att.enabled()) {
    auto omega = trace.attention.weights.row(i);
    for (std::size_t h = 0; h < k; ++h) {
      auto y = trace.forest.responses.slice(i, h);
      double dw = 0;
      for (std::size_t f = 0; f < f_count; ++f) {
        dw += s.dpred[f] * y[f];
        s.dy[h * f_count + f] = inv_k * omega[h] * s.dpred[f];
      }
      s.domega[h] = inv_k * dw;
    }
    gate_backward(att.gate, omega, s.domega, s.dgate_in);

    auto hidden_pre = trace.attention.hidden_pre.row(i);
    auto desc = trace.attention.descriptors.row(i);
    const std::size_t hidden = att.hidden();
    std::fill(s.dhidden.begin(), s.dhidden.end(), 0.0);
    for (std::size_t h = 0; h < k; ++h) {
      auto w2 = att.W2.row(h);
      auto dw2 = grads.attention.W2.row(h);
      for (std::size_t u = 0; u < hidden; ++u) {
        dw2[u] += s.dgate_in[h] * std::max(0.0, hidden_pre[u]);
        s.dhidden[u] += w2[u] * s.dgate_in[h];
      }
    }
    std::fill(s.ddesc.begin(), s.ddesc.end(), 0.0);
    for (std::size_t u = 0; u < hidden; ++u) {
      if (!(hidden_pre[u] > 0.0)) continue;
      auto w1 = att.W1.row(u);
      auto dw1 = grads.attention.W1.row(u);
      for (std::size_t h = 0; h < k; ++h) {
        dw1[h] += s.dhidden[u] * desc[h];
        s.ddesc[h] += w1[h] * s.dhidden[u];
      }
    }
    const double inv_f = 1.0 / double(f_count);
    for (std::size_t h = 0; h < k; ++h)
      for (std::size_t f = 0; f < f_count; ++f) s.dy[h * f_count + f] += s.ddesc[h] * inv_f;
  } else {
    for (std::size_t h = 0; h < k; ++h)
      for (std::size_t f = 0; f < f_count; ++f) s.dy[h * f_count + f] = inv_k * s.dpred[f];
  }

  auto x = batch.rows.row(i);
  for (std::size_t h = 0; h < k; ++h) {
    const auto& tree = forest.trees[h];
    auto& gtree = grads.forest.trees[h];
    auto g = trace.forest.gates.slice(i, h);
    auto p = trace.forest.probabilities.slice(i, h);
    const double* dy = s.dy.data() + h * f_count;

    for (std::size_t j = 0; j < leaves; ++j) {
      auto q = tree.Q.row(j);
      auto dq = gtree.Q.row(j);
      double dp = 0;
      for (std::size_t f = 0; f < f_count; ++f) {
        dq[f] += p[j] * dy[f];
        dp += q[f] * dy[f];
      }
      s.down[leaves + j] = dp;
    }
    // reach[n]: probability of arriving at heap node n. down[n]: upstream
    // gradient routed below n, weighted by the conditional path product
    // below n. Neither divides by a branch factor.
    s.reach[1] = 1.0;
    for (std::size_t n = 1; n < leaves / 2; ++n) {
      s.reach[2 * n] = s.reach[n] * (1.0 - g[n - 1]);
      s.reach[2 * n + 1] = s.reach[n] * g[n - 1];
    }
    for (std::size_t n = nodes; n >= 1; --n)
      s.down[n] = (1.0 - g[n - 1]) * s.down[2 * n] + g[n - 1] * s.down[2 * n + 1];

    for (std::size_t n = 1; n <= nodes; ++n) {
      const double dg = s.reach[n] * (s.down[2 * n + 1] - s.down[2 * n]);
      const double dz = dg * g[n - 1] * (1.0 - g[n - 1]);
      if (dz == 0.0) continue;
      auto da = gtree.A.row(n - 1);
      for (std::size_t m = 0; m < x.size(); ++m) da[m] += dz * x[m];
      gtree.b[n - 1] -= dz;
    }
  }
}

}  // namespace detail

// Writes dL/dtheta for the mean batch loss into `out` (which is zeroed
// first). With threads == 1 samples are accumulated in ascending order.
inline void backward_pass(const Parameters& params, const ForwardTrace& trace,
                          const Batch& batch, const TaskBinding& binding, GradientBuffer& out,
                          std::size_t threads = 1) {
  const std::size_t n = batch.size();
  if (trace.batch_size() != n || trace.forest.responses.dim0() != n)
    throw Error("backward: trace covers " + std::to_string(trace.batch_size()) +
                " samples but batch has " + std::to_string(n));
  if (batch.rows.cols() != params.forest.features() ||
      trace.forest.responses.dim1() != params.forest.size() ||
      trace.predictions.cols() != binding.outputs())
    throw Error("backward: trace, batch and parameters have inconsistent shapes");
  out.zero();
  if (n == 0) return;
  const double scale = 1.0 / double(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    detail::BackwardScratch s;
    s.shape(params);
    for (std::size_t i = 0; i < n; ++i)
      detail::backward_sample(params, trace, batch, binding, i, scale, s, out.values);
    return;
  }
  std::vector<GradientBuffer> partial(threads, GradientBuffer::like(params));
  parallel_chunks(n, threads, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    detail::BackwardScratch s;
    s.shape(params);
    for (std::size_t i = begin; i < end; ++i)
      detail::backward_sample(params, trace, batch, binding, i, scale, s,
                              partial[chunk].values);
  });
  for (const auto& part : partial) out.add(part);
}

// Mean batch loss of `params` on `batch` (forward pass only).
inline double batch_loss(const Parameters& params, const Batch& batch,
                         const TaskBinding& binding) {
  ForwardTrace trace;
  forward(params, batch.rows, trace);
  return loss(trace.predictions, batch.targets, binding).mean;
}

namespace detail {

// Mean batch loss in precision T, one sample at a time.
template <std::floating_point T>
T probe_loss(const Parameters& params, const Batch& batch, const TaskBinding& binding) {
  const auto& forest = params.forest;
  const std::size_t k = forest.size(), f_count = forest.outputs(), m = forest.features();
  const std::size_t depth = forest.depth();
  std::vector<T> x(m), g(internal_node_count(depth)), p(leaf_count(depth)), y(k * f_count);
  std::vector<T> z(k), hidden(params.attention.hidden()), gate_in(k), omega(k, T(1)),
      pred(f_count);
  T total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto row = batch.rows.row(i);
    for (std::size_t j = 0; j < m; ++j) x[j] = T(row[j]);
    for (std::size_t h = 0; h < k; ++h) {
      gating_values<T>(forest.trees[h], x, g);
      leaf_probabilities<T>(g, depth, p);
      tree_response<T>(forest.trees[h], p, std::span<T>(y).subspan(h * f_count, f_count));
    }
    if (params.attention.enabled()) {
      squeeze<T>(y, f_count, z);
      regulate<T>(params.attention, z, hidden, gate_in, omega);
    }
    std::fill(pred.begin(), pred.end(), T(0));
    for (std::size_t h = 0; h < k; ++h)
      for (std::size_t f = 0; f < f_count; ++f) pred[f] += omega[h] * y[h * f_count + f];
    for (auto& v : pred) v /= T(k);
    total += sample_loss<T>(binding, std::span<const T>(pred), batch.targets[i]);
  }
  return total / T(batch.size());
}

}  // namespace detail

struct GroupCheck {
  ParamGroup group;
  std::size_t probed = 0;
  double max_rel_error = 0;
  double mean_rel_error = 0;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;
  double max_rel_error = 0;
  double mean_rel_error = 0;
  std::string worst;  // location of the worst scalar

  bool passed(double tolerance) const {
    return std::all_of(groups.begin(), groups.end(),
                       [&](const GroupCheck& g) { return g.max_rel_error < tolerance; });
  }

  std::vector<ParamGroup> failing(double tolerance) const {
    std::vector<ParamGroup> out;
    for (const auto& g : groups)
      if (!(g.max_rel_error < tolerance)) out.push_back(g.group);
    return out;
  }

  std::string table() const {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof line, "%-6s %8s %14s %14s\n", "group", "probed", "max_rel_err",
                  "mean_rel_err");
    os << line;
    for (const auto& g : groups) {
      std::snprintf(line, sizeof line, "%-6s %8zu %14.3e %14.3e\n",
                    std::string(to_string(g.group)).c_str(), g.probed, g.max_rel_error,
                    g.mean_rel_error);
      os << line;
    }
    return os.str();
  }
};

struct FiniteDifferenceOptions {
  double eps = 1e-5;
  // Probe every scalar when the model has at most this many; otherwise a
  // seeded random subset of this size.
  std::size_t max_probes = 4096;
  std::uint64_t seed = 0;
};

// |a - n| / max(|a|, |n|, 1e-8).
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Central differences of the mean batch loss against an analytic gradient.
inline GradcheckReport finite_difference_check(Parameters params, const Batch& batch,
                                               const TaskBinding& binding,
                                               const GradientBuffer& analytic,
                                               FiniteDifferenceOptions opt = {}) {
  if (opt.max_probes < 200) throw Error("finite_difference_check needs max_probes >= 200");
  struct Slot {
    ParamGroup group;
    std::size_t tree;
    std::span<double> values;
    std::span<const double> grads;
  };
  std::vector<Slot> slots;
  for_each_group(params, [&](ParamGroup g, std::size_t h, std::span<double> s) {
    slots.push_back({g, h, s, {}});
  });
  std::size_t idx = 0;
  for_each_group(analytic.values, [&](ParamGroup, std::size_t, std::span<const double> s) {
    if (idx >= slots.size() || s.size() != slots[idx].values.size())
      throw Error("gradient buffer does not mirror the parameters");
    slots[idx++].grads = s;
  });

  // (slot, offset) pairs to probe.
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t s = 0; s < slots.size(); ++s)
    for (std::size_t j = 0; j < slots[s].values.size(); ++j) probes.emplace_back(s, j);
  if (probes.size() > opt.max_probes) {
    Engine rng(mix_seed(opt.seed, 77));
    std::shuffle(probes.begin(), probes.end(), rng);
    probes.resize(opt.max_probes);
    std::sort(probes.begin(), probes.end());
  }

  GradcheckReport report;
  std::vector<double> sums;
  double worst = -1, total = 0;
  for (auto [s, j] : probes) {
    auto& slot = slots[s];
    auto it = std::find_if(report.groups.begin(), report.groups.end(),
                           [&](const GroupCheck& g) { return g.group == slot.group; });
    if (it == report.groups.end()) {
      report.groups.push_back({slot.group});
      sums.push_back(0);
      it = report.groups.end() - 1;
    }
    const auto gi = static_cast<std::size_t>(it - report.groups.begin());

    auto where = [&] {
      return std::string(to_string(slot.group)) + "[tree " + std::to_string(slot.tree) +
             "][" + std::to_string(j) + "]";
    };
    // Probe losses in extended precision so that small gradients are not
    // swamped by rounding in the loss itself.
    const double saved = slot.values[j];
    const double hi = saved + opt.eps, lo = saved - opt.eps;
    slot.values[j] = hi;
    const long double up = detail::probe_loss<long double>(params, batch, binding);
    slot.values[j] = lo;
    const long double down = detail::probe_loss<long double>(params, batch, binding);
    slot.values[j] = saved;
    if (!std::isfinite(static_cast<double>(up)) || !std::isfinite(static_cast<double>(down)))
      throw Error("non-finite loss while probing " + where());

    const double numeric = static_cast<double>((up - down) / ((long double)hi - lo));
    const double a = slot.grads[j];
    const double rel = (a == 0.0 && std::abs(numeric) < 1e-10) ? 0.0 : relative_error(a, numeric);
    it->probed++;
    it->max_rel_error = std::max(it->max_rel_error, rel);
    sums[gi] += rel;
    total += rel;
    if (rel > worst) {
      worst = rel;
      report.worst = where();
    }
  }
  for (std::size_t g = 0; g < report.groups.size(); ++g) {
    auto& gc = report.groups[g];
    gc.mean_rel_error = sums[g] / double(gc.probed);
    report.max_rel_error = std::max(report.max_rel_error, gc.max_rel_error);
  }
  report.mean_rel_error = probes.empty() ? 0.0 : total / double(probes.size());
  return report;
}

// Forward + backward + finite-difference check in one call.
inline GradcheckReport gradcheck(const Parameters& params, const Batch& batch,
                                 const TaskBinding& binding, FiniteDifferenceOptions opt = {}) {
  ForwardTrace trace;
  forward(params, batch.rows, trace);
  auto grads = GradientBuffer::like(params);
  backward_pass(params, trace, batch, binding, grads);
  return finite_difference_check(params, batch, binding, grads, opt);
}

// A small random model and batch for gradient checks. Leaf responses and
// thresholds get unit-scale noise so every parameter group carries signal.
struct GradcheckProblem {
  Parameters params;
  Batch batch;
  TaskBinding binding;
};

inline GradcheckProblem random_gradcheck_problem(const ModelShape& shape,
                                                 const TaskBinding& binding,
                                                 std::size_t batch_size, std::uint64_t seed) {
  if (shape.outputs != binding.outputs())
    throw Error("gradcheck: model outputs do not match the task");
  GradcheckProblem prob{initialize_parameters(shape, seed), {}, binding};
  Engine rng(mix_seed(seed, 99));
  std::normal_distribution<double> unit(0.0, 1.0);
  for (auto& t : prob.params.forest.trees) {
    for (auto& b : t.b) b = 0.3 * unit(rng);
    for (auto& q : t.Q.flat()) q = unit(rng);
  }
  prob.batch.rows = Matrix<double>(batch_size, shape.features);
  for (auto& x : prob.batch.rows.flat()) x = unit(rng);
  prob.batch.targets.resize(batch_size);
  prob.batch.ids.resize(batch_size);
  std::uniform_int_distribution<int> label(0, std::max(1, binding.classes) - 1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    prob.batch.targets[i] = binding.kind == TargetKind::regression ? unit(rng) : label(rng);
    prob.batch.ids[i] = i;
  }
  return prob;
}

}  // namespace dforest
