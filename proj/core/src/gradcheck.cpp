#include "fcf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <thread>

#include "fcf/errors.hpp"

namespace fcf {

namespace {

struct Probe {
  size_t param;   // index into task.params
  int64_t elem;   // element index within the parameter
};

std::vector<Probe> select_probes(
    const std::vector<std::pair<std::string, Tensor>>& params,
    int64_t max_per_param, uint64_t seed) {
  std::vector<Probe> probes;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const int64_t n = params[pi].second.numel();
    if (n <= max_per_param) {
      for (int64_t e = 0; e < n; ++e) probes.push_back({pi, e});
    } else {
      Rng rng(derive_seed(seed, 0x70726f6265ULL, pi));
      std::vector<int64_t> chosen;
      chosen.reserve(static_cast<size_t>(max_per_param));
      // Floyd's sampling: max_per_param distinct indices out of n.
      std::map<int64_t, bool> taken;
      for (int64_t j = n - max_per_param; j < n; ++j) {
        int64_t t = rng.uniform_int(j + 1);
        if (taken.count(t)) t = j;
        taken[t] = true;
        chosen.push_back(t);
      }
      std::sort(chosen.begin(), chosen.end());
      for (int64_t e : chosen) probes.push_back({pi, e});
    }
  }
  return probes;
}

double eval_loss(const std::function<Tensor()>& loss) {
  NoGradGuard ng;
  return static_cast<double>(loss().item());
}

void run_probe_range(const GradCheckTask& task,
                     const std::vector<Probe>& probes, size_t begin,
                     size_t end,
                     const std::vector<std::vector<float>>& analytic, double h,
                     double tol, std::vector<GradCheckFailure>& failures,
                     double& max_rel_err) {
  for (size_t i = begin; i < end; ++i) {
    const Probe& pr = probes[i];
    const auto& [name, tensor] = task.params[pr.param];
    auto w = const_cast<Tensor&>(tensor).mutable_data();
    const float orig = w[static_cast<size_t>(pr.elem)];
    const double step = h * std::max(1.0, std::abs(static_cast<double>(orig)));

    w[static_cast<size_t>(pr.elem)] = static_cast<float>(orig + step);
    const double f_plus = eval_loss(task.loss);
    w[static_cast<size_t>(pr.elem)] = static_cast<float>(orig - step);
    const double f_minus = eval_loss(task.loss);
    w[static_cast<size_t>(pr.elem)] = orig;

    const double numeric = (f_plus - f_minus) / (2.0 * step);
    const double a =
        static_cast<double>(analytic[pr.param][static_cast<size_t>(pr.elem)]);
    const double rel =
        std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
    max_rel_err = std::max(max_rel_err, rel);
    if (!(rel <= tol) || !std::isfinite(numeric))
      failures.push_back({name, pr.elem, a, numeric, rel});
  }
}

GradCheckReport run_grad_check(
    const GradCheckTask& reference,
    const std::vector<GradCheckTask>& worker_tasks, double h, double tol,
    int64_t max_per_param, uint64_t seed) {
  // Analytic gradients from one backward pass on the reference instance.
  Tensor loss = reference.loss();
  if (!std::isfinite(loss.item()))
    throw NumericError("grad_check: loss is non-finite");
  for (auto& [name, t] : reference.params) const_cast<Tensor&>(t).zero_grad();
  loss.backward();

  std::vector<std::vector<float>> analytic(reference.params.size());
  for (size_t pi = 0; pi < reference.params.size(); ++pi) {
    auto g = reference.params[pi].second.grad();
    if (g.empty())
      analytic[pi].assign(
          static_cast<size_t>(reference.params[pi].second.numel()), 0.0f);
    else
      analytic[pi].assign(g.begin(), g.end());
  }

  auto probes = select_probes(reference.params, max_per_param, seed);

  GradCheckReport report;
  report.elements_checked = static_cast<int64_t>(probes.size());

  const size_t nworkers = worker_tasks.empty() ? 1 : worker_tasks.size();
  std::vector<std::vector<GradCheckFailure>> fails(nworkers);
  std::vector<double> maxes(nworkers, 0.0);

  if (worker_tasks.empty()) {
    run_probe_range(reference, probes, 0, probes.size(), analytic, h, tol,
                    fails[0], maxes[0]);
  } else {
    const size_t chunk = (probes.size() + nworkers - 1) / nworkers;
    std::vector<std::thread> pool;
    for (size_t w = 0; w < nworkers; ++w) {
      const size_t begin = w * chunk;
      const size_t end = std::min(probes.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, w, begin, end] {
        run_probe_range(worker_tasks[w], probes, begin, end, analytic, h, tol,
                        fails[w], maxes[w]);
      });
    }
    for (auto& t : pool) t.join();
  }

  for (size_t w = 0; w < nworkers; ++w) {
    report.max_rel_err = std::max(report.max_rel_err, maxes[w]);
    report.failures.insert(report.failures.end(), fails[w].begin(),
                           fails[w].end());
  }
  return report;
}

}  // namespace

std::string GradCheckReport::summary() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "grad_check: %lld elements, max rel err %.3e, %zu failures",
                static_cast<long long>(elements_checked), max_rel_err,
                failures.size());
  std::string out = buf;
  const size_t show = std::min<size_t>(failures.size(), 8);
  for (size_t i = 0; i < show; ++i) {
    const auto& f = failures[i];
    std::snprintf(buf, sizeof(buf),
                  "\n  %s[%lld]: analytic %.6g vs numeric %.6g (rel %.3e)",
                  f.param.c_str(), static_cast<long long>(f.index), f.analytic,
                  f.numeric, f.rel_err);
    out += buf;
  }
  if (failures.size() > show) out += "\n  ...";
  return out;
}

GradCheckReport grad_check(const std::function<GradCheckTask()>& factory,
                           double h, double tol, int64_t max_per_param,
                           uint64_t seed, int threads) {
  GradCheckTask reference = factory();
  std::vector<GradCheckTask> workers;
  const int t = std::max(1, threads);
  workers.reserve(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) workers.push_back(factory());
  return run_grad_check(reference, workers, h, tol, max_per_param, seed);
}

GradCheckReport grad_check(const GradCheckTask& task, double h, double tol,
                           int64_t max_per_param, uint64_t seed) {
  return run_grad_check(task, {}, h, tol, max_per_param, seed);
}

}  // namespace fcf
