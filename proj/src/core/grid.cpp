#include "gpusim/core/grid.hpp"

#include <exception>

#include <omp.h>

namespace gpusim {

CtaRunStatus run_cta(CtaState& cta, const KernelEnv& env, std::optional<uint64_t> budget, const StepObserver* observer) {
  const uint32_t n = static_cast<uint32_t>(cta.warps.size());
  StepResult r;
  auto step = [&](WarpState& w) {
    step_warp(cta, w, env, r);
    if (observer && r.kind == StepResult::Kind::committed) (*observer)(cta, w, r);
  };
  while (true) {
    if (cta.done()) return CtaRunStatus::completed;
    bool found = false;
    for (uint32_t i = 0; i < n; ++i) {
      const uint32_t w = (cta.rr_cursor + i) % n;
      if (!cta.warps[w].done() && !cta.warps[w].at_barrier) {
        cta.rr_cursor = w;
        found = true;
        break;
      }
    }
    if (!found) {
      if (!release_barrier(cta)) throw DeadlockError(barrier_deadlock_report(env, cta));
      for (auto& w : cta.warps) step(w);  // each warp consumes its release
      cta.rr_cursor = 0;
      continue;
    }
    WarpState& w = cta.warps[cta.rr_cursor];
    while (true) {
      if (budget && cta.committed >= *budget && cta.at_safe_point()) return CtaRunStatus::frozen;
      step(w);
      if (r.kind != StepResult::Kind::committed || w.done()) break;
    }
    cta.rr_cursor = (cta.rr_cursor + 1) % n;
  }
}

void validate_launch(const KernelEnv& env) {
  if (env.grid.count() == 0 || env.block.count() == 0) throw LaunchError("launch dimensions must be positive");
  if (env.block.count() > 1024) throw LaunchError("block has more than 1024 threads");
  if (env.params.size() != env.kernel->param_bytes())
    throw LaunchError("kernel '" + env.kernel->name + "' expects " + std::to_string(env.kernel->param_bytes()) +
                      " parameter bytes, got " + std::to_string(env.params.size()));
}

GridResult run_grid_serial(const KernelEnv& env, const StepObserver* observer) {
  validate_launch(env);
  GridResult g;
  const uint64_t n = env.grid.count();
  for (uint64_t i = 0; i < n; ++i) {
    CtaState c = make_cta(env, i);
    run_cta(c, env, std::nullopt, observer);
    g.ctas.push_back({c.ctaid, c.committed, true});
    g.committed += c.committed;
  }
  return g;
}

GridResult run_grid(const KernelEnv& env) {
  validate_launch(env);
  const int64_t n = static_cast<int64_t>(env.grid.count());
  std::vector<CtaOutcome> out(static_cast<size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < n; ++i) {
    try {
      CtaState c = make_cta(env, static_cast<uint64_t>(i));
      run_cta(c, env);
      out[static_cast<size_t>(i)] = {c.ctaid, c.committed, true};
    } catch (...) {
      errors[static_cast<size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  GridResult g;
  g.ctas = std::move(out);
  for (const auto& c : g.ctas) g.committed += c.committed;
  return g;
}

}  // namespace gpusim
