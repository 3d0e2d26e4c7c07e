#include "toolgcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "toolgcn/error.hpp"
#include "toolgcn/ops.hpp"
#include "toolgcn/rng.hpp"

namespace toolgcn {

namespace {

struct Site {
  std::size_t tensor;
  std::size_t index;
};

constexpr std::size_t kTriesPerTensor = 32;

// Candidate order: up to kTriesPerTensor elements of each tensor (so every
// tensor is touched even when some candidates straddle a kink), then the
// remaining elements in shuffled order.
struct SitePlan {
  std::vector<std::vector<Site>> per_tensor;
  std::vector<Site> fill;
};

SitePlan plan_sites(std::span<const NamedTensor> params, const GradCheckOptions& opt) {
  SitePlan plan;
  plan.per_tensor.resize(params.size());
  Rng rng(derive_seed(opt.seed, 0x67636b));
  std::size_t total = 0;
  for (const auto& p : params) total += p.value.size();
  std::vector<bool> taken(total, false);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const std::size_t n = params[t].value.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i = 0; i < std::min(n, kTriesPerTensor); ++i) {
      plan.per_tensor[t].push_back({t, idx[i]});
      taken[offset + idx[i]] = true;
    }
    offset += n;
  }
  std::vector<std::size_t> rest;
  for (std::size_t j = 0; j < total; ++j)
    if (!taken[j]) rest.push_back(j);
  rng.shuffle(std::span<std::size_t>(rest));
  std::vector<std::size_t> starts;
  offset = 0;
  for (const auto& p : params) {
    starts.push_back(offset);
    offset += p.value.size();
  }
  for (std::size_t j : rest) {
    const std::size_t t = static_cast<std::size_t>(std::upper_bound(starts.begin(), starts.end(), j) - starts.begin()) - 1;
    plan.fill.push_back({t, j - starts[t]});
  }
  return plan;
}

struct Evaluation {
  double value;
  std::vector<bool> signs;
};

// Number of relu inputs whose sign differs between two evaluations.
std::size_t sign_flips(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) return std::max(a.size(), b.size());
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

Evaluation evaluate(const ScalarFunction& f, const std::vector<Tensor>& values) {
  ops::ReluSignProbe probe;
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(values.size());
  for (const auto& v : values) vars.push_back(tape.constant(v));
  const Var out = f(tape, vars);
  return {tape.value(out)[0], probe.take()};
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << ": checked " << checked << " elements, max error "
     << max_error;
  if (kinks) os << " (" << kinks << " replaced: perturbation crossed a ReLU kink)";
  for (const auto& t : unchecked) os << "\n  no element checked in " << t;
  for (const auto& e : forced) os << "\n  " << e << " checked across a kink (no kink-free candidate in its tensor)";
  if (nonfinite) os << "\n  non-finite: " << *nonfinite;
  for (const auto& e : worst)
    os << "\n  " << e.param << "[" << e.index << "] analytic=" << e.analytic
       << " numeric=" << e.numeric << " err=" << e.error;
  return os.str();
}

GradCheckReport grad_check(const ScalarFunction& f, std::span<const NamedTensor> params,
                           const GradCheckOptions& opt) {
  if (!(opt.step > 0.0)) throw ValidationError("grad_check: step must be positive");
  GradCheckReport report;

  for (const auto& p : params) {
    if (!p.value.all_finite()) {
      report.nonfinite = "parameter " + p.name;
      return report;
    }
  }

  Tape tape(true);
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.parameter(p.value));
  const Var out = f(tape, vars);
  if (tape.value(out).size() != 1) throw ValidationError("grad_check: function is not scalar");
  if (!tape.value(out).all_finite()) {
    report.nonfinite = "function value";
    return report;
  }
  tape.backward(out);
  std::vector<Tensor> grads;
  for (std::size_t t = 0; t < params.size(); ++t) {
    grads.push_back(tape.grad(vars[t]));
    if (!grads.back().all_finite()) {
      report.nonfinite = "analytic gradient of " + params[t].name;
      return report;
    }
  }

  std::vector<Tensor> values;
  for (const auto& p : params) values.push_back(p.value);
  const std::vector<bool> base = evaluate(f, values).signs;

  std::vector<GradCheckEntry> entries;
  std::vector<std::size_t> per_tensor(params.size(), 0);
  // Returns false when the site straddles a kink and was skipped. `forced`
  // checks it regardless. `flips` receives the number of relu inputs the
  // perturbation moved across zero.
  auto check = [&](const Site& s, bool forced = false, std::size_t* flips = nullptr) {
    double& w = values[s.tensor][s.index];
    const double saved = w;
    w = saved + opt.step;
    const Evaluation plus = evaluate(f, values);
    w = saved - opt.step;
    const Evaluation minus = evaluate(f, values);
    w = saved;
    const std::string& name = params[s.tensor].name;
    if (!std::isfinite(plus.value) || !std::isfinite(minus.value))
      throw NumericalError("function value when perturbing " + name + "[" + std::to_string(s.index) + "]");
    const std::size_t crossed = sign_flips(plus.signs, base) + sign_flips(minus.signs, base);
    if (flips) *flips = crossed;
    const bool kink = crossed > 0;
    if (opt.skip_kinks && kink && !forced) {
      ++report.kinks;
      return false;
    }
    if (opt.skip_kinks && kink) report.forced.push_back(name + "[" + std::to_string(s.index) + "]");
    GradCheckEntry e;
    e.param = name;
    e.index = s.index;
    e.analytic = grads[s.tensor][s.index];
    e.numeric = (plus.value - minus.value) / (2.0 * opt.step);
    e.error = std::abs(e.analytic - e.numeric) / std::max(1.0, std::abs(e.numeric));
    report.max_error = std::max(report.max_error, e.error);
    entries.push_back(std::move(e));
    ++per_tensor[s.tensor];
    return true;
  };

  try {
    const SitePlan plan = plan_sites(params, opt);
    std::size_t total = 0;
    for (const auto& p : params) total += p.value.size();
    const bool all = opt.max_elements == 0 || total <= opt.max_elements;
    if (all) {
      std::vector<std::size_t> fewest(params.size(), std::numeric_limits<std::size_t>::max());
      std::vector<Site> best(params.size());
      auto visit = [&](const Site& s) {
        std::size_t flips = 0;
        if (!check(s, false, &flips) && flips < fewest[s.tensor]) {
          fewest[s.tensor] = flips;
          best[s.tensor] = s;
        }
      };
      for (const auto& sites : plan.per_tensor)
        for (const Site& s : sites) visit(s);
      for (const Site& s : plan.fill) visit(s);
      for (std::size_t t = 0; t < params.size(); ++t)
        if (per_tensor[t] == 0 && !plan.per_tensor[t].empty()) check(best[t], true);
    } else {
      // Candidates not consumed by the first pass join the fill.
      std::vector<Site> rest;
      for (std::size_t t = 0; t < params.size(); ++t) {
        const auto& sites = plan.per_tensor[t];
        // Without a kink-free candidate, check the one crossing the fewest.
        std::size_t i = 0, best = 0, fewest = std::numeric_limits<std::size_t>::max(), flips = 0;
        for (; i < sites.size() && !check(sites[i], false, &flips); ++i)
          if (flips < fewest) std::tie(best, fewest) = std::make_tuple(i, flips);
        if (i < sites.size())
          rest.insert(rest.end(), sites.begin() + i + 1, sites.end());
        else if (!sites.empty())
          check(sites[best], true);
      }
      rest.insert(rest.end(), plan.fill.begin(), plan.fill.end());
      Rng order(derive_seed(opt.seed, 0x66696c));
      order.shuffle(std::span<Site>(rest));
      for (std::size_t j = 0; j < rest.size() && entries.size() < opt.max_elements; ++j) check(rest[j]);
    }
  } catch (const NumericalError& e) {
    report.nonfinite = e.what();
    report.checked = entries.size();
    return report;
  }

  for (std::size_t t = 0; t < params.size(); ++t)
    if (per_tensor[t] == 0 && params[t].value.size() > 0) report.unchecked.push_back(params[t].name);
  report.checked = entries.size();
  std::sort(entries.begin(), entries.end(),
            [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.error > b.error; });
  if (entries.size() > opt.worst_count) entries.resize(opt.worst_count);
  report.worst = std::move(entries);
  report.passed = report.max_error <= opt.tol && report.checked > 0 && report.unchecked.empty();
  return report;
}

}  // namespace toolgcn
