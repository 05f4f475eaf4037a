#include "cloudadv/de.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace cloudadv::de {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t draw_excluding(Rng& rng, std::size_t n, std::initializer_list<std::size_t> taken) {
  for (;;) {
    const auto k = static_cast<std::size_t>(uniform_index(rng, n));
    if (std::find(taken.begin(), taken.end(), k) == taken.end()) return k;
  }
}

// Runs fitness over `trials` on up to `workers` threads. Results land in
// index order regardless of scheduling.
std::vector<double> evaluate_all(const Fitness& fitness, const Population& trials, std::size_t workers) {
  std::vector<double> out(trials.size());
  if (workers <= 1 || trials.size() <= 1) {
    for (std::size_t i = 0; i < trials.size(); ++i) out[i] = fitness(trials[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < trials.size() && !failed; i = next++) {
      try {
        out[i] = fitness(trials[i]);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, trials.size()); ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace

void Bounds::validate() const {
  if (lower.size() != upper.size()) {
    throw DeError("bounds: lower has " + std::to_string(lower.size()) + " entries, upper " +
                  std::to_string(upper.size()));
  }
  if (lower.empty()) throw DeError("bounds: zero dimensions");
  for (std::size_t j = 0; j < lower.size(); ++j) {
    if (!(lower[j] <= upper[j])) throw DeError("bounds: lower > upper at component " + std::to_string(j));
  }
}

bool Bounds::contains(std::span<const double> x) const {
  if (x.size() != dim()) return false;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!(x[j] >= lower[j] && x[j] <= upper[j])) return false;
  }
  return true;
}

Vector Bounds::clamp(Vector x) const {
  if (x.size() != dim()) throw DeError("clamp: dimension mismatch");
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j], lower[j], upper[j]);
  return x;
}

void Config::validate() const {
  if (np < 4) throw DeError("np must be at least 4, got " + std::to_string(np));
  if (!(cr >= 0.0 && cr <= 1.0)) throw DeError("cr must lie in [0, 1]");
  if (!(f > 0.0)) throw DeError("f must be positive");
  if (max_evals < np) {
    throw DeError("evaluation budget " + std::to_string(max_evals) + " cannot cover an initial population of " +
                  std::to_string(np));
  }
}

Population initialize(const Bounds& bounds, std::size_t np, Rng& rng) {
  bounds.validate();
  if (np < 4) throw DeError("np must be at least 4, got " + std::to_string(np));
  Population pop(np, Vector(bounds.dim()));
  for (Vector& r : pop) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = bounds.lower[j] + unit_open(rng) * (bounds.upper[j] - bounds.lower[j]);
    }
  }
  return pop;
}

Vector mutate(const Population& pop, std::size_t target, double f, Rng& rng, bool exclude_target) {
  const std::size_t np = pop.size();
  if (np < (exclude_target ? 4u : 3u)) throw DeError("mutate: population too small");
  if (target >= np) throw DeError("mutate: target index out of range");
  const std::size_t none = np;  // never drawn
  const std::size_t skip = exclude_target ? target : none;
  const std::size_t x1 = draw_excluding(rng, np, {skip});
  const std::size_t x2 = draw_excluding(rng, np, {skip, x1});
  const std::size_t x3 = draw_excluding(rng, np, {skip, x1, x2});
  Vector v(pop[x1].size());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = pop[x1][j] + f * (pop[x2][j] - pop[x3][j]);
  return v;
}

Vector crossover(std::span<const double> r, std::span<const double> v, double cr, Rng& rng) {
  if (r.size() != v.size()) throw DeError("crossover: length mismatch");
  Vector u(r.begin(), r.end());
  for (std::size_t j = 0; j < u.size(); ++j) {
    if (unit_open(rng) <= cr) u[j] = v[j];
  }
  return u;
}

bool trial_survives(double trial_fitness, double parent_fitness) noexcept {
  const double t = std::isnan(trial_fitness) ? kInf : trial_fitness;
  const double p = std::isnan(parent_fitness) ? kInf : parent_fitness;
  return t <= p;
}

RunResult run(const Fitness& fitness, const Bounds& bounds, const Config& cfg, const StopPredicate& stop) {
  bounds.validate();
  cfg.validate();
  Rng rng(cfg.seed);
  RunResult result;
  result.best_fitness = kInf;
  std::size_t nan_count = 0;

  // Books one finished call; returns true when the run should end.
  std::size_t generation = 0;
  auto record = [&](const Vector& x, double value) {
    if (std::isnan(value)) {
      if (nan_count++ == 0) spdlog::warn("fitness returned NaN; treating it as +inf");
      value = kInf;
    }
    ++result.evaluations;
    const bool is_best = result.best.empty() || value <= result.best_fitness;
    if (is_best) {
      result.best = x;
      result.best_fitness = value;
    }
    if (stop && !result.success && stop(Evaluation{x, value, result.evaluations, generation, is_best})) {
      result.success = true;
      result.stop_vector = x;
      result.stop_fitness = value;
    }
    return result.success || result.evaluations >= cfg.max_evals;
  };

  Population pop = initialize(bounds, cfg.np, rng);
  std::vector<double> fit(cfg.np, kInf);
  bool done = false;
  if (cfg.workers <= 1) {
    for (std::size_t i = 0; i < cfg.np && !done; ++i) {
      fit[i] = fitness(pop[i]);
      done = record(pop[i], fit[i]);
    }
  } else {
    const auto values = evaluate_all(fitness, pop, cfg.workers);
    for (std::size_t i = 0; i < cfg.np; ++i) {
      fit[i] = values[i];
      done = record(pop[i], fit[i]) || done;
    }
  }
  for (double& v : fit) v = std::isnan(v) ? kInf : v;
  result.history.push_back(result.best_fitness);

  while (!done) {
    ++generation;
    const std::size_t count = std::min(cfg.np, cfg.max_evals - result.evaluations);
    Population trials(count);
    for (std::size_t i = 0; i < count; ++i) {
      Vector v = bounds.clamp(mutate(pop, i, cfg.f, rng, cfg.exclude_target));
      trials[i] = crossover(pop[i], v, cfg.cr, rng);
    }

    std::vector<double> values(count, kInf);
    std::size_t evaluated = 0;
    if (cfg.workers <= 1) {
      for (; evaluated < count && !done; ++evaluated) {
        values[evaluated] = fitness(trials[evaluated]);
        done = record(trials[evaluated], values[evaluated]);
      }
    } else {
      values = evaluate_all(fitness, trials, cfg.workers);
      for (; evaluated < count; ++evaluated) done = record(trials[evaluated], values[evaluated]) || done;
    }

    for (std::size_t i = 0; i < evaluated; ++i) {
      if (trial_survives(values[i], fit[i])) {
        pop[i] = std::move(trials[i]);
        fit[i] = std::isnan(values[i]) ? kInf : values[i];
      }
    }
    if (evaluated == cfg.np) ++result.generations;
    result.history.push_back(result.best_fitness);
  }
  return result;
}

}  // namespace cloudadv::de
