#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloudadv/random.hpp"

namespace cloudadv::de {

using Vector = std::vector<double>;
using Population = std::vector<Vector>;

class DeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Bounds {
  Vector lower;
  Vector upper;

  std::size_t dim() const noexcept { return lower.size(); }
  // Throws DeError unless sizes agree and lower <= upper everywhere.
  void validate() const;
  bool contains(std::span<const double> x) const;
  Vector clamp(Vector x) const;
};

struct Config {
  std::size_t np = 100;
  double cr = 0.8;
  double f = 0.5;
  std::size_t max_evals = 3000;
  std::uint64_t seed = 0;
  // Draw x1, x2, x3 distinct from the target index as well as from each
  // other. Turning this off only requires mutual distinctness.
  bool exclude_target = true;
  // Trials of one generation are evaluated on this many threads. The fitness
  // callback must then be safe to call concurrently.
  std::size_t workers = 1;

  void validate() const;
};

// What the stop predicate sees after each fitness call.
struct Evaluation {
  std::span<const double> x;
  double fitness = 0.0;
  std::size_t count = 0;       // 1-based index of this call
  std::size_t generation = 0;  // 0 for the initial population
  bool is_best = false;        // fitness <= every earlier fitness
};

using Fitness = std::function<double(std::span<const double>)>;
using StopPredicate = std::function<bool(const Evaluation&)>;

struct RunResult {
  Vector best;
  double best_fitness = 0.0;
  std::size_t evaluations = 0;
  std::size_t generations = 0;  // completed mutate/crossover/select rounds
  bool success = false;         // the stop predicate fired
  Vector stop_vector;           // the evaluation that fired it
  double stop_fitness = 0.0;
  // Best-so-far after the initial population and after every generation,
  // plus a final entry when the run ends part way through one.
  std::vector<double> history;
};

// r = lower + rand(0,1) * (upper - lower), per component.
Population initialize(const Bounds& bounds, std::size_t np, Rng& rng);

// r_x1 + f * (r_x2 - r_x3) before any clamping.
Vector mutate(const Population& pop, std::size_t target, double f, Rng& rng, bool exclude_target = true);

// u_j = v_j when rand(0,1) <= cr, else r_j. No component is forced from the
// mutant. rand is open at 0, so cr = 0 always returns r.
Vector crossover(std::span<const double> r, std::span<const double> v, double cr, Rng& rng);

// The trial survives on a tie. NaN fitness counts as +infinity.
bool trial_survives(double trial_fitness, double parent_fitness) noexcept;

// Minimizes `fitness` over the box. Every call is counted and never exceeds
// cfg.max_evals. With several workers the stop predicate may fire while
// other trials of the same generation are already evaluated; those still
// count.
RunResult run(const Fitness& fitness, const Bounds& bounds, const Config& cfg, const StopPredicate& stop = {});

}  // namespace cloudadv::de
