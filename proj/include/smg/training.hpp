#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "smg/networks.hpp"

namespace smg::training {

struct StepRecord {
  std::string stage;
  int step = 0;
  double level = 0.0;
  std::vector<std::pair<std::string, double>> terms;

  /// Value of a named loss term; LookupError when absent.
  double term(const std::string& name) const;
};

using Observer = std::function<void(const StepRecord&)>;

/// Throws DivergenceError naming the stage and step when any term is not finite.
void require_finite(const StepRecord& record);

/**
 * One simultaneous adversarial update. The generator objective is
 * back-propagated with the discriminator frozen, then the discriminator
 * objective (computed on detached fakes), and only then do both optimisers
 * step, so neither backward pass sees already-updated weights.
 */
template <typename T>
void adversarial_update(const ad::Var<T>& generator_objective, const ad::Var<T>& discriminator_objective,
                        backbone::Adam<T>& generator_opt, backbone::Adam<T>& discriminator_opt,
                        backbone::BasicParamStore<T>& discriminator_params) {
  generator_opt.zero_grad();
  discriminator_opt.zero_grad();
  discriminator_params.set_requires_grad(false);
  try {
    generator_objective.backward();
  } catch (...) {
    discriminator_params.set_requires_grad(true);
    throw;
  }
  discriminator_params.set_requires_grad(true);
  discriminator_objective.backward();
  generator_opt.step();
  discriminator_opt.step();
}

/// Packs a generator with its architecture keys and `net=<kind>`.
backbone::Checkpoint pack_generator(const backbone::Generator<float>& gen, backbone::Metadata meta,
                                    std::string_view net);

/// Rebuilds a generator; FormatError when the checkpoint is of another kind.
backbone::Generator<float> unpack_generator(const backbone::Checkpoint& ckpt, std::string_view net);

/// load_checkpoint, except that a missing file is a StateError.
backbone::Checkpoint read_network_checkpoint(const std::filesystem::path& path, std::string_view what);

/// Mean of the last `window` values of a term over a history.
double trailing_mean(const std::vector<StepRecord>& history, const std::string& term, std::size_t window,
                     const std::string& stage = {});

/// Mean of the first `window` values of a term over a history.
double leading_mean(const std::vector<StepRecord>& history, const std::string& term, std::size_t window,
                    const std::string& stage = {});

}  // namespace smg::training
