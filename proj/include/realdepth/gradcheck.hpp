#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "realdepth/nn.hpp"

namespace realdepth {

/// Randomized finite-difference checks of every differentiable operator.
/// Each case builds a small instance from `seed`, uses the objective
/// sum(w * output) with random w (or the loss itself for losses), and checks
/// every parameter and input entry.
struct GradCase {
    std::string name;
    std::function<nn::GradCheckResult(std::uint64_t seed)> run;
};

nn::GradCheckResult gradcheck_conv3x3(std::uint64_t seed);
nn::GradCheckResult gradcheck_mlp(std::uint64_t seed);
nn::GradCheckResult gradcheck_softmax(std::uint64_t seed);
nn::GradCheckResult gradcheck_fam(std::uint64_t seed);
nn::GradCheckResult gradcheck_encoder(std::uint64_t seed);
nn::GradCheckResult gradcheck_loss_total(std::uint64_t seed);
nn::GradCheckResult gradcheck_classifier(std::uint64_t seed);
/// loss_total of the full recovery model with respect to all parameters.
nn::GradCheckResult gradcheck_recovery(std::uint64_t seed);

std::vector<GradCase> gradcheck_suite();

}  // namespace realdepth
