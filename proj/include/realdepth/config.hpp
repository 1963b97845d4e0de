#pragma once

#include <cstdint>
#include <filesystem>

#include "realdepth/degrade.hpp"
#include "realdepth/keyvalue.hpp"
#include "realdepth/losses.hpp"
#include "realdepth/recover.hpp"
#include "realdepth/uncertainty.hpp"

namespace realdepth {

/// Everything a CLI run depends on besides its input files. Serialized as
/// key-value text with `recipe.`, `encoder.`, `fam.`, `classifier.` sections.
struct RunConfig {
    DegradeRecipe recipe;
    EncoderConfig encoder;
    FamConfig fam;
    ClassifierConfig classifier;
    LossWeights loss;
    MsgForm msg_form = MsgForm::standard;
    std::uint64_t seed = 0;
    int crop = 64;
    int epochs = 40;
    double lr = 1e-3;
    int decay_every = 20;
    double decay = 0.5;
    int precision = 64;  // 32 rounds parameters to float after every update
    bool use_relative_depth = false;
    bool use_uncertainty = true;  // mask raw with uncertainty labels when available

    void validate() const;
    KeyValues to_keyvalues() const;
    /// Rejects keys that do not belong to any field.
    static RunConfig from_keyvalues(const KeyValues& kv);
    static RunConfig load(const std::filesystem::path& path);

    RecoverySchedule recovery_schedule() const;
    ClassifierSchedule classifier_schedule() const;
};

}  // namespace realdepth
