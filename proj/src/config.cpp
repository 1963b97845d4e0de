#include "realdepth/config.hpp"

#include <string>

#include "realdepth/error.hpp"

namespace realdepth {

void RunConfig::validate() const {
    recipe.validate();
    encoder.validate();
    fam.validate();
    classifier.validate();
    require(loss.lambda_msg >= 0.0, "config: loss.lambda_msg must be non-negative");
    require(crop >= 0, "config: crop must be non-negative");
    require(epochs >= 1, "config: epochs must be positive");
    require(lr > 0.0, "config: lr must be positive");
    require(decay_every >= 1, "config: decay_every must be positive");
    require(decay > 0.0 && decay <= 1.0, "config: decay must lie in (0, 1]");
    require(precision == 32 || precision == 64, "config: precision must be 32 or 64");
}

KeyValues RunConfig::to_keyvalues() const {
    KeyValues kv;
    kv.merge("recipe", recipe.to_keyvalues());
    kv.merge("encoder", encoder.to_keyvalues());
    kv.merge("fam", fam.to_keyvalues());
    kv.merge("classifier", classifier.to_keyvalues());
    kv.set("loss.lambda_msg", loss.lambda_msg);
    kv.set("msg_form", std::string(to_string(msg_form)));
    kv.set("seed", seed);
    kv.set("crop", crop);
    kv.set("epochs", epochs);
    kv.set("lr", lr);
    kv.set("decay_every", decay_every);
    kv.set("decay", decay);
    kv.set("precision", precision);
    kv.set("use_relative_depth", use_relative_depth);
    kv.set("use_uncertainty", use_uncertainty);
    return kv;
}

RunConfig RunConfig::from_keyvalues(const KeyValues& kv) {
    RunConfig c;
    c.recipe = DegradeRecipe::from_keyvalues(kv.section("recipe"));
    c.encoder = EncoderConfig::from_keyvalues(kv.section("encoder"));
    c.fam = FamConfig::from_keyvalues(kv.section("fam"));
    c.classifier = ClassifierConfig::from_keyvalues(kv.section("classifier"));
    c.loss.lambda_msg = kv.get_double("loss.lambda_msg", c.loss.lambda_msg);
    c.msg_form = parse_msg_form(kv.get_string("msg_form", std::string(to_string(c.msg_form))));
    c.seed = kv.get_uint("seed", c.seed);
    c.crop = static_cast<int>(kv.get_int("crop", c.crop));
    c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
    c.lr = kv.get_double("lr", c.lr);
    c.decay_every = static_cast<int>(kv.get_int("decay_every", c.decay_every));
    c.decay = kv.get_double("decay", c.decay);
    c.precision = static_cast<int>(kv.get_int("precision", c.precision));
    c.use_relative_depth = kv.get_bool("use_relative_depth", c.use_relative_depth);
    c.use_uncertainty = kv.get_bool("use_uncertainty", c.use_uncertainty);
    c.validate();

    const KeyValues known = c.to_keyvalues();
    for (const auto& [key, value] : kv.entries()) {
        if (!known.contains(key)) throw ParameterError("config: unknown key '" + key + "'");
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    return from_keyvalues(KeyValues::load(path));
}

RecoverySchedule RunConfig::recovery_schedule() const {
    RecoverySchedule s;
    s.epochs = epochs;
    s.lr = lr;
    s.decay_every = decay_every;
    s.decay = decay;
    s.crop = crop;
    s.seed = seed;
    s.loss = loss;
    s.msg_form = msg_form;
    s.float32 = precision == 32;
    return s;
}

ClassifierSchedule RunConfig::classifier_schedule() const {
    ClassifierSchedule s;
    s.epochs = epochs;
    s.lr = lr;
    s.decay_every = decay_every;
    s.decay = decay;
    s.crop = crop;
    s.seed = seed;
    s.float32 = precision == 32;
    return s;
}

}  // namespace realdepth
