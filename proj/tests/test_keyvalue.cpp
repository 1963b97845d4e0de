#include "doctest.h"
#include "realdepth/error.hpp"
#include "realdepth/config.hpp"
#include "realdepth/keyvalue.hpp"
#include "test_util.hpp"

using namespace realdepth;

TEST_CASE("parse comments, whitespace and typed values") {
    const KeyValues kv = KeyValues::parse(R"(# a comment
  name = toy run
rate=0.125
count = -3
big = 18446744073709551615
flag = true
list = 1, 2.5 ,-3
words = a,b , c

)");
    CHECK(kv.get_string("name", "") == "toy run");
    CHECK(kv.get_double("rate", 0) == 0.125);
    CHECK(kv.get_int("count", 0) == -3);
    CHECK(kv.get_uint("big", 0) == 18446744073709551615ULL);
    CHECK(kv.get_bool("flag", false));
    CHECK(kv.get_doubles("list", {}) == std::vector<double>{1, 2.5, -3});
    CHECK(kv.get_strings("words", {}) == std::vector<std::string>{"a", "b", "c"});
    CHECK(kv.get_double("absent", 4.0) == 4.0);
}

TEST_CASE("malformed input is rejected") {
    CHECK_THROWS_AS(KeyValues::parse("no equals sign"), ParameterError);
    CHECK_THROWS_AS(KeyValues::parse("a = 1\na = 2"), ParameterError);
    CHECK_THROWS_AS(KeyValues::parse(" = 3"), ParameterError);
    const KeyValues kv = KeyValues::parse("x = abc\nb = maybe");
    CHECK_THROWS_AS(kv.get_double("x", 0), ParameterError);
    CHECK_THROWS_AS(kv.get_int("x", 0), ParameterError);
    CHECK_THROWS_AS(kv.get_bool("b", false), ParameterError);
}

TEST_CASE("doubles round trip exactly and output is sorted") {
    KeyValues kv;
    kv.set("z", 0.1);
    kv.set("a", 1.0 / 3.0);
    kv.set("m", std::vector<double>{1e-300, -2.5e17});
    const std::string text = kv.to_string();
    CHECK(text.find("a = ") < text.find("m = "));
    CHECK(text.find("m = ") < text.find("z = "));
    const KeyValues back = KeyValues::parse(text);
    CHECK(back.get_double("a", 0) == 1.0 / 3.0);
    CHECK(back.get_double("z", 0) == 0.1);
    CHECK(back.get_doubles("m", {}) == std::vector<double>{1e-300, -2.5e17});
    CHECK(back.to_string() == text);
}

TEST_CASE("sections and merge") {
    KeyValues inner;
    inner.set("kind", std::string("dropout"));
    inner.set("rate", 0.5);
    KeyValues outer;
    outer.merge("reg", inner);
    CHECK(outer.get_string("reg.kind", "") == "dropout");
    const KeyValues back = outer.section("reg");
    CHECK(back.entries() == inner.entries());
}

TEST_CASE("save and load") {
    testutil::TempDir dir("kv");
    KeyValues kv;
    kv.set("seed", std::uint64_t{42});
    kv.save(dir / "c.cfg");
    CHECK(KeyValues::load(dir / "c.cfg").get_uint("seed", 0) == 42);
    CHECK_THROWS_AS(KeyValues::load(dir / "absent.cfg"), IoError);
}

TEST_CASE("run config round-trips through text") {
    realdepth::RunConfig c;
    c.recipe.elastic_amplitude = 7.25;
    c.recipe.interp_choices = {realdepth::Interp::bicubic};
    c.encoder = {{1, 2, 4}, true};
    c.fam.channels = 12;
    c.fam.query_distance = 3;
    c.fam.mlp_hidden = {16, 8, 4};
    c.fam.reg = {realdepth::nn::RegKind::dropblock, 0.2, 5};
    c.classifier.hidden_channels = 9;
    c.loss.lambda_msg = 0.1 + 0.2;  // not exactly representable in short decimal
    c.msg_form = realdepth::MsgForm::paper_literal;
    c.seed = 18446744073709551557ULL;
    c.crop = 48;
    c.lr = 3e-3;
    c.precision = 32;
    c.use_relative_depth = true;

    const std::string text = c.to_keyvalues().to_string();
    const auto back = realdepth::RunConfig::from_keyvalues(realdepth::KeyValues::parse(text));
    CHECK(back.to_keyvalues().to_string() == text);
    CHECK(back.loss.lambda_msg == c.loss.lambda_msg);
    CHECK(back.seed == c.seed);
    CHECK(back.fam.mlp_hidden == c.fam.mlp_hidden);
    CHECK(back.encoder.dilations == c.encoder.dilations);
    CHECK(back.encoder.joint_rgbd);
    CHECK(back.msg_form == realdepth::MsgForm::paper_literal);

    const auto defaults = realdepth::RunConfig::from_keyvalues(realdepth::KeyValues::parse(""));
    CHECK(defaults.to_keyvalues().to_string() == realdepth::RunConfig{}.to_keyvalues().to_string());
    CHECK_THROWS_AS(realdepth::RunConfig::from_keyvalues(realdepth::KeyValues::parse("epoch = 3")),
                    realdepth::ParameterError);
    CHECK_THROWS_AS(realdepth::RunConfig::from_keyvalues(realdepth::KeyValues::parse("precision = 16")),
                    realdepth::ParameterError);
}
