#include <doctest.h>

#include <cstdlib>

#include "meshdex/config.hpp"
#include "meshdex/error.hpp"
#include "meshdex/manifest.hpp"
#include "meshdex/synthetic.hpp"
#include "support/test_support.hpp"

using namespace meshdex;
using namespace meshdex::testing;

TEST_CASE("defaults follow the base profile")
{
    const PipelineConfig c = parse_config_text("");
    CHECK(c.profile == Profile::base);
    CHECK(c.model.d_model == 256);
    CHECK(c.model.n_layers == 4);
    CHECK(c.finetune.learning_rate == 5e-4);
    CHECK(c.retrieval.k > 0);
    CHECK(c.fractions == kEfficiencyFractions);
}

TEST_CASE("large profile and explicit keys on top of it")
{
    const PipelineConfig c = parse_config_text("profile = \"large\"\n[model]\nn_layers = 2\n");
    CHECK(c.model.d_model == 1024);
    CHECK(c.model.n_layers == 2);
    CHECK(c.pretrain.learning_rate == 1e-4);
    // a profile given as an override still sits underneath file keys
    const PipelineConfig d = parse_config_text("[model]\nd_model = 64\n", {{"profile", "large"}});
    CHECK(d.model.d_model == 64);
    CHECK(d.model.n_layers == 6);
}

TEST_CASE("syntax: comments, quotes, booleans and lists")
{
    const PipelineConfig c = parse_config_text(R"(# top
seed = 11   # trailing
joint_supplementary = true
fractions = [0.0, 0.5, 1.0]
[paths]
out = "with # hash"
[retrieval]
weighting = "tfidf"
k = 5
)");
    CHECK(c.seed == 11);
    CHECK(c.joint_supplementary);
    CHECK(c.fractions == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(c.out_dir == "with # hash");
    CHECK(c.weighting == WeightingScheme::tfidf);
    CHECK(c.retrieval.k == 5);
}

TEST_CASE("overrides win over the file")
{
    const PipelineConfig c =
        parse_config_text("[retrieval]\nm = 7\n", {{"retrieval.m", "9"}, {"fractions", "0,0.2,1"}});
    CHECK(c.retrieval.m == 9);
    CHECK(c.fractions == std::vector<double>{0.0, 0.2, 1.0});
}

TEST_CASE("relative paths resolve against the config directory")
{
    TempDir dir("cfg");
    const auto file = dir.write("m.conf", "[paths]\ntrain = \"a/train.jsonl\"\ntest = \"/abs/test.jsonl\"\n");
    const PipelineConfig c = parse_config(file);
    CHECK(c.train_corpus == dir.path() / "a/train.jsonl");
    CHECK(c.test_corpus == "/abs/test.jsonl");
    CHECK_THROWS_AS(parse_config(dir / "missing.conf"), UsageError);
}

TEST_CASE("bad input is a usage error")
{
    CHECK_THROWS_AS(parse_config_text("nope = 1\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("[model]\nd_model = -3\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("[model]\nd_model = 30\nn_heads = 4\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("seed = \"open\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("[model\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("just words\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("joint_supplementary = maybe\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("fractions = [0.5, 0.1]\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("profile = \"huge\"\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("[finetune]\ninit = \"warm\"\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("", {{"retrieval.k", "0"}}), UsageError);
    CHECK_THROWS_AS(parse_config_text("", {{"made.up", "1"}}), UsageError);
}

TEST_CASE("snapshot parses back to the same config")
{
    const PipelineConfig c = parse_config_text(synthetic_config_text(4));
    const std::string snap = config_snapshot(c);
    const PipelineConfig back = parse_config_text(snap);
    CHECK(config_snapshot(back) == snap);
    CHECK(back.model == c.model);
    CHECK(back.finetune.learning_rate == c.finetune.learning_rate);
    CHECK(back.seed == 4);
    for (const auto& key : config_keys()) {
        const auto dot = key.rfind('.');
        const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
        CHECK_MESSAGE(snap.find(leaf + " = ") != std::string::npos, key);
    }
}

TEST_CASE("manifest text round trip and staleness")
{
    TempDir dir("man");
    const auto in = dir.write("in.txt", "input");
    const auto out = dir.write("out.txt", "output");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const Manifest m = make_manifest("prep", 7, {in}, {out}, dir.path(), "seed = 7\n");
    CHECK(m.outputs.front().label == "out.txt");
    CHECK(parse_manifest(format_manifest(m)) == m);
    write_manifest(dir / "manifest_prep.txt", m);
    CHECK(read_manifest(dir / "manifest_prep.txt") == m);
    CHECK(manifest_current(dir / "manifest_prep.txt", m, dir.path()));
    dir.write("out.txt", "changed");
    CHECK_FALSE(manifest_current(dir / "manifest_prep.txt", m, dir.path()));
    Manifest other = m;
    other.seed = 8;
    CHECK_FALSE(manifest_current(dir / "manifest_prep.txt", other, dir.path()));
}
