// meshdex command-line driver.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "meshdex/config.hpp"
#include "meshdex/error.hpp"
#include "meshdex/pipeline.hpp"
#include "meshdex/synthetic.hpp"

namespace {

struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> profile;
    std::optional<std::size_t> k;
    std::optional<std::size_t> m;
    bool joint = false;
    std::optional<std::string> fractions;
    std::optional<std::string> out;
    std::optional<std::string> init;
    std::optional<std::size_t> dim;
    bool from_scratch = false;
    std::vector<std::string> set;
    bool force = false;
    bool quiet = false;
};

void add_common(CLI::App* app, Flags& f)
{
    app->add_option("--config", f.config, "config file");
    app->add_option("--seed", f.seed, "random seed");
    app->add_option("--profile", f.profile, "base or large")->check(CLI::IsMember({"base", "large"}));
    app->add_option("--k", f.k, "neighbours retrieved per document");
    app->add_option("--m", f.m, "candidate headings kept per document");
    app->add_flag("--joint-supplementary", f.joint, "index supplementary concepts together with headings");
    app->add_option("--fractions", f.fractions, "comma-separated training fractions");
    app->add_option("--out", f.out, "output directory");
    app->add_option("--init", f.init, "word vectors: file or random")->check(CLI::IsMember({"file", "random"}));
    app->add_option("--dim", f.dim, "dimension of random word vectors");
    app->add_flag("--from-scratch", f.from_scratch, "fine-tune without the pretrained checkpoint");
    app->add_option("--set", f.set, "override any config key: section.key=value");
    app->add_flag("--force", f.force, "re-run even when the manifest is current");
    app->add_flag("-q,--quiet", f.quiet, "no progress messages");
}

meshdex::PipelineConfig load(const Flags& f)
{
    std::vector<meshdex::Override> ov;
    for (const auto& kv : f.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw meshdex::UsageError(fmt::format("--set expects key=value, got '{}'", kv));
        }
        ov.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (f.profile) {
        ov.emplace_back("profile", *f.profile);
    }
    if (f.seed) {
        ov.emplace_back("seed", std::to_string(*f.seed));
    }
    if (f.k) {
        ov.emplace_back("retrieval.k", std::to_string(*f.k));
    }
    if (f.m) {
        ov.emplace_back("retrieval.m", std::to_string(*f.m));
    }
    if (f.joint) {
        ov.emplace_back("joint_supplementary", "true");
    }
    if (f.fractions) {
        ov.emplace_back("fractions", *f.fractions);
    }
    if (f.out) {
        ov.emplace_back("paths.out", *f.out);
    }
    if (f.init) {
        ov.emplace_back("data.embedding_init", *f.init);
    }
    if (f.dim) {
        ov.emplace_back("data.embedding_dim", std::to_string(*f.dim));
    }
    if (f.from_scratch) {
        ov.emplace_back("finetune.init", "scratch");
    }
    std::optional<std::filesystem::path> path;
    if (f.config) {
        path = *f.config;
    }
    return meshdex::parse_config(path, ov);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"meshdex: candidate retrieval, transformer scoring and evaluation for MeSH indexing"};
    app.require_subcommand(1);
    Flags flags;
    std::optional<meshdex::Command> command;
    meshdex::RunOptions run;

    auto stage_cmd = [&](const char* name, const char* help, meshdex::Command c) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub, flags);
        sub->callback([&command, c] { command = c; });
        return sub;
    };
    stage_cmd("prep", "build the vocabulary from the training corpus", meshdex::Command::prep);
    CLI::App* index = stage_cmd("index", "build the retrieval index (`index build`)", meshdex::Command::index);
    std::string index_action = "build";
    index->add_option("action", index_action, "build")->check(CLI::IsMember({"build"}));
    stage_cmd("retrieve", "retrieve candidate headings for every corpus", meshdex::Command::retrieve);
    stage_cmd("pretrain", "masked-language-model pretraining on the unlabeled corpus", meshdex::Command::pretrain);
    stage_cmd("finetune", "fine-tune the scoring head on labeled candidates", meshdex::Command::finetune);
    CLI::App* thresholds = app.add_subcommand("thresholds", "fit or apply per-index thresholds");
    add_common(thresholds, flags);
    std::string thresholds_action;
    thresholds->add_option("action", thresholds_action, "fit or apply")
        ->required()
        ->check(CLI::IsMember({"fit", "apply"}));
    thresholds->callback([&] {
        command = thresholds_action == "fit" ? meshdex::Command::thresholds_fit : meshdex::Command::thresholds_apply;
    });
    stage_cmd("predict", "score test documents and apply thresholds", meshdex::Command::predict);
    CLI::App* evaluate = stage_cmd("evaluate", "flat and LCA metrics", meshdex::Command::evaluate);
    std::string gold, pred, onto;
    evaluate->add_option("--gold", gold, "gold label file");
    evaluate->add_option("--pred", pred, "prediction label file");
    evaluate->add_option("--ontology", onto, "ontology for LCA-F");
    stage_cmd("efficiency-curve", "fine-tune on chronological prefixes and evaluate each",
              meshdex::Command::efficiency_curve);
    stage_cmd("run", "all stages from prep to evaluate", meshdex::Command::all);

    CLI::App* synth = app.add_subcommand("synth", "write the seeded toy benchmark");
    std::string synth_dir = "synthetic";
    meshdex::SyntheticSpec spec;
    synth->add_option("--dir", synth_dir, "output directory");
    synth->add_option("--seed", spec.seed, "generator seed");
    synth->add_option("--train", spec.train_docs, "training documents");
    synth->add_option("--test", spec.test_docs, "test documents");
    synth->add_option("--ssl", spec.ssl_docs, "unlabeled documents");
    synth->add_option("--supplementary", spec.supplementary, "supplementary concepts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(meshdex::ErrorKind::usage);
    }

    try {
        if (synth->parsed()) {
            meshdex::write_synthetic(meshdex::make_synthetic(spec), synth_dir, spec.seed);
            fmt::print(stderr, "synthetic benchmark written to {}\n", synth_dir);
            return 0;
        }
        if (!gold.empty()) {
            run.gold = gold;
        }
        if (!pred.empty()) {
            run.pred = pred;
        }
        if (!onto.empty()) {
            run.ontology = onto;
        }
        run.force = flags.force;
        run.quiet = flags.quiet;
        const meshdex::PipelineConfig cfg = load(flags);
        meshdex::run_command(*command, cfg, run);
        return 0;
    } catch (const std::exception& e) {
        fmt::print(stderr, "meshdex: {}\n", e.what());
        return meshdex::exit_code_for(e);
    }
}
