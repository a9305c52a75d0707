#include "meshdex/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/os.h>

#include "meshdex/corpus.hpp"
#include "meshdex/error.hpp"
#include "meshdex/kernels.hpp"
#include "meshdex/manifest.hpp"
#include "meshdex/model.hpp"
#include "meshdex/retrieval.hpp"
#include "meshdex/rng.hpp"
#include "meshdex/textprep.hpp"
#include "meshdex/thresholds.hpp"
#include "meshdex/training.hpp"

namespace meshdex {

namespace fs = std::filesystem;

namespace {

constexpr std::pair<Command, std::string_view> kCommandNames[] = {
    {Command::prep, "prep"},
    {Command::index, "index"},
    {Command::retrieve, "retrieve"},
    {Command::pretrain, "pretrain"},
    {Command::finetune, "finetune"},
    {Command::thresholds_fit, "thresholds-fit"},
    {Command::thresholds_apply, "thresholds-apply"},
    {Command::predict, "predict"},
    {Command::evaluate, "evaluate"},
    {Command::efficiency_curve, "efficiency-curve"},
    {Command::all, "all"},
};

// Seed streams for the different random consumers of one run.
constexpr std::uint64_t kEmbeddingStream = 0xE3B;
constexpr std::uint64_t kInitStream = 0x1A17;
constexpr std::uint64_t kPretrainStream = 0x9E7;
constexpr std::uint64_t kFinetuneStream = 0xF1E;
constexpr std::uint64_t kSslCandidateStream = 0x55C;

}  // namespace

Command parse_command(std::string_view name)
{
    for (const auto& [c, n] : kCommandNames) {
        if (n == name) {
            return c;
        }
    }
    throw UsageError(fmt::format("unknown command '{}'", name));
}

std::string_view command_name(Command c)
{
    for (const auto& [cmd, n] : kCommandNames) {
        if (cmd == c) {
            return n;
        }
    }
    return "?";
}

int exit_code_for(const std::exception& e)
{
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        return static_cast<int>(err->kind());
    }
    if (dynamic_cast<const fs::filesystem_error*>(&e)) {
        return static_cast<int>(ErrorKind::data);
    }
    return static_cast<int>(ErrorKind::numeric);
}

std::map<std::string, std::string> read_keyvalues(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read '{}'", path.string()));
    }
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) {
            out[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    return out;
}

namespace {

void note(const RunOptions& opt, std::string_view msg)
{
    if (!opt.quiet) {
        fmt::print(stderr, "{}\n", msg);
    }
}

void write_text(const fs::path& path, std::string_view text)
{
    auto out = fmt::output_file(path.string());
    out.print("{}", text);
}

// Loads inputs once per command and keeps them for later stages.
class Context {
public:
    Context(const PipelineConfig& cfg, const RunOptions& opt) : cfg(cfg), opt(opt) {}

    const PipelineConfig& cfg;
    const RunOptions& opt;

    fs::path at(const char* name) const { return cfg.out_dir / name; }

    void require(const char* name, std::string_view producer) const
    {
        if (!fs::exists(at(name))) {
            throw UsageError(
                fmt::format("missing {}; run `meshdex {}` first", at(name).string(), producer));
        }
    }

    static const fs::path& configured(const fs::path& p, std::string_view key)
    {
        if (p.empty()) {
            throw UsageError(fmt::format("no {} configured (set paths.{})", key, key));
        }
        return p;
    }

    const StopwordSet& stopwords()
    {
        if (!stopwords_) {
            stopwords_ = cfg.stopwords.empty() ? StopwordSet::builtin() : StopwordSet::load(cfg.stopwords);
        }
        return *stopwords_;
    }

    const MeshOntology& ontology()
    {
        if (!ontology_) {
            ontology_ = load_ontology(configured(cfg.ontology, "ontology"));
        }
        return *ontology_;
    }

    // Training and SSL documents are kept in chronological order.
    const CorpusStore& train()
    {
        if (!train_) {
            const CorpusStore raw = load_corpus(configured(cfg.train_corpus, "train"), &ontology(), stopwords());
            train_ = CorpusStore(chronological_order(raw), stopwords());
        }
        return *train_;
    }

    const CorpusStore& test()
    {
        if (!test_) {
            test_ = load_corpus(configured(cfg.test_corpus, "test"), &ontology(), stopwords());
        }
        return *test_;
    }

    const CorpusStore& ssl()
    {
        if (!ssl_) {
            const CorpusStore raw = load_corpus(configured(cfg.ssl_corpus, "ssl"), &ontology(), stopwords());
            ssl_ = CorpusStore(chronological_order(raw), stopwords());
        }
        return *ssl_;
    }

    const Vocabulary& vocab()
    {
        if (!vocab_) {
            require(artifact::vocab, "prep");
            vocab_ = Vocabulary::load(at(artifact::vocab));
        }
        return *vocab_;
    }

    std::vector<TokenSequence> sequences(const CorpusStore& corpus)
    {
        return preprocess_corpus(corpus, vocab(), cfg.model.max_sequence_length);
    }

    ModelConfig model_config()
    {
        ModelConfig mc = cfg.model;
        mc.vocab_size = vocab().size();
        mc.label_count = ontology().size();
        mc.validate();
        return mc;
    }

    std::vector<fs::path> source_inputs()
    {
        std::vector<fs::path> in{configured(cfg.ontology, "ontology")};
        if (!cfg.stopwords.empty()) {
            in.push_back(cfg.stopwords);
        }
        return in;
    }

    TokenEmbeddings word_vectors()
    {
        if (cfg.embedding_init == "file") {
            return align_embeddings(load_embeddings(configured(cfg.embeddings, "embeddings")), vocab());
        }
        std::vector<std::string> words;
        for (std::size_t i = kReservedTokens; i < vocab().size(); ++i) {
            words.push_back(vocab().token(static_cast<TokenId>(i)));
        }
        const std::size_t dim = cfg.embedding_dim > 0 ? cfg.embedding_dim : cfg.model.d_model;
        return align_embeddings(random_embeddings(words, dim, derive_seed(cfg.seed, kEmbeddingStream)), vocab());
    }

    ModelParams fresh_model(const TokenEmbeddings& emb)
    {
        const ModelConfig mc = model_config();
        const bool usable = emb.dimension() == mc.d_model;
        if (!usable) {
            note(opt, fmt::format("word vectors have dimension {}, model uses {}; token embeddings start random",
                                  emb.dimension(), mc.d_model));
        }
        return initialize_params(mc, derive_seed(cfg.seed, kInitStream), usable ? &emb : nullptr);
    }

    ModelParams checkpoint(const char* name, std::string_view producer)
    {
        require(name, producer);
        ModelParams p = load_checkpoint(at(name));
        ModelConfig expected = model_config();
        expected.dropout = p.config().dropout;
        if (!(p.config() == expected)) {
            throw DataError(fmt::format("{} does not match the configured model; re-run `meshdex {}`",
                                        at(name).string(), producer));
        }
        return p;
    }

    TrainConfig pretrain_config() const
    {
        TrainConfig tc = cfg.pretrain;
        tc.seed = derive_seed(cfg.seed, kPretrainStream);
        return tc;
    }

    TrainConfig finetune_config() const
    {
        TrainConfig tc = cfg.finetune;
        tc.seed = derive_seed(cfg.seed, kFinetuneStream);
        return tc;
    }

private:
    std::optional<StopwordSet> stopwords_;
    std::optional<MeshOntology> ontology_;
    std::optional<CorpusStore> train_, test_, ssl_;
    std::optional<Vocabulary> vocab_;
};

// Runs `body` unless the stage's manifest shows identical inputs and intact
// outputs; then records a fresh manifest.
template <class Body>
void stage(Context& cx, const std::string& name, const std::vector<fs::path>& inputs, Body body)
{
    fs::create_directories(cx.cfg.out_dir);
    const std::string snapshot = config_snapshot(cx.cfg);
    const fs::path manifest_path = cx.cfg.out_dir / fmt::format("manifest_{}.txt", name);
    const Manifest expected = make_manifest(name, cx.cfg.seed, inputs, {}, cx.cfg.out_dir, snapshot);
    if (!cx.opt.force && manifest_current(manifest_path, expected, cx.cfg.out_dir)) {
        note(cx.opt, fmt::format("{}: up to date", name));
        return;
    }
    const std::vector<fs::path> outputs = body();
    write_manifest(manifest_path, make_manifest(name, cx.cfg.seed, inputs, outputs, cx.cfg.out_dir, snapshot));
    note(cx.opt, fmt::format("{}: done", name));
}

std::vector<LabelSet> gold_sets(const CorpusStore& corpus, bool joint)
{
    std::vector<LabelSet> out;
    out.reserve(corpus.size());
    for (const auto& d : corpus.documents()) {
        LabelSet g = d.mesh_major;
        if (joint) {
            g.insert(d.supplementary.begin(), d.supplementary.end());
        }
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<PredictionSet> as_prediction_sets(const CorpusStore& corpus, const std::vector<LabelSet>& sets)
{
    std::vector<PredictionSet> out;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        out.push_back({corpus[i].id, sets[i]});
    }
    return out;
}

// Candidate lists aligned with corpus order (files may list documents in any
// order).
std::vector<CandidateSet> align_candidates(const CorpusStore& corpus, const std::vector<CandidateSet>& sets,
                                           const fs::path& source)
{
    std::unordered_map<std::string_view, const CandidateSet*> by_id;
    for (const auto& s : sets) {
        by_id.emplace(s.doc_id, &s);
    }
    std::vector<CandidateSet> out;
    out.reserve(corpus.size());
    for (const auto& d : corpus.documents()) {
        const auto it = by_id.find(d.id);
        if (it == by_id.end()) {
            throw DataError(fmt::format("{} has no entry for document '{}'; re-run `meshdex retrieve`",
                                        source.string(), d.id));
        }
        out.push_back(*it->second);
    }
    return out;
}

std::vector<std::size_t> supplementary_rows(const MeshOntology& onto)
{
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < onto.size(); ++i) {
        if (onto.node(i).kind == NodeKind::supplementary) {
            rows.push_back(i);
        }
    }
    return rows;
}

// Candidate rows for the model: retrieved majors, then every supplementary
// concept in joint mode.
std::vector<std::size_t> candidate_rows(const CandidateSet& set, const MeshOntology& onto, bool joint)
{
    std::vector<std::size_t> rows;
    for (const auto& c : set.entries) {
        rows.push_back(onto.position(c.id));
    }
    if (joint) {
        for (const std::size_t r : supplementary_rows(onto)) {
            if (std::find(rows.begin(), rows.end(), r) == rows.end()) {
                rows.push_back(r);
            }
        }
    }
    return rows;
}

FinetuneExample make_example(const TokenSequence& seq, const CandidateSet& set, const LabelSet& gold,
                             const MeshOntology& onto, bool joint)
{
    FinetuneExample ex{seq, candidate_rows(set, onto, joint), {}, 0};
    std::size_t hit = 0;
    for (const std::size_t r : ex.candidate_rows) {
        const bool positive = gold.contains(onto.node(r).id);
        ex.labels.push_back(positive ? 1.0 : 0.0);
        hit += positive;
    }
    ex.missed_gold = gold.size() - hit;
    return ex;
}

struct FinetuneData {
    std::vector<FinetuneExample> train;
    std::vector<FinetuneExample> validation;
};

// The chronological tail is held out with evaluation-mode candidates so its
// micro-F reflects retrieval misses.
FinetuneData finetune_data(const CorpusStore& corpus, const std::vector<TokenSequence>& seqs,
                           const std::vector<CandidateSet>& train_mode, const std::vector<CandidateSet>& eval_mode,
                           const MeshOntology& onto, bool joint, double validation_fraction)
{
    const auto golds = gold_sets(corpus, joint);
    const std::size_t n_train = training_prefix(corpus.size(), validation_fraction);
    FinetuneData data;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const bool held = i >= n_train;
        FinetuneExample ex = make_example(seqs[i], held ? eval_mode[i] : train_mode[i], golds[i], onto, joint);
        if (ex.candidate_rows.empty()) {
            continue;
        }
        (held ? data.validation : data.train).push_back(std::move(ex));
    }
    return data;
}

TrainResult run_finetune(ModelParams init, const FinetuneData& data, TrainConfig tc)
{
    if (data.validation.empty()) {
        tc.validation_fraction = 0.0;
    }
    return finetune(std::move(init), data.train, tc, data.validation);
}

// Model scores for every document's candidates, in corpus order.
std::vector<CandidateSet> score_corpus(const ModelParams& params, const CorpusStore& corpus,
                                       const std::vector<TokenSequence>& seqs, const std::vector<CandidateSet>& cands,
                                       const MeshOntology& onto, bool joint)
{
    std::vector<CandidateSet> out(corpus.size());
    kernels::parallel_for(corpus.size(), [&](std::size_t i) {
        out[i].doc_id = corpus[i].id;
        const auto rows = candidate_rows(cands[i], onto, joint);
        if (rows.empty()) {
            return;
        }
        const auto scores = forward_index(seqs[i], rows, params);
        for (std::size_t j = 0; j < rows.size(); ++j) {
            out[i].entries.push_back({onto.node(rows[j]).id, scores[j]});
        }
    });
    return out;
}

std::vector<PretrainExample> pretrain_examples(const CorpusStore& ssl, const std::vector<TokenSequence>& seqs,
                                               const std::vector<CandidateSet>& cands, const MeshOntology& onto,
                                               const PipelineConfig& cfg)
{
    std::vector<PretrainExample> out;
    for (std::size_t i = 0; i < ssl.size(); ++i) {
        std::vector<std::size_t> rows = candidate_rows(cands[i], onto, false);
        if (rows.empty()) {
            rows = random_candidate_rows(onto.size(), cfg.retrieval.m, derive_seed(cfg.seed, kSslCandidateStream, i));
        }
        out.push_back({seqs[i], std::move(rows)});
    }
    return out;
}

MetricsReport score_report(const std::vector<PredictionSet>& preds, const std::vector<PredictionSet>& golds,
                           const MeshOntology& onto)
{
    return evaluate(preds, golds, &onto);
}

std::vector<PredictionSet> only_majors(std::vector<PredictionSet> sets, const MeshOntology& onto)
{
    for (auto& s : sets) {
        std::erase_if(s.labels, [&](const std::string& id) {
            const auto pos = onto.find(id);
            return pos && onto.node(*pos).kind == NodeKind::supplementary;
        });
    }
    return sets;
}

// --- stages --------------------------------------------------------------------

void run_prep(Context& cx)
{
    auto inputs = cx.source_inputs();
    inputs.push_back(Context::configured(cx.cfg.train_corpus, "train"));
    stage(cx, "prep", inputs, [&] {
        const Vocabulary vocab = build_vocabulary(cx.train(), cx.cfg.vocab_size);
        vocab.save(cx.at(artifact::vocab));
        // Surface unusable documents now rather than in a later stage.
        preprocess_corpus(cx.train(), vocab, cx.cfg.model.max_sequence_length);
        return std::vector<fs::path>{cx.at(artifact::vocab)};
    });
}

void run_index(Context& cx)
{
    cx.require(artifact::vocab, "prep");
    auto inputs = cx.source_inputs();
    inputs.push_back(Context::configured(cx.cfg.train_corpus, "train"));
    inputs.push_back(cx.at(artifact::vocab));
    if (cx.cfg.embedding_init == "file") {
        inputs.push_back(Context::configured(cx.cfg.embeddings, "embeddings"));
    }
    stage(cx, "index", inputs, [&] {
        const CorpusStore& train = cx.train();
        const auto seqs = cx.sequences(train);
        const TermWeighting w = TermWeighting::from_corpus(train, cx.vocab(), cx.cfg.weighting, cx.cfg.k1, cx.cfg.b);
        const TokenEmbeddings emb = cx.word_vectors();
        const DocIndex index = build_index(train, seqs, emb, w);
        save_retrieval_index(cx.at(artifact::index), index, w, emb);
        return std::vector<fs::path>{cx.at(artifact::index), cx.at(artifact::index_ids)};
    });
}

void run_retrieve(Context& cx)
{
    cx.require(artifact::index, "index");
    auto inputs = cx.source_inputs();
    inputs.push_back(Context::configured(cx.cfg.train_corpus, "train"));
    for (const auto* p : {&cx.cfg.test_corpus, &cx.cfg.ssl_corpus}) {
        if (!p->empty()) {
            inputs.push_back(*p);
        }
    }
    inputs.push_back(cx.at(artifact::vocab));
    inputs.push_back(cx.at(artifact::index));
    inputs.push_back(cx.at(artifact::index_ids));
    stage(cx, "retrieve", inputs, [&] {
        const RetrievalIndex ri = load_retrieval_index(cx.at(artifact::index));
        auto retrieve = [&](const CorpusStore& corpus, RetrievalMode mode) {
            return retrieve_candidates(corpus, cx.sequences(corpus), ri.index, ri.embeddings, ri.weighting,
                                       cx.cfg.retrieval, mode);
        };
        std::vector<fs::path> outputs;
        std::string report;
        const CorpusStore& train = cx.train();
        save_candidates(cx.at(artifact::candidates_train), retrieve(train, RetrievalMode::training));
        const auto train_eval = retrieve(train, RetrievalMode::evaluation);
        save_candidates(cx.at(artifact::candidates_train_eval), train_eval);
        outputs.push_back(cx.at(artifact::candidates_train));
        outputs.push_back(cx.at(artifact::candidates_train_eval));
        report += fmt::format("k={}\nm={}\ntrain_recall={}\n", cx.cfg.retrieval.k, cx.cfg.retrieval.m,
                              candidate_recall(train_eval, gold_sets(train, false)));
        if (!cx.cfg.test_corpus.empty()) {
            const auto test = retrieve(cx.test(), RetrievalMode::evaluation);
            save_candidates(cx.at(artifact::candidates_test), test);
            outputs.push_back(cx.at(artifact::candidates_test));
            report += fmt::format("test_recall={}\n", candidate_recall(test, gold_sets(cx.test(), false)));
        }
        if (!cx.cfg.ssl_corpus.empty()) {
            save_candidates(cx.at(artifact::candidates_ssl), retrieve(cx.ssl(), RetrievalMode::evaluation));
            outputs.push_back(cx.at(artifact::candidates_ssl));
        }
        write_text(cx.at(artifact::retrieval_report), report);
        outputs.push_back(cx.at(artifact::retrieval_report));
        return outputs;
    });
}

void run_pretrain(Context& cx)
{
    Context::configured(cx.cfg.ssl_corpus, "ssl");
    cx.require(artifact::candidates_ssl, "retrieve");
    auto inputs = cx.source_inputs();
    inputs.push_back(cx.cfg.ssl_corpus);
    inputs.push_back(cx.at(artifact::vocab));
    inputs.push_back(cx.at(artifact::index));
    inputs.push_back(cx.at(artifact::candidates_ssl));
    stage(cx, "pretrain", inputs, [&] {
        const CorpusStore& ssl = cx.ssl();
        const auto seqs = cx.sequences(ssl);
        const auto cands =
            align_candidates(ssl, load_candidates(cx.at(artifact::candidates_ssl)), cx.at(artifact::candidates_ssl));
        const RetrievalIndex ri = load_retrieval_index(cx.at(artifact::index));
        ModelParams init = cx.fresh_model(ri.embeddings);
        const TrainResult r = pretrain(std::move(init), pretrain_examples(ssl, seqs, cands, cx.ontology(), cx.cfg),
                                       cx.pretrain_config());
        save_checkpoint(cx.at(artifact::pretrained), r.params);
        write_report(cx.at("pretrain_log.txt"), cx.at("pretrain_summary.txt"), r.report);
        write_timing(cx.at("pretrain_timing.txt"), r.report);
        return std::vector<fs::path>{cx.at(artifact::pretrained), cx.at("pretrain_log.txt"),
                                     cx.at("pretrain_summary.txt")};
    });
}

void run_finetune_stage(Context& cx)
{
    cx.require(artifact::candidates_train, "retrieve");
    cx.require(artifact::candidates_train_eval, "retrieve");
    if (cx.cfg.finetune_from_pretrained) {
        cx.require(artifact::pretrained, "pretrain");
    }
    auto inputs = cx.source_inputs();
    inputs.push_back(Context::configured(cx.cfg.train_corpus, "train"));
    inputs.push_back(cx.at(artifact::vocab));
    inputs.push_back(cx.at(artifact::index));
    inputs.push_back(cx.at(artifact::candidates_train));
    inputs.push_back(cx.at(artifact::candidates_train_eval));
    if (cx.cfg.finetune_from_pretrained) {
        inputs.push_back(cx.at(artifact::pretrained));
    }
    stage(cx, "finetune", inputs, [&] {
        const CorpusStore& train = cx.train();
        const auto seqs = cx.sequences(train);
        const auto cand_train = align_candidates(train, load_candidates(cx.at(artifact::candidates_train)),
                                                 cx.at(artifact::candidates_train));
        const auto cand_eval = align_candidates(train, load_candidates(cx.at(artifact::candidates_train_eval)),
                                                cx.at(artifact::candidates_train_eval));
        ModelParams init = cx.cfg.finetune_from_pretrained
                               ? cx.checkpoint(artifact::pretrained, "pretrain")
                               : cx.fresh_model(load_retrieval_index(cx.at(artifact::index)).embeddings);
        const TrainConfig tc = cx.finetune_config();
        const FinetuneData data = finetune_data(train, seqs, cand_train, cand_eval, cx.ontology(),
                                                cx.cfg.joint_supplementary, tc.validation_fraction);
        const TrainResult r = run_finetune(std::move(init), data, tc);
        save_checkpoint(cx.at(artifact::model), r.params);
        write_report(cx.at("finetune_log.txt"), cx.at("finetune_summary.txt"), r.report);
        write_timing(cx.at("finetune_timing.txt"), r.report);
        return std::vector<fs::path>{cx.at(artifact::model), cx.at("finetune_log.txt"),
                                     cx.at("finetune_summary.txt")};
    });
}

void run_thresholds_fit(Context& cx)
{
    cx.require(artifact::model, "finetune");
    cx.require(artifact::candidates_train_eval, "retrieve");
    auto inputs = cx.source_inputs();
    inputs.push_back(Context::configured(cx.cfg.train_corpus, "train"));
    inputs.push_back(cx.at(artifact::vocab));
    inputs.push_back(cx.at(artifact::model));
    inputs.push_back(cx.at(artifact::candidates_train_eval));
    stage(cx, "thresholds-fit", inputs, [&] {
        const CorpusStore& train = cx.train();
        const auto seqs = cx.sequences(train);
        const auto cands = align_candidates(train, load_candidates(cx.at(artifact::candidates_train_eval)),
                                            cx.at(artifact::candidates_train_eval));
        const ModelParams params = cx.checkpoint(artifact::model, "finetune");
        const auto scores = score_corpus(params, train, seqs, cands, cx.ontology(), cx.cfg.joint_supplementary);
        const ThresholdFit fit = fit_thresholds(scores, gold_sets(train, cx.cfg.joint_supplementary));
        save_candidates(cx.at(artifact::scores_train), scores);
        save_thresholds(cx.at(artifact::thresholds), fit.table);
        std::string trace = fmt::format("sweeps={}\n", fit.sweeps);
        for (std::size_t i = 0; i < fit.trace.size(); ++i) {
            trace += fmt::format("move={} micro_f={}\n", i, fit.trace[i]);
        }
        write_text(cx.at(artifact::threshold_trace), trace);
        return std::vector<fs::path>{cx.at(artifact::scores_train), cx.at(artifact::thresholds),
                                     cx.at(artifact::threshold_trace)};
    });
}

void run_predict(Context& cx)
{
    cx.require(artifact::thresholds, "thresholds fit");
    cx.require(artifact::model, "finetune");
    cx.require(artifact::candidates_test, "retrieve");
    auto inputs = cx.source_inputs();
    inputs.push_back(Context::configured(cx.cfg.test_corpus, "test"));
    inputs.push_back(cx.at(artifact::vocab));
    inputs.push_back(cx.at(artifact::model));
    inputs.push_back(cx.at(artifact::thresholds));
    inputs.push_back(cx.at(artifact::candidates_test));
    stage(cx, "predict", inputs, [&] {
        const CorpusStore& test = cx.test();
        const auto seqs = cx.sequences(test);
        const auto cands = align_candidates(test, load_candidates(cx.at(artifact::candidates_test)),
                                            cx.at(artifact::candidates_test));
        const ModelParams params = cx.checkpoint(artifact::model, "finetune");
        const auto scores = score_corpus(params, test, seqs, cands, cx.ontology(), cx.cfg.joint_supplementary);
        save_candidates(cx.at(artifact::scores_test), scores);
        save_label_file(cx.at(artifact::predictions_test),
                        apply_thresholds(scores, load_thresholds(cx.at(artifact::thresholds))));
        return std::vector<fs::path>{cx.at(artifact::scores_test), cx.at(artifact::predictions_test)};
    });
}

void run_thresholds_apply(Context& cx)
{
    cx.require(artifact::thresholds, "thresholds fit");
    cx.require(artifact::scores_test, "predict");
    stage(cx, "thresholds-apply", {cx.at(artifact::thresholds), cx.at(artifact::scores_test)}, [&] {
        save_label_file(cx.at(artifact::predictions_test), apply_thresholds(load_candidates(cx.at(artifact::scores_test)),
                                                                            load_thresholds(cx.at(artifact::thresholds))));
        return std::vector<fs::path>{cx.at(artifact::predictions_test)};
    });
}

void run_evaluate(Context& cx)
{
    if (cx.opt.gold || cx.opt.pred) {
        if (!cx.opt.gold || !cx.opt.pred) {
            throw UsageError("evaluate needs both --gold and --pred");
        }
        std::optional<MeshOntology> onto;
        if (cx.opt.ontology) {
            onto = load_ontology(*cx.opt.ontology);
        }
        const MetricsReport r =
            evaluate(load_label_file(*cx.opt.pred), load_label_file(*cx.opt.gold), onto ? &*onto : nullptr);
        fmt::print("{}\n{}", format_table(r), format_keyvalues(r));
        return;
    }
    cx.require(artifact::predictions_test, "predict");
    auto inputs = cx.source_inputs();
    inputs.push_back(Context::configured(cx.cfg.test_corpus, "test"));
    inputs.push_back(cx.at(artifact::predictions_test));
    stage(cx, "evaluate", inputs, [&] {
        const CorpusStore& test = cx.test();
        const bool joint = cx.cfg.joint_supplementary;
        const auto golds = as_prediction_sets(test, gold_sets(test, joint));
        const auto preds = load_label_file(cx.at(artifact::predictions_test));
        save_label_file(cx.at(artifact::gold_test), golds);
        const MetricsReport r = score_report(preds, golds, cx.ontology());
        write_text(cx.at(artifact::metrics_table), format_table(r));
        write_text(cx.at(artifact::metrics_kv), format_keyvalues(r));
        std::vector<fs::path> outputs{cx.at(artifact::gold_test), cx.at(artifact::metrics_table),
                                      cx.at(artifact::metrics_kv)};
        if (joint) {
            const MetricsReport m =
                score_report(only_majors(preds, cx.ontology()), only_majors(golds, cx.ontology()), cx.ontology());
            write_text(cx.at(artifact::metrics_major_kv), format_keyvalues(m));
            outputs.push_back(cx.at(artifact::metrics_major_kv));
        }
        if (!cx.opt.quiet) {
            fmt::print("{}", format_table(r));
        }
        return outputs;
    });
}

std::vector<EfficiencyPoint> curve_points(Context& cx)
{
    const PipelineConfig& cfg = cx.cfg;
    const MeshOntology& onto = cx.ontology();
    const bool joint = cfg.joint_supplementary;
    const CorpusStore& test = cx.test();
    const auto test_seqs = cx.sequences(test);
    const auto test_golds = as_prediction_sets(test, gold_sets(test, joint));
    const TokenEmbeddings emb = cx.word_vectors();
    const std::optional<ModelParams> pretrained =
        cfg.finetune_from_pretrained ? std::optional(cx.checkpoint(artifact::pretrained, "pretrain")) : std::nullopt;

    std::vector<EfficiencyPoint> points;
    const auto prefixes = chronological_split(cx.train(), cfg.fractions);
    for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
        const CorpusStore& prefix = prefixes[f];
        EfficiencyPoint pt{cfg.fractions[f], prefix.size(), {}};
        std::vector<PredictionSet> preds;
        if (prefix.empty()) {
            // No annotated documents: nothing to retrieve from and nothing
            // to fine-tune on.
            for (const auto& d : test.documents()) {
                preds.push_back({d.id, {}});
            }
        } else {
            const auto seqs = cx.sequences(prefix);
            const TermWeighting w = TermWeighting::from_corpus(prefix, cx.vocab(), cfg.weighting, cfg.k1, cfg.b);
            const DocIndex index = build_index(prefix, seqs, emb, w);
            const auto cand_train =
                retrieve_candidates(prefix, seqs, index, emb, w, cfg.retrieval, RetrievalMode::training);
            const auto cand_eval =
                retrieve_candidates(prefix, seqs, index, emb, w, cfg.retrieval, RetrievalMode::evaluation);
            const auto cand_test =
                retrieve_candidates(test, test_seqs, index, emb, w, cfg.retrieval, RetrievalMode::evaluation);
            const TrainConfig tc = cx.finetune_config();
            const FinetuneData data =
                finetune_data(prefix, seqs, cand_train, cand_eval, onto, joint, tc.validation_fraction);
            ModelParams init = pretrained ? *pretrained : cx.fresh_model(emb);
            const TrainResult r = run_finetune(std::move(init), data, tc);
            const auto train_scores = score_corpus(r.params, prefix, seqs, cand_eval, onto, joint);
            const ThresholdFit fit = fit_thresholds(train_scores, gold_sets(prefix, joint));
            preds = apply_thresholds(score_corpus(r.params, test, test_seqs, cand_test, onto, joint), fit.table);
        }
        pt.metrics = score_report(preds, test_golds, onto);
        note(cx.opt, fmt::format("efficiency-curve: fraction {} ({} docs) MiF {:.4f}", pt.fraction, pt.train_docs,
                                 pt.metrics.mif));
        points.push_back(std::move(pt));
    }
    return points;
}

void run_efficiency_curve(Context& cx)
{
    cx.require(artifact::vocab, "prep");
    auto inputs = cx.source_inputs();
    inputs.push_back(Context::configured(cx.cfg.train_corpus, "train"));
    inputs.push_back(Context::configured(cx.cfg.test_corpus, "test"));
    inputs.push_back(cx.at(artifact::vocab));
    if (cx.cfg.finetune_from_pretrained) {
        cx.require(artifact::pretrained, "pretrain");
        inputs.push_back(cx.at(artifact::pretrained));
    }
    if (cx.cfg.embedding_init == "file") {
        inputs.push_back(Context::configured(cx.cfg.embeddings, "embeddings"));
    }
    stage(cx, "efficiency-curve", inputs, [&] {
        const auto points = curve_points(cx);
        std::string tsv = "fraction\ttrain_docs\tMiF\tMaF\tLCA-F\n";
        std::string dat = "# fraction MiF\n";
        for (const auto& p : points) {
            tsv += fmt::format("{}\t{}\t{}\t{}\t{}\n", p.fraction, p.train_docs, p.metrics.mif, p.metrics.maf,
                               p.metrics.lca_f);
            dat += fmt::format("{} {}\n", p.fraction, p.metrics.mif);
        }
        write_text(cx.at(artifact::efficiency_tsv), tsv);
        write_text(cx.at(artifact::efficiency_dat), dat);
        return std::vector<fs::path>{cx.at(artifact::efficiency_tsv), cx.at(artifact::efficiency_dat)};
    });
}

}  // namespace

std::vector<EfficiencyPoint> efficiency_curve(const PipelineConfig& cfg, const RunOptions& options)
{
    Context cx(cfg, options);
    return curve_points(cx);
}

void run_command(Command command, const PipelineConfig& cfg, const RunOptions& options)
{
    cfg.validate();
    Context cx(cfg, options);
    switch (command) {
    case Command::prep:
        return run_prep(cx);
    case Command::index:
        return run_index(cx);
    case Command::retrieve:
        return run_retrieve(cx);
    case Command::pretrain:
        return run_pretrain(cx);
    case Command::finetune:
        return run_finetune_stage(cx);
    case Command::thresholds_fit:
        return run_thresholds_fit(cx);
    case Command::thresholds_apply:
        return run_thresholds_apply(cx);
    case Command::predict:
        return run_predict(cx);
    case Command::evaluate:
        return run_evaluate(cx);
    case Command::efficiency_curve:
        return run_efficiency_curve(cx);
    case Command::all:
        run_prep(cx);
        run_index(cx);
        run_retrieve(cx);
        if (cfg.finetune_from_pretrained) {
            run_pretrain(cx);
        }
        run_finetune_stage(cx);
        run_thresholds_fit(cx);
        run_predict(cx);
        run_evaluate(cx);
        return;
    }
}

}  // namespace meshdex
