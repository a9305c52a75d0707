#include "meshdex/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "meshdex/error.hpp"

namespace meshdex {

Profile parse_profile(std::string_view name)
{
    if (name == "base") {
        return Profile::base;
    }
    if (name == "large") {
        return Profile::large;
    }
    throw UsageError(fmt::format("unknown profile '{}' (expected base or large)", name));
}

std::string_view profile_name(Profile p)
{
    return p == Profile::base ? "base" : "large";
}

void apply_profile(PipelineConfig& cfg, Profile p)
{
    cfg.profile = p;
    if (p == Profile::base) {
        cfg.model.d_model = 256;
        cfg.model.n_layers = 4;
        cfg.model.d_ff = 256;
        cfg.pretrain.learning_rate = cfg.finetune.learning_rate = 5e-4;
    } else {
        cfg.model.d_model = 1024;
        cfg.model.n_layers = 6;
        cfg.model.d_ff = 512;
        cfg.pretrain.learning_rate = cfg.finetune.learning_rate = 1e-4;
    }
}

void PipelineConfig::validate() const
{
    if (retrieval.k == 0 || retrieval.m == 0) {
        throw UsageError("retrieval k and m must be positive");
    }
    if (!(k1 > 0.0) || !(b >= 0.0 && b <= 1.0)) {
        throw UsageError(fmt::format("bm25 parameters out of range (k1={}, b={})", k1, b));
    }
    if (vocab_size <= kReservedTokens) {
        throw UsageError(fmt::format("vocab_size must exceed {}", kReservedTokens));
    }
    if (embedding_init != "file" && embedding_init != "random") {
        throw UsageError(fmt::format("embedding init must be file or random, got '{}'", embedding_init));
    }
    double prev = -1.0;
    for (const double f : fractions) {
        if (!(f >= 0.0 && f <= 1.0) || f < prev) {
            throw UsageError("fractions must be ascending values in [0, 1]");
        }
        prev = f;
    }
    ModelConfig m = model;
    m.vocab_size = kReservedTokens + 1;
    m.label_count = 1;
    m.validate();
    pretrain.validate();
    finetune.validate();
}

namespace {

struct Value {
    enum class Kind { string, bare, list } kind = Kind::bare;
    std::string text;
    std::vector<std::string> items;
};

std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Drops a trailing comment that is not inside quotes.
std::string_view strip_comment(std::string_view s)
{
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') {
            quoted = !quoted;
        } else if (s[i] == '#' && !quoted) {
            return s.substr(0, i);
        }
    }
    return s;
}

std::string unquote(std::string_view s, const std::string& where)
{
    if (s.size() < 2 || s.front() != '"' || s.back() != '"') {
        throw UsageError(fmt::format("{}: unterminated string", where));
    }
    return std::string(s.substr(1, s.size() - 2));
}

Value parse_value(std::string_view raw, const std::string& where, bool lenient)
{
    raw = trim(raw);
    Value v;
    if (raw.empty()) {
        throw UsageError(fmt::format("{}: missing value", where));
    }
    if (raw.front() == '"') {
        v.kind = Value::Kind::string;
        v.text = unquote(raw, where);
        return v;
    }
    if (raw.front() == '[') {
        if (raw.back() != ']') {
            throw UsageError(fmt::format("{}: unterminated list", where));
        }
        v.kind = Value::Kind::list;
        std::string_view body = raw.substr(1, raw.size() - 2);
        while (!trim(body).empty()) {
            const auto comma = body.find(',');
            const auto item = trim(body.substr(0, comma));
            if (item.empty()) {
                throw UsageError(fmt::format("{}: empty list item", where));
            }
            v.items.emplace_back(item);
            if (comma == std::string_view::npos) {
                break;
            }
            body = body.substr(comma + 1);
        }
        return v;
    }
    v.text = std::string(raw);
    if (lenient && v.text.find(',') != std::string::npos) {
        // Flag form of a list: 0,0.5,1
        v.kind = Value::Kind::list;
        std::stringstream ss(v.text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            v.items.emplace_back(trim(item));
        }
    }
    return v;
}

double to_double(std::string_view s, const std::string& key)
{
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw UsageError(fmt::format("{}: expected a number, got '{}'", key, s));
    }
    return x;
}

std::uint64_t to_unsigned(std::string_view s, const std::string& key)
{
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw UsageError(fmt::format("{}: expected a non-negative integer, got '{}'", key, s));
    }
    return x;
}

struct Setting {
    std::string key;
    std::function<void(PipelineConfig&, const Value&, const std::filesystem::path& base)> set;
    std::function<std::string(const PipelineConfig&)> get;  // already in file syntax
};

std::string in_quotes(std::string_view s)
{
    return fmt::format("\"{}\"", s);
}

const Value& scalar(const Value& v, const std::string& key)
{
    if (v.kind == Value::Kind::list) {
        throw UsageError(fmt::format("{}: expected a single value", key));
    }
    return v;
}

Setting path_setting(std::string key, std::filesystem::path PipelineConfig::*member)
{
    return {key,
            [key, member](PipelineConfig& c, const Value& v, const std::filesystem::path& base) {
                std::filesystem::path p = scalar(v, key).text;
                c.*member = p.empty() || p.is_absolute() || base.empty() ? p : base / p;
            },
            [member](const PipelineConfig& c) { return in_quotes((c.*member).string()); }};
}

template <class T, class Obj>
Setting count_setting(std::string key, Obj PipelineConfig::*obj, T Obj::*member)
{
    return {key,
            [key, obj, member](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                (c.*obj).*member = static_cast<T>(to_unsigned(scalar(v, key).text, key));
            },
            [obj, member](const PipelineConfig& c) { return fmt::format("{}", (c.*obj).*member); }};
}

template <class Obj>
Setting real_setting(std::string key, Obj PipelineConfig::*obj, double Obj::*member)
{
    return {key,
            [key, obj, member](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                (c.*obj).*member = to_double(scalar(v, key).text, key);
            },
            [obj, member](const PipelineConfig& c) { return fmt::format("{}", (c.*obj).*member); }};
}

void add_train_settings(std::vector<Setting>& s, const std::string& section, TrainConfig PipelineConfig::*tc)
{
    s.push_back(real_setting(section + ".learning_rate", tc, &TrainConfig::learning_rate));
    s.push_back(count_setting(section + ".batch_size", tc, &TrainConfig::batch_size));
    s.push_back(count_setting(section + ".max_epochs", tc, &TrainConfig::max_epochs));
    s.push_back(count_setting(section + ".patience", tc, &TrainConfig::patience));
    s.push_back(real_setting(section + ".mask_rate", tc, &TrainConfig::mask_rate));
    s.push_back(real_setting(section + ".validation_fraction", tc, &TrainConfig::validation_fraction));
    s.push_back(real_setting(section + ".clip_norm", tc, &TrainConfig::clip_norm));
    s.push_back(count_setting(section + ".lanes", tc, &TrainConfig::lanes));
}

bool to_bool(const Value& v, const std::string& key)
{
    if (v.text == "true") {
        return true;
    }
    if (v.text == "false") {
        return false;
    }
    throw UsageError(fmt::format("{}: expected true or false, got '{}'", key, v.text));
}

const std::vector<Setting>& settings()
{
    static const std::vector<Setting> table = [] {
        std::vector<Setting> s;
        s.push_back({"profile",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.profile = parse_profile(scalar(v, "profile").text);
                     },
                     [](const PipelineConfig& c) { return in_quotes(profile_name(c.profile)); }});
        s.push_back({"seed",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.seed = to_unsigned(scalar(v, "seed").text, "seed");
                     },
                     [](const PipelineConfig& c) { return fmt::format("{}", c.seed); }});
        s.push_back({"joint_supplementary",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.joint_supplementary = to_bool(scalar(v, "joint_supplementary"), "joint_supplementary");
                     },
                     [](const PipelineConfig& c) { return c.joint_supplementary ? "true" : "false"; }});
        s.push_back({"fractions",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.fractions.clear();
                         if (v.kind != Value::Kind::list) {
                             c.fractions.push_back(to_double(v.text, "fractions"));
                             return;
                         }
                         for (const auto& item : v.items) {
                             c.fractions.push_back(to_double(item, "fractions"));
                         }
                     },
                     [](const PipelineConfig& c) { return fmt::format("[{}]", fmt::join(c.fractions, ", ")); }});
        s.push_back(path_setting("paths.train", &PipelineConfig::train_corpus));
        s.push_back(path_setting("paths.test", &PipelineConfig::test_corpus));
        s.push_back(path_setting("paths.ssl", &PipelineConfig::ssl_corpus));
        s.push_back(path_setting("paths.ontology", &PipelineConfig::ontology));
        s.push_back(path_setting("paths.embeddings", &PipelineConfig::embeddings));
        s.push_back(path_setting("paths.stopwords", &PipelineConfig::stopwords));
        s.push_back(path_setting("paths.out", &PipelineConfig::out_dir));
        s.push_back({"data.embedding_init",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.embedding_init = scalar(v, "data.embedding_init").text;
                     },
                     [](const PipelineConfig& c) { return in_quotes(c.embedding_init); }});
        s.push_back({"data.embedding_dim",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.embedding_dim = to_unsigned(scalar(v, "data.embedding_dim").text, "data.embedding_dim");
                     },
                     [](const PipelineConfig& c) { return fmt::format("{}", c.embedding_dim); }});
        s.push_back({"data.vocab_size",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.vocab_size = to_unsigned(scalar(v, "data.vocab_size").text, "data.vocab_size");
                     },
                     [](const PipelineConfig& c) { return fmt::format("{}", c.vocab_size); }});
        s.push_back({"retrieval.weighting",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.weighting = parse_weighting_scheme(scalar(v, "retrieval.weighting").text);
                     },
                     [](const PipelineConfig& c) { return in_quotes(weighting_scheme_name(c.weighting)); }});
        s.push_back({"retrieval.k1",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.k1 = to_double(scalar(v, "retrieval.k1").text, "retrieval.k1");
                     },
                     [](const PipelineConfig& c) { return fmt::format("{}", c.k1); }});
        s.push_back({"retrieval.b",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         c.b = to_double(scalar(v, "retrieval.b").text, "retrieval.b");
                     },
                     [](const PipelineConfig& c) { return fmt::format("{}", c.b); }});
        s.push_back(count_setting("retrieval.k", &PipelineConfig::retrieval, &RetrievalSettings::k));
        s.push_back(count_setting("retrieval.m", &PipelineConfig::retrieval, &RetrievalSettings::m));
        s.push_back(count_setting("model.d_model", &PipelineConfig::model, &ModelConfig::d_model));
        s.push_back(count_setting("model.n_layers", &PipelineConfig::model, &ModelConfig::n_layers));
        s.push_back(count_setting("model.d_ff", &PipelineConfig::model, &ModelConfig::d_ff));
        s.push_back(count_setting("model.n_heads", &PipelineConfig::model, &ModelConfig::n_heads));
        s.push_back(count_setting("model.max_sequence_length", &PipelineConfig::model,
                                  &ModelConfig::max_sequence_length));
        s.push_back(real_setting("model.dropout", &PipelineConfig::model, &ModelConfig::dropout));
        add_train_settings(s, "pretrain", &PipelineConfig::pretrain);
        add_train_settings(s, "finetune", &PipelineConfig::finetune);
        s.push_back({"finetune.init",
                     [](PipelineConfig& c, const Value& v, const std::filesystem::path&) {
                         const std::string& t = scalar(v, "finetune.init").text;
                         if (t != "pretrained" && t != "scratch") {
                             throw UsageError(
                                 fmt::format("finetune.init must be pretrained or scratch, got '{}'", t));
                         }
                         c.finetune_from_pretrained = t == "pretrained";
                     },
                     [](const PipelineConfig& c) {
                         return in_quotes(c.finetune_from_pretrained ? "pretrained" : "scratch");
                     }});
        return s;
    }();
    return table;
}

const Setting& lookup(std::string_view key)
{
    for (const auto& s : settings()) {
        if (s.key == key) {
            return s;
        }
    }
    throw UsageError(fmt::format("unknown config key '{}'", key));
}

std::vector<std::pair<std::string, Value>> parse_entries(std::string_view text)
{
    std::vector<std::pair<std::string, Value>> out;
    std::string section;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        ++lineno;
        const std::string where = fmt::format("config line {}", lineno);
        const auto line = trim(strip_comment(text.substr(start, end - start)));
        start = end + 1;
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw UsageError(fmt::format("{}: malformed section header", where));
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw UsageError(fmt::format("{}: expected key = value", where));
        }
        const auto name = trim(line.substr(0, eq));
        const std::string key = section.empty() ? std::string(name) : section + "." + std::string(name);
        lookup(key);
        out.emplace_back(key, parse_value(line.substr(eq + 1), where, false));
    }
    return out;
}

PipelineConfig build(const std::vector<std::pair<std::string, Value>>& file_entries,
                     const std::vector<Override>& overrides, const std::filesystem::path& base_dir,
                     const char* env_out)
{
    std::vector<std::pair<std::string, Value>> flag_entries;
    for (const auto& [key, raw] : overrides) {
        lookup(key);
        Value v = parse_value(raw, fmt::format("flag for '{}'", key), true);
        flag_entries.emplace_back(key, std::move(v));
    }
    // The profile preset sits under explicit keys, so resolve it first.
    Profile profile = Profile::base;
    for (const auto* entries : {&file_entries, static_cast<const std::vector<std::pair<std::string, Value>>*>(&flag_entries)}) {
        for (const auto& [key, v] : *entries) {
            if (key == "profile") {
                profile = parse_profile(v.text);
            }
        }
    }
    PipelineConfig cfg;
    apply_profile(cfg, profile);
    for (const auto& [key, v] : file_entries) {
        lookup(key).set(cfg, v, base_dir);
    }
    if (env_out && *env_out) {
        cfg.out_dir = env_out;
    }
    for (const auto& [key, v] : flag_entries) {
        lookup(key).set(cfg, v, {});
    }
    cfg.validate();
    return cfg;
}

}  // namespace

PipelineConfig parse_config_text(std::string_view text, const std::vector<Override>& overrides,
                                 const std::filesystem::path& base_dir)
{
    return build(parse_entries(text), overrides, base_dir, nullptr);
}

PipelineConfig parse_config(const std::optional<std::filesystem::path>& path, const std::vector<Override>& overrides)
{
    std::vector<std::pair<std::string, Value>> entries;
    std::filesystem::path base;
    if (path) {
        std::ifstream in(*path, std::ios::binary);
        if (!in) {
            throw UsageError(fmt::format("cannot read config '{}'", path->string()));
        }
        std::stringstream ss;
        ss << in.rdbuf();
        entries = parse_entries(ss.str());
        base = path->parent_path();
    }
    return build(entries, overrides, base, std::getenv("MESHDEX_OUT"));
}

std::string config_snapshot(const PipelineConfig& cfg)
{
    std::string out;
    std::string section;
    for (const auto& s : settings()) {
        const auto dot = s.key.find('.');
        const std::string sec = dot == std::string::npos ? "" : s.key.substr(0, dot);
        const std::string name = dot == std::string::npos ? s.key : s.key.substr(dot + 1);
        if (sec != section) {
            out += fmt::format("\n[{}]\n", sec);
            section = sec;
        }
        out += fmt::format("{} = {}\n", name, s.get(cfg));
    }
    return out;
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> keys;
    for (const auto& s : settings()) {
        keys.push_back(s.key);
    }
    return keys;
}

}  // namespace meshdex
