#include "meshdex/manifest.hpp"

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>
#include <fmt/os.h>
#include <openssl/evp.h>

#include "meshdex/error.hpp"

namespace meshdex {

namespace {

struct Sha256 {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

    Sha256()
    {
        if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
            throw NumericError("cannot initialise sha256");
        }
    }
    void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx.get(), data, n); }
    std::string hex()
    {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out += fmt::format("{:02x}", md[i]);
        }
        return out;
    }
};

}  // namespace

std::string sha256_hex(std::string_view bytes)
{
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read '{}' for hashing", path.string()));
    }
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

Manifest make_manifest(std::string stage, std::uint64_t seed, const std::vector<std::filesystem::path>& inputs,
                       const std::vector<std::filesystem::path>& outputs, const std::filesystem::path& out_dir,
                       std::string config)
{
    Manifest m{std::move(stage), seed, {}, {}, std::move(config)};
    auto label = [&](const std::filesystem::path& p) {
        const auto rel = p.lexically_relative(out_dir);
        return !rel.empty() && *rel.begin() != ".." ? rel.generic_string() : p.generic_string();
    };
    for (const auto& p : inputs) {
        m.inputs.push_back({label(p), sha256_file(p)});
    }
    for (const auto& p : outputs) {
        m.outputs.push_back({label(p), sha256_file(p)});
    }
    return m;
}

std::string format_manifest(const Manifest& m)
{
    std::string out = fmt::format("stage {}\nseed {}\n", m.stage, m.seed);
    for (const auto& e : m.inputs) {
        out += fmt::format("input {} {}\n", e.hash, e.label);
    }
    for (const auto& e : m.outputs) {
        out += fmt::format("output {} {}\n", e.hash, e.label);
    }
    out += "config\n";
    out += m.config;
    return out;
}

Manifest parse_manifest(std::string_view text)
{
    Manifest m;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line == "config") {
            std::stringstream rest;
            rest << in.rdbuf();
            m.config = rest.str();
            break;
        }
        const auto sp = line.find(' ');
        if (sp == std::string::npos) {
            throw DataError(fmt::format("malformed manifest line '{}'", line));
        }
        const std::string key = line.substr(0, sp);
        const std::string rest = line.substr(sp + 1);
        if (key == "stage") {
            m.stage = rest;
        } else if (key == "seed") {
            m.seed = std::stoull(rest);
        } else if (key == "input" || key == "output") {
            const auto sp2 = rest.find(' ');
            if (sp2 == std::string::npos) {
                throw DataError(fmt::format("malformed manifest line '{}'", line));
            }
            (key == "input" ? m.inputs : m.outputs).push_back({rest.substr(sp2 + 1), rest.substr(0, sp2)});
        } else {
            throw DataError(fmt::format("unknown manifest field '{}'", key));
        }
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m)
{
    auto out = fmt::output_file(path.string());
    out.print("{}", format_manifest(m));
}

Manifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read manifest '{}'", path.string()));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str());
}

bool manifest_current(const std::filesystem::path& path, const Manifest& expected_inputs,
                      const std::filesystem::path& out_dir)
{
    if (!std::filesystem::exists(path)) {
        return false;
    }
    Manifest old;
    try {
        old = read_manifest(path);
    } catch (const Error&) {
        return false;
    }
    if (old.stage != expected_inputs.stage || old.seed != expected_inputs.seed ||
        old.config != expected_inputs.config || old.inputs != expected_inputs.inputs || old.outputs.empty()) {
        return false;
    }
    for (const auto& e : old.outputs) {
        const std::filesystem::path p = out_dir / e.label;
        if (!std::filesystem::exists(p) || sha256_file(p) != e.hash) {
            return false;
        }
    }
    return true;
}

}  // namespace meshdex
