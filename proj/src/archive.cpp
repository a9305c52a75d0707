#include "meshdex/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "meshdex/error.hpp"

namespace meshdex {
namespace {

constexpr char kMagic[4] = {'M', 'D', 'X', 'A'};

template <typename T>
void put(std::string& out, T value)
{
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get()
    {
        need(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return value;
    }

    std::string take(std::size_t n)
    {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const
    {
        if (bytes_.size() - pos_ < n) {
            throw DataError("truncated tensor archive");
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

NamedTensor tensor_from_matrix(std::string name, const Matrix& m)
{
    return NamedTensor{std::move(name), {m.rows(), m.cols()}, ElementType::float64, m.values()};
}

Matrix matrix_from_tensor(const NamedTensor& t)
{
    if (t.dims.size() == 1) {
        return Matrix(1, t.dims[0], t.values);
    }
    if (t.dims.size() != 2) {
        throw DataError(fmt::format("tensor '{}' has rank {}, expected 2", t.name, t.dims.size()));
    }
    return Matrix(t.dims[0], t.dims[1], t.values);
}

std::string encode_archive(const std::vector<NamedTensor>& tensors)
{
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kArchiveVersion);
    put<std::uint64_t>(out, tensors.size());
    for (const auto& t : tensors) {
        std::uint64_t count = 1;
        for (const auto d : t.dims) {
            count *= d;
        }
        if (count != t.values.size()) {
            throw DataError(fmt::format("tensor '{}' dims do not match its {} values", t.name,
                                        t.values.size()));
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (const auto d : t.dims) {
            put<std::uint64_t>(out, d);
        }
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.type));
        for (const double v : t.values) {
            if (t.type == ElementType::float64) {
                put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
            } else {
                put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            }
        }
    }
    return out;
}

std::vector<NamedTensor> decode_archive(const std::string& bytes)
{
    Reader in(bytes);
    if (in.take(4) != std::string(kMagic, sizeof(kMagic))) {
        throw DataError("not a tensor archive (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kArchiveVersion) {
        throw DataError(fmt::format("unsupported tensor archive version {}", version));
    }
    const auto count = in.get<std::uint64_t>();
    std::vector<NamedTensor> tensors;
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = in.take(in.get<std::uint32_t>());
        const auto rank = in.get<std::uint32_t>();
        std::uint64_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            t.dims.push_back(in.get<std::uint64_t>());
            n *= t.dims.back();
        }
        const auto tag = in.get<std::uint8_t>();
        if (tag != static_cast<std::uint8_t>(ElementType::float64) &&
            tag != static_cast<std::uint8_t>(ElementType::float32)) {
            throw DataError(fmt::format("tensor '{}' has unknown element type {}", t.name, tag));
        }
        t.type = static_cast<ElementType>(tag);
        t.values.resize(n);
        for (auto& v : t.values) {
            if (t.type == ElementType::float64) {
                v = std::bit_cast<double>(in.get<std::uint64_t>());
            } else {
                v = static_cast<double>(std::bit_cast<float>(in.get<std::uint32_t>()));
            }
        }
        tensors.push_back(std::move(t));
    }
    if (!in.done()) {
        throw DataError("trailing bytes after tensor archive");
    }
    return tensors;
}

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors)
{
    const std::string bytes = encode_archive(tensors);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError(fmt::format("cannot write archive '{}'", path.string()));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedTensor> read_archive(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read archive '{}'", path.string()));
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return decode_archive(buf.str());
    } catch (const DataError& e) {
        throw DataError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name)
{
    for (const auto& t : tensors) {
        if (t.name == name) {
            return t;
        }
    }
    throw DataError(fmt::format("archive has no tensor '{}'", name));
}

}  // namespace meshdex
