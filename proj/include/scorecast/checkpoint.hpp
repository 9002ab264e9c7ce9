#pragma once

// Versioned, line-oriented text checkpoints.
//
//   scorecast-checkpoint 1
//   <key> <value>                       metadata line
//   tensor <name> <rows> <cols>         followed by `rows` lines of `cols`
//   <v> <v> ...                         hexadecimal floats (exact round trip)
//   end
//
// Readers consume entries strictly in the order they were written.

#include <array>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace scorecast {

inline constexpr std::string_view kCheckpointMagic = "scorecast-checkpoint";
inline constexpr int kCheckpointVersion = 1;

class CheckpointWriter {
public:
    explicit CheckpointWriter(std::ostream& out) : out_(out) { out_ << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'; }

    void kv(std::string_view key, std::string_view value) { out_ << key << ' ' << value << '\n'; }
    void kv(std::string_view key, std::size_t value) { kv(key, std::to_string(value)); }
    void kv_double(std::string_view key, double value) { kv(key, hex(value)); }

    void tensor(std::string_view name, const Matrix& m)
    {
        out_ << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (std::size_t r = 0; r < m.rows(); ++r) {
            const auto row = m.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) out_ << (c ? " " : "") << hex(row[c]);
            out_ << '\n';
        }
    }

    void tensor(std::string_view name, std::span<const double> v)
    {
        tensor(name, Matrix(1, v.size(), std::vector<double>(v.begin(), v.end())));
    }

    void finish() { out_ << "end\n"; }

    static std::string hex(double v)
    {
        std::array<char, 64> buf{};
        auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::hex);
        return std::string(buf.data(), ptr);
    }

private:
    std::ostream& out_;
};

class CheckpointReader {
public:
    explicit CheckpointReader(std::istream& in) : in_(in)
    {
        std::string magic;
        int version = 0;
        if (!(in_ >> magic >> version) || magic != kCheckpointMagic)
            throw DataError("not a scorecast checkpoint");
        if (version != kCheckpointVersion)
            throw DataError("unsupported checkpoint version " + std::to_string(version));
    }

    std::string kv(std::string_view key)
    {
        std::string k;
        if (!(in_ >> k) || k != key) throw DataError("checkpoint: expected '" + std::string(key) + "', got '" + k + "'");
        std::string value;
        std::getline(in_ >> std::ws, value);
        return value;
    }

    std::size_t kv_size(std::string_view key)
    {
        const auto v = kv(key);
        std::size_t out = 0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || ptr != v.data() + v.size())
            throw DataError("checkpoint: bad integer for " + std::string(key));
        return out;
    }

    double kv_double(std::string_view key) { return parse_hex(kv(key)); }

    Matrix tensor(std::string_view name)
    {
        std::string tag, got;
        std::size_t rows = 0, cols = 0;
        if (!(in_ >> tag >> got >> rows >> cols) || tag != "tensor" || got != name)
            throw DataError("checkpoint: expected tensor '" + std::string(name) + "'");
        std::vector<double> data(rows * cols);
        for (double& v : data) {
            std::string tok;
            if (!(in_ >> tok)) throw DataError("checkpoint: truncated tensor '" + std::string(name) + "'");
            v = parse_hex(tok);
        }
        return Matrix(rows, cols, std::move(data));
    }

    Vector vector(std::string_view name)
    {
        auto m = tensor(name);
        return m.data();
    }

    void finish()
    {
        std::string tag;
        if (!(in_ >> tag) || tag != "end") throw DataError("checkpoint: missing end marker");
    }

    static double parse_hex(std::string_view s)
    {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
        if (ec != std::errc{} || ptr != s.data() + s.size())
            throw DataError("checkpoint: bad number '" + std::string(s) + "'");
        return v;
    }

private:
    std::istream& in_;
};

} // namespace scorecast
