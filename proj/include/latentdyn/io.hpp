#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

#include <unistd.h>
#include <zlib.h>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"

#ifndef LATENTDYN_GIT_DESCRIBE
#define LATENTDYN_GIT_DESCRIBE "unknown"
#endif

namespace latentdyn::io {

namespace fs = std::filesystem;

// ---- raw files ----

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError(path.string(), "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes via a temporary file in the same directory and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FileError(tmp.string(), "cannot create file");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FileError(tmp.string(), "write failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw FileError(path.string(), "cannot move temporary file into place: " + ec.message());
    }
}

inline nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_atomic(path, j.dump(2) + "\n"); }

// ---- little-endian encoding ----

class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(double v) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        u32(bits);
    }
    void raw(std::string_view s) { buf_.append(s); }
    const std::string& bytes() const { return buf_; }

  private:
    std::string buf_;
};

class ByteReader {
  public:
    ByteReader(std::string_view data, std::string path) : data_(data), path_(std::move(path)) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint16_t u16() {
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    double f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }
    std::string_view raw(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

  private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw FileError(path_, "truncated file");
    }
    std::string_view data_;
    std::size_t pos_ = 0;
    std::string path_;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
    uLong c = crc32(0L, Z_NULL, 0);
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(c);
}

// ---- FTS1 timeseries container ----

inline constexpr std::uint32_t kFtsVersion = 1;

struct TimeseriesSet {
    std::vector<SubjectTimeseries> subjects;
    double tr = 0;
};

inline fs::path sidecar_path(const fs::path& p) {
    fs::path s = p;
    s += ".json";
    return s;
}

inline std::string encode_timeseries(const std::vector<SubjectTimeseries>& subjects) {
    ByteWriter w;
    w.raw("FTS1");
    w.u32(kFtsVersion);
    w.u32(static_cast<std::uint32_t>(subjects.size()));
    for (const auto& s : subjects) {
        w.u32(static_cast<std::uint32_t>(s.frames()));
        w.u32(static_cast<std::uint32_t>(s.vertices()));
        for (Eigen::Index i = 0; i < s.values.size(); ++i) w.f32(s.values.data()[i]);
    }
    return w.bytes();
}

/// Binary values plus a JSON sidecar with ids, splits and tr.
inline void write_timeseries(const fs::path& path, const TimeseriesSet& set, const std::string& config_hash = "") {
    write_atomic(path, encode_timeseries(set.subjects));
    nlohmann::json side{{"tr", set.tr}, {"ids", nlohmann::json::array()}, {"splits", nlohmann::json::array()}};
    for (const auto& s : set.subjects) {
        side["ids"].push_back(s.id);
        side["splits"].push_back(s.split);
    }
    if (!config_hash.empty()) side["config_hash"] = config_hash;
    write_json(sidecar_path(path), side);
}

inline TimeseriesSet read_timeseries(const fs::path& path) {
    const std::string bytes = read_file(path);
    ByteReader r(bytes, path.string());
    if (r.raw(4) != "FTS1") throw FileError(path.string(), "not an FTS1 timeseries file");
    const auto version = r.u32();
    if (version != kFtsVersion) throw FileError(path.string(), "unsupported FTS1 version " + std::to_string(version));
    TimeseriesSet set;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto T = r.u32(), V = r.u32();
        SubjectTimeseries s;
        s.values.resize(T, V);
        for (Eigen::Index k = 0; k < s.values.size(); ++k) s.values.data()[k] = r.f32();
        set.subjects.push_back(std::move(s));
    }
    if (r.remaining()) throw FileError(path.string(), "trailing bytes after last subject");
    const auto side = read_json(sidecar_path(path));
    set.tr = side.at("tr").get<double>();
    const auto ids = side.at("ids").get<std::vector<std::string>>();
    const auto splits = side.at("splits").get<std::vector<std::string>>();
    if (ids.size() != n || splits.size() != n)
        throw ConfigError("ids", "sidecar lists " + std::to_string(ids.size()) + " subjects, file holds " + std::to_string(n));
    for (std::uint32_t i = 0; i < n; ++i) {
        set.subjects[i].id = ids[i];
        set.subjects[i].split = splits[i];
    }
    return set;
}

// ---- SVAE tensor checkpoint ----

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
};

/// The trailing CRC32 covers every byte before it.
inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    ByteWriter w;
    w.raw("SVAE");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xffff) throw ConfigError("checkpoint", "tensor name too long");
        if (t.dims.size() > 0xff) throw ShapeError("checkpoint: tensor rank too large");
        std::size_t count = 1;
        for (auto d : t.dims) count *= d;
        if (count != t.data.size()) throw ShapeError("checkpoint: dims of " + t.name + " do not match its data");
        w.u16(static_cast<std::uint16_t>(t.name.size()));
        w.raw(t.name);
        w.u8(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) w.u32(d);
        for (double v : t.data) w.f32(v);
    }
    ByteWriter out;
    out.raw(w.bytes());
    out.u32(crc32_of(w.bytes()));
    return out.bytes();
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes, const std::string& path) {
    if (bytes.size() < 16) throw FileError(path, "truncated checkpoint");
    const std::string_view payload(bytes.data(), bytes.size() - 4);
    ByteReader tail(std::string_view(bytes).substr(bytes.size() - 4), path);
    if (tail.u32() != crc32_of(payload)) throw FileError(path, "checkpoint CRC mismatch (file corrupt)");
    ByteReader r(payload, path);
    if (r.raw(4) != "SVAE") throw FileError(path, "not an SVAE checkpoint");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw FileError(path, "unsupported checkpoint version " + std::to_string(version));
    std::vector<NamedTensor> out(r.u32());
    for (auto& t : out) {
        t.name = std::string(r.raw(r.u16()));
        t.dims.resize(r.u8());
        std::size_t count = 1;
        for (auto& d : t.dims) count *= (d = r.u32());
        t.data.resize(count);
        for (auto& v : t.data) v = r.f32();
    }
    if (r.remaining()) throw FileError(path, "trailing bytes in checkpoint");
    return out;
}

inline std::vector<NamedTensor> to_named(const model::ParamSet& p) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        NamedTensor t{p.name(i), {}, p.tensor(i).data};
        for (auto d : p.tensor(i).dims) t.dims.push_back(static_cast<std::uint32_t>(d));
        out.push_back(std::move(t));
    }
    return out;
}

inline model::ParamSet to_params(const std::vector<NamedTensor>& tensors) {
    model::ParamSet p;
    for (const auto& t : tensors) {
        diff::Dims dims(t.dims.begin(), t.dims.end());
        p.add(t.name, diff::Tensor(dims, t.data));
    }
    return p;
}

inline NamedTensor matrix_tensor(const std::string& name, const Eigen::MatrixXd& m) {
    NamedTensor t{name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(m(r, c));
    return t;
}

inline Eigen::MatrixXd tensor_matrix(const NamedTensor& t) {
    if (t.dims.size() != 2) throw ShapeError("tensor " + t.name + " is not a matrix");
    Eigen::MatrixXd m(t.dims[0], t.dims[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[static_cast<std::size_t>(r * m.cols() + c)];
    return m;
}

inline const NamedTensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name,
                                      const std::string& path) {
    for (const auto& t : ts)
        if (t.name == name) return t;
    throw FileError(path, "checkpoint lacks tensor " + name);
}

/// Checkpoint with a JSON sidecar describing it ({"kind": ..., plus `meta`}).
inline void write_checkpoint(const fs::path& path, const std::vector<NamedTensor>& tensors, const std::string& kind,
                             nlohmann::json meta) {
    write_atomic(path, encode_checkpoint(tensors));
    meta["kind"] = kind;
    write_json(sidecar_path(path), meta);
}

struct Checkpoint {
    std::string kind;
    nlohmann::json meta;
    std::vector<NamedTensor> tensors;
};

inline Checkpoint read_checkpoint(const fs::path& path) {
    Checkpoint c;
    c.tensors = decode_checkpoint(read_file(path), path.string());
    c.meta = read_json(sidecar_path(path));
    c.kind = c.meta.value("kind", std::string());
    return c;
}

// ---- CSV ----

using Cell = std::variant<std::string, double, long long>;

/// Shortest round-trip decimal form, independent of locale.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc()) throw std::runtime_error("format_double failed");
    return std::string(buf.data(), end);
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string csv_text(const std::vector<std::string>& header, const std::vector<std::vector<Cell>>& rows) {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + csv_field(header[i]);
    out += "\n";
    for (const auto& row : rows) {
        if (row.size() != header.size()) throw ShapeError("csv: row width does not match header");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            std::visit(
                [&](const auto& v) {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, std::string>) out += csv_field(v);
                    else if constexpr (std::is_same_v<V, double>) out += format_double(v);
                    else out += std::to_string(v);
                },
                row[i]);
        }
        out += "\n";
    }
    return out;
}

inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<Cell>>& rows) {
    write_atomic(path, csv_text(header, rows));
}

/// Rows of a matrix, one column per entry, headed by `prefix0..n`.
inline void write_matrix_csv(const fs::path& path, const Eigen::MatrixXd& m, const std::string& row_name,
                             const std::string& col_prefix) {
    std::vector<std::string> header{row_name};
    for (Eigen::Index c = 0; c < m.cols(); ++c) header.push_back(col_prefix + std::to_string(c));
    std::vector<std::vector<Cell>> rows;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<Cell> row{static_cast<long long>(r)};
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.emplace_back(m(r, c));
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

// ---- run manifest ----

inline std::string config_hash(const nlohmann::json& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_name(config.dump())));
    return buf;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct RunManifest {
    RunManifest(std::string cmd, nlohmann::json cfg, std::uint64_t run_seed)
        : command(std::move(cmd)), config(std::move(cfg)), seed(run_seed) {}

    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string started = utc_timestamp();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    std::string hash() const { return config_hash(config); }

    nlohmann::json to_json() const {
        return {{"command", command},
                {"config", config},
                {"config_hash", hash()},
                {"seed", seed},
                {"git_describe", LATENTDYN_GIT_DESCRIBE},
                {"started", started},
                {"finished", utc_timestamp()},
                {"inputs", inputs},
                {"outputs", outputs}};
    }
};

} // namespace latentdyn::io
