#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dmco/control.hpp"
#include "dmco/errors.hpp"
#include "dmco/mlp.hpp"
#include "dmco/problems.hpp"

namespace dmco {

/**
 * Binary checkpoint of a network action (little-endian):
 *
 *   char[8]  magic "DMCOCKPT"
 *   u32      version
 *   u32      input mode
 *   u64      config hash   (FNV-1a over input mode, seed, slot widths)
 *   u64      seed
 *   u32      slot count
 *   per slot: u32 width count, u64 widths[count], f64 params[param_count(widths)]
 *   u64      checksum      (FNV-1a over every byte after the magic)
 */
inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'C', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void put_raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    std::vector<unsigned char> bytes;
};

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& bytes, std::size_t pos, std::size_t end, std::string path)
        : bytes_(bytes), pos_(pos), end_(end), path_(std::move(path)) {}

    template <class T>
    T get() {
        T v;
        get_raw(&v, sizeof(T));
        return v;
    }
    void get_raw(void* out, std::size_t n) {
        if (n > end_ - pos_) throw CorruptFileError(path_ + ": checkpoint is truncated");
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_;
    std::size_t end_;
    std::string path_;
};

}  // namespace detail

/// Hash of the shape-defining configuration of a network action.
inline std::uint64_t checkpoint_config_hash(const NetworkAction& action, std::uint64_t seed) {
    detail::ByteWriter w;
    w.put(static_cast<std::uint32_t>(action.input_mode));
    w.put(seed);
    for (const auto& net : action.nets) {
        w.put(static_cast<std::uint64_t>(net.widths().size()));
        for (auto width : net.widths()) w.put(static_cast<std::uint64_t>(width));
    }
    return detail::fnv1a(w.bytes.data(), w.bytes.size());
}

inline void save_checkpoint(const FeedbackAction& action, const std::string& path, std::uint64_t seed = 0) {
    const auto* net_action = std::get_if<NetworkAction>(&action);
    if (!net_action) throw ConfigError("only network actions can be checkpointed");
    detail::ByteWriter w;
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(net_action->input_mode));
    w.put(checkpoint_config_hash(*net_action, seed));
    w.put(seed);
    w.put(static_cast<std::uint32_t>(net_action->nets.size()));
    for (const auto& net : net_action->nets) {
        w.put(static_cast<std::uint32_t>(net.widths().size()));
        for (auto width : net.widths()) w.put(static_cast<std::uint64_t>(width));
        w.put_raw(net.flat().data(), net.flat().size_bytes());
    }
    w.put(detail::fnv1a(w.bytes.data(), w.bytes.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw IoError(path + ": write failed");
}

struct LoadedCheckpoint {
    FeedbackAction action;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
};

inline LoadedCheckpoint load_checkpoint_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open checkpoint");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        throw CorruptFileError(path + ": not a checkpoint (bad magic)");
    }
    const std::size_t body = sizeof kCheckpointMagic;
    if (bytes.size() < body + sizeof(std::uint32_t)) throw CorruptFileError(path + ": checkpoint is truncated");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + body, sizeof version);
    if (version != kCheckpointVersion) throw UnsupportedVersionError(version, kCheckpointVersion);
    if (bytes.size() < body + sizeof(std::uint64_t)) throw CorruptFileError(path + ": checkpoint is truncated");

    const std::size_t end = bytes.size() - sizeof(std::uint64_t);
    detail::ByteReader r(bytes, body, end, path);
    r.get<std::uint32_t>();
    const auto mode = r.get<std::uint32_t>();
    if (mode > static_cast<std::uint32_t>(InputMode::StateAndNoise)) throw CorruptFileError(path + ": bad input mode");
    const auto hash = r.get<std::uint64_t>();
    const auto seed = r.get<std::uint64_t>();
    const auto slots = r.get<std::uint32_t>();
    NetworkAction action;
    action.input_mode = static_cast<InputMode>(mode);
    for (std::uint32_t s = 0; s < slots; ++s) {
        const auto count = r.get<std::uint32_t>();
        if (count == 0) {
            action.nets.emplace_back();
            continue;
        }
        if (count == 1 || count > 1024) throw CorruptFileError(path + ": bad layer count");
        std::vector<std::size_t> widths(count);
        for (auto& w : widths) {
            const auto v = r.get<std::uint64_t>();
            if (v == 0 || v > (1U << 24)) throw CorruptFileError(path + ": bad layer width");
            w = static_cast<std::size_t>(v);
        }
        MlpParams net(std::move(widths));
        r.get_raw(net.flat().data(), net.flat().size_bytes());
        action.nets.push_back(std::move(net));
    }
    if (r.pos() != end) throw CorruptFileError(path + ": trailing bytes in checkpoint");
    std::uint64_t checksum = 0;
    std::memcpy(&checksum, bytes.data() + end, sizeof checksum);
    if (checksum != detail::fnv1a(bytes.data() + body, end - body)) {
        throw CorruptFileError(path + ": checksum mismatch");
    }
    if (hash != checkpoint_config_hash(action, seed)) throw CorruptFileError(path + ": config hash mismatch");
    for (std::size_t t = 1; t < action.nets.size(); ++t) {
        const auto& a = action.nets[t];
        const auto& b = action.nets[t - 1];
        if (!a.empty() && !b.empty() && (a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim())) {
            throw CorruptFileError(path + ": per-time networks disagree on input/output width");
        }
    }
    return {FeedbackAction{std::move(action)}, seed, hash};
}

inline FeedbackAction load_checkpoint(const std::string& path) { return load_checkpoint_record(path).action; }

}  // namespace dmco
