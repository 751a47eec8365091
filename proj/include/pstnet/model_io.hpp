#pragma once

// Model file layout (little-endian):
//   "PSTN" | version u16 | param-count u32 | d u16 | H_g u16 | H_f u16
//   | feature means f64[7] | feature scales f64[7] | target mean f64 | target scale f64
//   | c_mu, kappa, c_k, g f64[4]
//   | parameters f32[param-count] in ParamLayout order
//   | CRC-32 of all preceding bytes
// The expert hidden width is not in the header; it is recovered from the
// parameter count.

#include <cmath>
#include <filesystem>
#include <optional>

#include "pstnet/model.hpp"
#include "pstnet/util.hpp"

namespace pstnet {

/// Rounds every parameter to binary32 so the model is exactly representable
/// in its file.
inline void quantize_to_storage(PSTNetModel& m) {
    for (double& p : m.params) p = static_cast<double>(static_cast<float>(p));
}

inline bool is_storage_exact(const PSTNetModel& m) {
    for (double p : m.params)
        if (static_cast<double>(static_cast<float>(p)) != p) return false;
    return true;
}

inline std::vector<std::uint8_t> encode_model(const PSTNetModel& m) {
    using namespace model_file;
    ByteWriter w;
    w.put_bytes({magic, 4});
    w.put(version);
    w.put(static_cast<std::uint32_t>(m.params.size()));
    w.put(static_cast<std::uint16_t>(m.dims.d));
    w.put(static_cast<std::uint16_t>(m.dims.h_gate));
    w.put(static_cast<std::uint16_t>(m.dims.h_film));
    for (double v : m.norm.mean) w.put(v);
    for (double v : m.norm.scale) w.put(v);
    w.put(m.norm.target_mean);
    w.put(m.norm.target_scale);
    w.put(m.constants.c_mu);
    w.put(m.constants.kappa);
    w.put(m.constants.c_k);
    w.put(m.constants.g);
    for (double p : m.params) w.put(static_cast<float>(p));
    w.put_checksum();
    return w.bytes();
}

namespace detail {

/// Solves the parameter count for the expert hidden width.
inline std::optional<std::size_t> expert_width_from_count(std::size_t count, std::size_t d,
                                                          std::size_t h_gate, std::size_t h_film) {
    for (std::size_t h = 1; h <= kMaxWidth; ++h) {
        const ModelDims dims{d, h_gate, h, h_film};
        if (ParamLayout(dims).total == count) return h;
    }
    return std::nullopt;
}

}  // namespace detail

inline PSTNetModel decode_model(std::span<const std::uint8_t> bytes) {
    using namespace model_file;
    const auto body = checked_body(bytes);
    ByteReader r(body);
    if (r.get_bytes(4) != std::string(magic, 4))
        throw FormatError(FormatError::Kind::corrupt, "model file: bad magic");
    const auto ver = r.get<std::uint16_t>();
    if (ver != version)
        throw FormatError(FormatError::Kind::version,
                          "model file: unsupported version " + std::to_string(ver));
    const auto count = r.get<std::uint32_t>();
    const std::size_t d = r.get<std::uint16_t>();
    const std::size_t h_gate = r.get<std::uint16_t>();
    const std::size_t h_film = r.get<std::uint16_t>();
    if (d == 0 || d > kMaxWidth || h_gate == 0 || h_gate > kMaxWidth || h_film == 0 || h_film > kMaxWidth)
        throw FormatError(FormatError::Kind::corrupt, "model file: dimensions out of range");
    const auto h_expert = detail::expert_width_from_count(count, d, h_gate, h_film);
    if (!h_expert) throw FormatError(FormatError::Kind::corrupt, "model file: inconsistent parameter count");

    PSTNetModel m(ModelDims{d, h_gate, *h_expert, h_film});
    for (double& v : m.norm.mean) v = r.get<double>();
    for (double& v : m.norm.scale) v = r.get<double>();
    m.norm.target_mean = r.get<double>();
    m.norm.target_scale = r.get<double>();
    m.constants.c_mu = r.get<double>();
    m.constants.kappa = r.get<double>();
    m.constants.c_k = r.get<double>();
    m.constants.g = r.get<double>();
    for (double& p : m.params) {
        p = static_cast<double>(r.get<float>());
        if (!std::isfinite(p)) throw FormatError(FormatError::Kind::corrupt, "model file: non-finite parameter");
    }
    if (r.remaining() != 0) throw FormatError(FormatError::Kind::corrupt, "model file: trailing bytes");
    return m;
}

inline void save(const PSTNetModel& m, const std::filesystem::path& path) {
    write_file_atomic(path, encode_model(m));
}

inline PSTNetModel load(const std::filesystem::path& path) {
    return decode_model(read_file_bytes(path));
}

}  // namespace pstnet
