#pragma once

// Checkpoint container: a single file holding a 64-bit little-endian header
// length, a JSON header (format version, stage tag, step, seed, the resolved
// run configuration, and per-tensor name/shape/offset records), and a payload
// of raw little-endian 32-bit floats. Saving is atomic (temp file + rename),
// and save -> load -> save is byte-identical.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wlfm/config.hpp"
#include "wlfm/errors.hpp"
#include "wlfm/params.hpp"
#include "wlfm/tensor.hpp"
#include "wlfm/tokenizer.hpp"

namespace wlfm {

enum class model_stage { tokenizer, pretrained, finetuned };

inline const char* stage_name(model_stage s) {
    switch (s) {
        case model_stage::tokenizer: return "tokenizer";
        case model_stage::pretrained: return "pretrained";
        case model_stage::finetuned: return "finetuned";
    }
    return "?";
}

inline model_stage stage_from_name(const std::string& s) {
    if (s == "tokenizer") return model_stage::tokenizer;
    if (s == "pretrained") return model_stage::pretrained;
    if (s == "finetuned") return model_stage::finetuned;
    raise(errc::config_error, "unknown checkpoint stage: " + s);
}

inline int stage_rank(model_stage s) { return static_cast<int>(s); }

/// Everything a later stage needs to continue from an earlier one. Tensors
/// carry their owning component in the name prefix: "enc./dec." (tokenizer),
/// "cb." (codebook statistics), "bb." (backbone), "head." (task heads).
struct model_state {
    int format_version = 1;
    model_stage stage = model_stage::tokenizer;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    train_config config;
    named_params tensors;

    bool has_prefix(const std::string& prefix) const {
        for (const auto& kv : tensors.items())
            if (kv.first.rfind(prefix, 0) == 0) return true;
        return false;
    }
};

namespace detail {

inline void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline void append_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float read_f32_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace detail

inline std::string serialize_model_state(const model_state& st) {
    ordered_json header;
    header["format_version"] = st.format_version;
    header["stage"] = stage_name(st.stage);
    header["step"] = st.step;
    header["seed"] = st.seed;
    header["config"] = to_json(st.config);
    ordered_json tensors = ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : st.tensors.items()) {
        ordered_json rec;
        rec["name"] = name;
        rec["rows"] = t.rows;
        rec["cols"] = t.cols;
        rec["offset"] = offset;
        tensors.push_back(std::move(rec));
        offset += static_cast<std::uint64_t>(t.size()) * 4;
    }
    header["tensors"] = std::move(tensors);

    const std::string htxt = header.dump();
    std::string out;
    out.reserve(8 + htxt.size() + offset);
    detail::append_u64_le(out, htxt.size());
    out += htxt;
    for (const auto& [name, t] : st.tensors.items())
        for (double x : t.v) detail::append_f32_le(out, static_cast<float>(x));
    return out;
}

/// Atomic save: the bytes land in a sibling temp file first and are renamed
/// into place, so an interrupted run leaves either the old file or the new
/// one, never a torn mix.
inline void save_model_state(const model_state& st, const std::filesystem::path& path) {
    const std::string bytes = serialize_model_state(st);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), errc::io_error, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        require(out.good(), errc::io_error, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    require(!ec, errc::io_error, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline model_state deserialize_model_state(const std::string& bytes, const std::string& where) {
    require(bytes.size() >= 8, errc::io_error, where + ": truncated header length");
    const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t hlen = detail::read_u64_le(base);
    require(8 + hlen <= bytes.size(), errc::io_error, where + ": truncated header");

    ordered_json header;
    try {
        header = ordered_json::parse(bytes.substr(8, hlen));
    } catch (const nlohmann::json::exception& e) {
        raise(errc::io_error, where + ": bad header: " + e.what());
    }

    model_state st;
    try {
        st.format_version = header.at("format_version").get<int>();
        require(st.format_version == 1, errc::config_error,
                where + ": unsupported checkpoint format_version " +
                    std::to_string(st.format_version));
        st.stage = stage_from_name(header.at("stage").get<std::string>());
        st.step = header.at("step").get<std::uint64_t>();
        st.seed = header.at("seed").get<std::uint64_t>();
        st.config = train_config_from_json(header.at("config"));

        const std::size_t payload_off = 8 + hlen;
        for (const auto& rec : header.at("tensors")) {
            const auto name = rec.at("name").get<std::string>();
            const auto rows = rec.at("rows").get<std::size_t>();
            const auto cols = rec.at("cols").get<std::size_t>();
            const auto offset = rec.at("offset").get<std::uint64_t>();
            tensor t(rows, cols);
            const std::size_t nbytes = t.size() * 4;
            require(payload_off + offset + nbytes <= bytes.size(), errc::io_error,
                    where + ": tensor '" + name + "' extends past end of file");
            const unsigned char* p = base + payload_off + offset;
            for (std::size_t i = 0; i < t.size(); ++i)
                t.v[i] = static_cast<double>(detail::read_f32_le(p + i * 4));
            st.tensors.add(name, std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        raise(errc::io_error, where + ": bad header field: " + e.what());
    }
    return st;
}

inline model_state load_model_state(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), errc::io_error, "cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model_state(bytes, path.string());
}

// ---------------------------------------------------------------------------
// Packing and unpacking stage models
// ---------------------------------------------------------------------------

namespace detail {

inline tensor row_vector(const std::vector<double>& v) {
    tensor t(1, v.size());
    t.v = v;
    return t;
}

inline tensor row_vector_i64(const std::vector<std::int64_t>& v) {
    tensor t(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) t.v[i] = static_cast<double>(v[i]);
    return t;
}

}  // namespace detail

/// Adds the tokenizer's parameters and codebook statistics to `st.tensors`.
inline void pack_tokenizer(model_state& st, const tokenizer_model& tok) {
    for (const auto& [name, t] : tok.params.items()) st.tensors.add(name, t);
    st.tensors.add("cb.vectors", tok.cb.vectors);
    st.tensors.add("cb.ema_counts", detail::row_vector(tok.cb.ema_counts));
    st.tensors.add("cb.ema_sums", tok.cb.ema_sums);
    st.tensors.add("cb.steps_since_use", detail::row_vector_i64(tok.cb.steps_since_use));
}

/// Adds backbone (and, after adaptation, head) parameters to `st.tensors`.
inline void pack_backbone(model_state& st, const named_params& params) {
    for (const auto& [name, t] : params.items()) st.tensors.add(name, t);
}

/// Rebuilds the tokenizer held in a checkpoint of any stage.
inline tokenizer_model tokenizer_from_state(const model_state& st) {
    tokenizer_model tok;
    tok.cfg = st.config.tokenizer();
    for (const auto& [name, t] : st.tensors.items())
        if (name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0) tok.params.add(name, t);
    require(tok.params.size() > 0, errc::stage_order_violation,
            "checkpoint carries no tokenizer parameters");
    tok.cb.vectors = st.tensors.at("cb.vectors");
    tok.cb.ema_sums = st.tensors.at("cb.ema_sums");
    const tensor& counts = st.tensors.at("cb.ema_counts");
    tok.cb.ema_counts.assign(counts.v.begin(), counts.v.end());
    const tensor& since = st.tensors.at("cb.steps_since_use");
    tok.cb.steps_since_use.clear();
    for (double x : since.v) tok.cb.steps_since_use.push_back(static_cast<std::int64_t>(x));
    tok.cb.decay = st.config.ema_decay;
    tok.cb.dead_threshold = st.config.dead_threshold;
    require(tok.cb.size() == st.config.codebook_size && tok.cb.dim() == st.config.latent_dim,
            errc::shape_mismatch, "codebook shape disagrees with checkpoint config");
    return tok;
}

/// Extracts backbone (+ head) parameters from a pretrained or finetuned
/// checkpoint.
inline named_params backbone_from_state(const model_state& st) {
    require(stage_rank(st.stage) >= stage_rank(model_stage::pretrained),
            errc::stage_order_violation,
            "checkpoint stage is '" + std::string(stage_name(st.stage)) +
                "'; backbone parameters require at least 'pretrained'");
    named_params P;
    for (const auto& [name, t] : st.tensors.items())
        if (name.rfind("bb.", 0) == 0 || name.rfind("head.", 0) == 0) P.add(name, t);
    require(P.size() > 0, errc::stage_order_violation,
            "checkpoint carries no backbone parameters");
    return P;
}

}  // namespace wlfm
