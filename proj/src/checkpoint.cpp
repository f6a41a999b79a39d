#include "scen/checkpoint.hpp"

#include "scen/io_util.hpp"

namespace scen {

std::string serialize_checkpoint(const Checkpoint& ck) {
    ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    const ModelConfig& c = ck.config;
    for (std::size_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ffn, c.max_seq_len}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.u8(static_cast<std::uint8_t>(c.nonlinearity));
    w.u8(static_cast<std::uint8_t>(c.norm));
    w.u64(c.seed);
    const auto words = ck.tokenizer.words();
    w.u32(static_cast<std::uint32_t>(words.size()));
    for (const std::string& s : words) w.str(s);
    for (const Tensor* t : ck.weights.tensors()) w.floats(t->data);
    return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    ByteReader r(bytes, "checkpoint");
    if (bytes.size() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
        throw FormatError("checkpoint: bad magic");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    ModelConfig c;
    c.vocab_size = r.u32();
    c.d_model = r.u32();
    c.n_layers = r.u32();
    c.n_heads = r.u32();
    c.d_ffn = r.u32();
    c.max_seq_len = r.u32();
    const std::uint8_t nl = r.u8();
    if (nl > 1) throw FormatError("checkpoint: unknown nonlinearity id " + std::to_string(nl));
    c.nonlinearity = static_cast<Nonlinearity>(nl);
    const std::uint8_t norm = r.u8();
    if (norm != 0) throw FormatError("checkpoint: unknown norm placement " + std::to_string(norm));
    c.seed = r.u64();
    try {
        c.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }

    const std::uint32_t n_words = r.u32();
    std::vector<std::string> words;
    words.reserve(n_words);
    for (std::uint32_t i = 0; i < n_words; ++i) words.push_back(r.str());

    // Shapes come from a zero-initialised skeleton of the same config.
    Checkpoint ck;
    ck.config = c;
    ck.tokenizer = Tokenizer(std::move(words));
    if (ck.tokenizer.size() > c.vocab_size) throw FormatError("checkpoint: vocabulary larger than vocab_size");
    ModelWeights& w = ck.weights;
    const std::size_t d = c.d_model, h = c.d_ffn;
    w.tok_emb = Tensor(c.vocab_size, d);
    w.pos_emb = Tensor(c.max_seq_len, d);
    w.layers.assign(c.n_layers, LayerWeights{Tensor(1, d), Tensor(1, d), Tensor(d, d), Tensor(d, d), Tensor(d, d),
                                             Tensor(d, d), Tensor(1, d), Tensor(1, d), Tensor(d, h), Tensor(h, d)});
    w.lnf_gain = Tensor(1, d);
    w.lnf_bias = Tensor(1, d);
    w.w_out = Tensor(d, c.vocab_size);
    for (Tensor* t : w.tensors()) r.floats(t->data);
    r.expect_end();
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file_atomic(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

std::uint64_t fingerprint(const Checkpoint& ck) { return fnv1a64(serialize_checkpoint(ck)); }

}  // namespace scen
