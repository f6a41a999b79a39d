#include "scen/knowledge_base.hpp"

#include "scen/io_util.hpp"

namespace scen {

KnowledgeBase make_kb(const Checkpoint& base, const EditedSystem& sys, NeuronInput mode) {
    check_integrity(base, sys);
    KnowledgeBase kb;
    kb.system = sys;
    kb.mode = mode;
    kb.base_fingerprint = fingerprint(base);
    kb.d_model = base.config.d_model;
    if (sys.bank.size() == 0) kb.system.bank.rows = Tensor(0, base.config.d_ffn);
    return kb;
}

std::string serialize_kb(const KnowledgeBase& kb) {
    const EditedSystem& sys = kb.system;
    if (sys.bank.size() != sys.experts.size()) throw IntegrityError("knowledge base: neuron and expert counts differ");
    ByteWriter w;
    w.bytes(kKbMagic);
    w.u32(kKbVersion);
    w.u32(static_cast<std::uint32_t>(sys.bank.layer));
    w.f32(sys.bank.theta);
    w.u32(static_cast<std::uint32_t>(sys.bank.h()));
    w.u32(static_cast<std::uint32_t>(kb.d_model));
    w.u64(kb.base_fingerprint);
    w.u8(static_cast<std::uint8_t>(kb.mode));
    w.u32(static_cast<std::uint32_t>(sys.experts.size()));
    for (std::size_t i = 0; i < sys.experts.size(); ++i) {
        const ExpertRecord& e = sys.experts[i];
        if (e.w_down.rows != sys.bank.h() || e.w_down.cols != kb.d_model) {
            throw IntegrityError("knowledge base: expert " + std::to_string(i) + " has shape " + e.w_down.shape_str());
        }
        w.u32(static_cast<std::uint32_t>(e.index));
        w.u32(static_cast<std::uint32_t>(e.member_ids.size()));
        for (const std::string& id : e.member_ids) w.str(id);
        w.floats(sys.bank.rows.row(i));
        w.floats(e.w_down.data);
    }
    return w.take();
}

KnowledgeBase deserialize_kb(std::string_view bytes) {
    if (bytes.empty()) throw FormatError("knowledge base: no experts (empty file)");
    ByteReader r(bytes, "knowledge base");
    if (bytes.size() < kKbMagic.size() || r.bytes(kKbMagic.size()) != kKbMagic) {
        throw FormatError("knowledge base: bad magic");
    }
    const std::uint32_t version = r.u32();
    if (version != kKbVersion) throw FormatError("knowledge base: unsupported version " + std::to_string(version));
    KnowledgeBase kb;
    NeuronBank& bank = kb.system.bank;
    bank.layer = r.u32();
    bank.theta = r.f32();
    const std::size_t h = r.u32();
    kb.d_model = r.u32();
    kb.base_fingerprint = r.u64();
    const std::uint8_t mode = r.u8();
    if (mode > 1) throw FormatError("knowledge base: unknown neuron input mode " + std::to_string(mode));
    kb.mode = static_cast<NeuronInput>(mode);
    const std::size_t n = r.u32();
    if (!(bank.theta > 0.0f && bank.theta < 1.0f)) throw FormatError("knowledge base: theta outside (0, 1)");
    if (h == 0 || kb.d_model == 0) throw FormatError("knowledge base: zero width");
    // every expert needs at least its matrix; reject absurd counts before allocating
    if (n > r.remaining() / (4 * h * (kb.d_model + 1))) throw FormatError("knowledge base: truncated");
    bank.rows = Tensor(n, h);
    for (std::size_t i = 0; i < n; ++i) {
        ExpertRecord e;
        e.index = r.u32();
        if (e.index != i) throw FormatError("knowledge base: expert " + std::to_string(i) + " stored out of order");
        e.layer = bank.layer;
        const std::size_t members = r.u32();
        for (std::size_t k = 0; k < members; ++k) e.member_ids.push_back(r.str());
        r.floats(bank.rows.row(i));
        e.w_down = Tensor(h, kb.d_model);
        r.floats(e.w_down.data);
        e.success = true;
        kb.system.experts.push_back(std::move(e));
    }
    r.expect_end();
    return kb;
}

void save_kb(const std::filesystem::path& path, const KnowledgeBase& kb) { write_file_atomic(path, serialize_kb(kb)); }

KnowledgeBase load_kb(const std::filesystem::path& path) { return deserialize_kb(read_file(path)); }

void check_kb_matches(const KnowledgeBase& kb, const Checkpoint& base) {
    const std::uint64_t fp = fingerprint(base);
    if (kb.base_fingerprint != fp) {
        throw IntegrityError("knowledge base was built on checkpoint " + hex64(kb.base_fingerprint) +
                             ", not on the loaded checkpoint " + hex64(fp));
    }
    if (kb.d_model != base.config.d_model) throw IntegrityError("knowledge base d_model differs from the checkpoint");
    if (kb.system.bank.h() != base.config.d_ffn) throw IntegrityError("knowledge base h differs from the checkpoint");
    check_integrity(base, kb.system);
}

KnowledgeBase load_kb_for(const std::filesystem::path& path, const Checkpoint& base) {
    KnowledgeBase kb = load_kb(path);
    check_kb_matches(kb, base);
    return kb;
}

}  // namespace scen
