#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "scen/editor.hpp"

namespace scen {

inline constexpr std::string_view kKbMagic = "SCENKB";
inline constexpr std::uint32_t kKbVersion = 1;

// Layout (little-endian):
//   "SCENKB" | u32 version
//   header: u32 layer, f32 theta, u32 h, u32 d_model, u64 base fingerprint,
//           u8 neuron input mode, u32 expert count
//   per expert: u32 index, u32 member count, members as (u32 length, bytes),
//               h x f32 neuron row, h*d_model x f32 W_down (row-major)
struct KnowledgeBase {
    EditedSystem system;
    NeuronInput mode = NeuronInput::post_activation;
    std::uint64_t base_fingerprint = 0;
    std::size_t d_model = 0;
};

KnowledgeBase make_kb(const Checkpoint& base, const EditedSystem& sys, NeuronInput mode);

std::string serialize_kb(const KnowledgeBase& kb);
// FormatError on a malformed file; a zero-length file reads as "no experts".
KnowledgeBase deserialize_kb(std::string_view bytes);

void save_kb(const std::filesystem::path& path, const KnowledgeBase& kb);
KnowledgeBase load_kb(const std::filesystem::path& path);

// IntegrityError when the KB was built on a different checkpoint.
void check_kb_matches(const KnowledgeBase& kb, const Checkpoint& base);
KnowledgeBase load_kb_for(const std::filesystem::path& path, const Checkpoint& base);

}  // namespace scen
