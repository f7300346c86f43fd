#pragma once

#include <emoforge/common.hpp>

namespace emoforge {

enum class InstructionKind { categorical, conversation, reasoning };

inline constexpr std::array<InstructionKind, 3> kAllKinds = {
    InstructionKind::categorical, InstructionKind::conversation, InstructionKind::reasoning};

inline const char* to_string(InstructionKind kind) {
  switch (kind) {
    case InstructionKind::categorical: return "categorical";
    case InstructionKind::conversation: return "conversation";
    case InstructionKind::reasoning: return "reasoning";
  }
  return "unknown";
}

inline InstructionKind parse_kind(std::string_view text) {
  auto t = trim(text);
  for (auto kind : kAllKinds) {
    if (iequals(t, to_string(kind))) return kind;
  }
  throw Error(ErrorCode::invalid_argument, "invalid instruction kind '" + std::string(text) + "'");
}

}  // namespace emoforge
