#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hat {

using TokenSeq = std::vector<std::string>;

/// Lowercases ASCII letters and splits on whitespace and ASCII punctuation.
/// Punctuation characters are dropped; bytes >= 0x80 are kept as word
/// characters so UTF-8 words survive intact. "Which rivers?" -> {which, rivers}.
TokenSeq tokenize(std::string_view text);

/// Joins tokens with single spaces.
std::string join_tokens(const TokenSeq& tokens);

}  // namespace hat
