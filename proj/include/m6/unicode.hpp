#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace m6::uni {

/// Decodes UTF-8 into codepoints. Returns false on malformed input
/// (overlong forms, stray continuation bytes, out-of-range values);
/// `out` then holds the prefix decoded so far.
bool decode_utf8(std::string_view s, std::vector<char32_t>& out);

/// Throwing variant of decode_utf8 for input that is known to be valid.
std::vector<char32_t> codepoints(std::string_view s);

void append_utf8(std::string& s, char32_t cp);
std::string to_utf8(const std::vector<char32_t>& cps);
std::string to_utf8(char32_t cp);

/// Codepoint count; throws std::invalid_argument on malformed UTF-8.
std::size_t length(std::string_view s);

bool is_cjk(char32_t cp);           // unified ideographs (incl. ext A, compat)
bool is_latin_letter(char32_t cp);  // ASCII letters only
bool is_digit(char32_t cp);         // ASCII digits
bool is_space(char32_t cp);
bool is_ascii_punct(char32_t cp);
bool is_wide_punct(char32_t cp);    // CJK symbols, fullwidth forms, curly quotes
bool is_punct(char32_t cp);

char32_t to_lower(char32_t cp);     // ASCII-only lowering

}  // namespace m6::uni
