#include "m6/unicode.hpp"

#include <stdexcept>

namespace m6::uni {

bool decode_utf8(std::string_view s, std::vector<char32_t>& out) {
  std::size_t i = 0;
  const auto* p = reinterpret_cast<const unsigned char*>(s.data());
  while (i < s.size()) {
    unsigned char b0 = p[i];
    if (b0 < 0x80) {
      out.push_back(b0);
      i += 1;
      continue;
    }
    int len;
    char32_t cp;
    if ((b0 & 0xe0) == 0xc0) {
      len = 2;
      cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
      len = 3;
      cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (int k = 1; k < len; ++k) {
      unsigned char b = p[i + k];
      if ((b & 0xc0) != 0x80) return false;
      cp = (cp << 6) | (b & 0x3f);
    }
    // reject overlong encodings and surrogate range
    if (len == 2 && cp < 0x80) return false;
    if (len == 3 && cp < 0x800) return false;
    if (len == 4 && cp < 0x10000) return false;
    if (cp >= 0xd800 && cp <= 0xdfff) return false;
    if (cp > 0x10ffff) return false;
    out.push_back(cp);
    i += len;
  }
  return true;
}

std::vector<char32_t> codepoints(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  if (!decode_utf8(s, out)) throw std::invalid_argument("malformed UTF-8");
  return out;
}

void append_utf8(std::string& s, char32_t cp) {
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    s.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    s.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

std::string to_utf8(const std::vector<char32_t>& cps) {
  std::string s;
  s.reserve(cps.size() * 3);
  for (char32_t cp : cps) append_utf8(s, cp);
  return s;
}

std::string to_utf8(char32_t cp) {
  std::string s;
  append_utf8(s, cp);
  return s;
}

std::size_t length(std::string_view s) { return codepoints(s).size(); }

bool is_cjk(char32_t cp) {
  return (cp >= 0x4e00 && cp <= 0x9fff) ||   // unified ideographs
         (cp >= 0x3400 && cp <= 0x4dbf) ||   // extension A
         (cp >= 0xf900 && cp <= 0xfaff);     // compatibility ideographs
}

bool is_latin_letter(char32_t cp) {
  return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
}

bool is_digit(char32_t cp) { return cp >= '0' && cp <= '9'; }

bool is_space(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == 0x3000;
}

bool is_ascii_punct(char32_t cp) {
  return (cp >= 0x21 && cp <= 0x2f) || (cp >= 0x3a && cp <= 0x40) ||
         (cp >= 0x5b && cp <= 0x60) || (cp >= 0x7b && cp <= 0x7e);
}

bool is_wide_punct(char32_t cp) {
  if (cp >= 0x3001 && cp <= 0x303f) return true;  // 、。〈〉《》「」…
  if (cp >= 0xff01 && cp <= 0xff0f) return true;  // ！＂＃ … ／
  if (cp >= 0xff1a && cp <= 0xff20) return true;  // ：；＜＝＞？＠
  if (cp >= 0xff3b && cp <= 0xff40) return true;
  if (cp >= 0xff5b && cp <= 0xff65) return true;
  switch (cp) {
    case 0x2014:  // em dash pair in CJK text
    case 0x2018:
    case 0x2019:
    case 0x201c:
    case 0x201d:
    case 0x2026:
    case 0x00b7:
      return true;
    default:
      return false;
  }
}

bool is_punct(char32_t cp) { return is_ascii_punct(cp) || is_wide_punct(cp); }

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  return cp;
}

}  // namespace m6::uni
