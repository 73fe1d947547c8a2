#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace blindfold {

inline bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'';
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

// Case-insensitive whole-word containment.
inline bool contains_word(std::string_view text, std::string_view word) {
    if (word.empty()) {
        return false;
    }
    const std::string haystack = to_lower(text);
    const std::string needle = to_lower(word);
    size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
        const size_t end = pos + needle.size();
        const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
        if (left_ok && right_ok) {
            return true;
        }
        pos += 1;
    }
    return false;
}

// Byte ranges of whole-word occurrences, case-insensitive.
inline std::vector<std::pair<size_t, size_t>> find_word_spans(std::string_view text,
                                                              std::string_view word) {
    std::vector<std::pair<size_t, size_t>> spans;
    if (word.empty()) {
        return spans;
    }
    const std::string haystack = to_lower(text);
    const std::string needle = to_lower(word);
    size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
        const size_t end = pos + needle.size();
        const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
        if (left_ok && right_ok) {
            spans.emplace_back(pos, end);
            pos = end;
        } else {
            pos += 1;
        }
    }
    return spans;
}

inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = false;
    for (char c : s) {
        const bool ws = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (ws) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) {
            out.push_back(' ');
        }
        in_space = false;
        out.push_back(c);
    }
    return out;
}

inline std::string replace_all(std::string text, std::string_view needle,
                               std::string_view replacement) {
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), replacement);
        pos += replacement.size();
    }
    return text;
}

} // namespace blindfold
