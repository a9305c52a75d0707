// Porter stemmer, following the rule lists in Porter (1980). Rules within a
// step are tried in list order; the first suffix that matches decides the step
// whether or not its condition holds.

#include <array>
#include <string>
#include <string_view>

#include "meshdex/textprep.hpp"

namespace meshdex {
namespace {

bool is_consonant(std::string_view w, std::size_t i)
{
    switch (w[i]) {
    case 'a':
    case 'e':
    case 'i':
    case 'o':
    case 'u':
        return false;
    case 'y':
        return i == 0 || !is_consonant(w, i - 1);
    default:
        return true;
    }
}

// Number of VC sequences in [C](VC)^m[V].
int measure(std::string_view w)
{
    int m = 0;
    std::size_t i = 0;
    const std::size_t n = w.size();
    while (i < n && is_consonant(w, i)) {
        ++i;
    }
    while (i < n) {
        while (i < n && !is_consonant(w, i)) {
            ++i;
        }
        if (i >= n) {
            break;
        }
        while (i < n && is_consonant(w, i)) {
            ++i;
        }
        ++m;
    }
    return m;
}

bool contains_vowel(std::string_view w)
{
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!is_consonant(w, i)) {
            return true;
        }
    }
    return false;
}

bool ends_double_consonant(std::string_view w)
{
    const std::size_t n = w.size();
    return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

// *o: ends consonant-vowel-consonant, last consonant not w, x or y.
bool ends_cvc(std::string_view w)
{
    const std::size_t n = w.size();
    if (n < 3) {
        return false;
    }
    const char last = w[n - 1];
    return is_consonant(w, n - 3) && !is_consonant(w, n - 2) && is_consonant(w, n - 1) &&
           last != 'w' && last != 'x' && last != 'y';
}

bool ends_with(std::string_view w, std::string_view suffix)
{
    return w.size() >= suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

enum class Cond { none, m_positive, m_gt1, m_gt1_s_or_t };

struct Rule {
    std::string_view suffix;
    std::string_view replacement;
    Cond cond;
};

bool holds(Cond cond, std::string_view stem)
{
    switch (cond) {
    case Cond::none:
        return true;
    case Cond::m_positive:
        return measure(stem) > 0;
    case Cond::m_gt1:
        return measure(stem) > 1;
    case Cond::m_gt1_s_or_t:
        return measure(stem) > 1 && !stem.empty() && (stem.back() == 's' || stem.back() == 't');
    }
    return false;
}

template <std::size_t N>
void apply_rules(std::string& w, const std::array<Rule, N>& rules)
{
    for (const Rule& r : rules) {
        if (!ends_with(w, r.suffix)) {
            continue;
        }
        const std::string_view stem = std::string_view(w).substr(0, w.size() - r.suffix.size());
        if (holds(r.cond, stem)) {
            w = std::string(stem) + std::string(r.replacement);
        }
        return;
    }
}

void step1a(std::string& w)
{
    static constexpr std::array<Rule, 4> rules{{
        {"sses", "ss", Cond::none},
        {"ies", "i", Cond::none},
        {"ss", "ss", Cond::none},
        {"s", "", Cond::none},
    }};
    apply_rules(w, rules);
}

void step1b(std::string& w)
{
    if (ends_with(w, "eed")) {
        if (measure(std::string_view(w).substr(0, w.size() - 3)) > 0) {
            w.pop_back();
        }
        return;
    }
    std::size_t cut = 0;
    if (ends_with(w, "ed")) {
        cut = 2;
    } else if (ends_with(w, "ing")) {
        cut = 3;
    } else {
        return;
    }
    const std::string_view stem = std::string_view(w).substr(0, w.size() - cut);
    if (!contains_vowel(stem)) {
        return;
    }
    w.resize(stem.size());

    if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
        w += 'e';
    } else if (ends_double_consonant(w) && w.back() != 'l' && w.back() != 's' && w.back() != 'z') {
        w.pop_back();
    } else if (measure(w) == 1 && ends_cvc(w)) {
        w += 'e';
    }
}

void step1c(std::string& w)
{
    if (ends_with(w, "y") && contains_vowel(std::string_view(w).substr(0, w.size() - 1))) {
        w.back() = 'i';
    }
}

void step2(std::string& w)
{
    static constexpr std::array<Rule, 20> rules{{
        {"ational", "ate", Cond::m_positive},
        {"tional", "tion", Cond::m_positive},
        {"enci", "ence", Cond::m_positive},
        {"anci", "ance", Cond::m_positive},
        {"izer", "ize", Cond::m_positive},
        {"abli", "able", Cond::m_positive},
        {"alli", "al", Cond::m_positive},
        {"entli", "ent", Cond::m_positive},
        {"eli", "e", Cond::m_positive},
        {"ousli", "ous", Cond::m_positive},
        {"ization", "ize", Cond::m_positive},
        {"ation", "ate", Cond::m_positive},
        {"ator", "ate", Cond::m_positive},
        {"alism", "al", Cond::m_positive},
        {"iveness", "ive", Cond::m_positive},
        {"fulness", "ful", Cond::m_positive},
        {"ousness", "ous", Cond::m_positive},
        {"aliti", "al", Cond::m_positive},
        {"iviti", "ive", Cond::m_positive},
        {"biliti", "ble", Cond::m_positive},
    }};
    apply_rules(w, rules);
}

void step3(std::string& w)
{
    static constexpr std::array<Rule, 7> rules{{
        {"icate", "ic", Cond::m_positive},
        {"ative", "", Cond::m_positive},
        {"alize", "al", Cond::m_positive},
        {"iciti", "ic", Cond::m_positive},
        {"ical", "ic", Cond::m_positive},
        {"ful", "", Cond::m_positive},
        {"ness", "", Cond::m_positive},
    }};
    apply_rules(w, rules);
}

void step4(std::string& w)
{
    static constexpr std::array<Rule, 19> rules{{
        {"al", "", Cond::m_gt1},
        {"ance", "", Cond::m_gt1},
        {"ence", "", Cond::m_gt1},
        {"er", "", Cond::m_gt1},
        {"ic", "", Cond::m_gt1},
        {"able", "", Cond::m_gt1},
        {"ible", "", Cond::m_gt1},
        {"ant", "", Cond::m_gt1},
        {"ement", "", Cond::m_gt1},
        {"ment", "", Cond::m_gt1},
        {"ent", "", Cond::m_gt1},
        {"ion", "", Cond::m_gt1_s_or_t},
        {"ou", "", Cond::m_gt1},
        {"ism", "", Cond::m_gt1},
        {"ate", "", Cond::m_gt1},
        {"iti", "", Cond::m_gt1},
        {"ous", "", Cond::m_gt1},
        {"ive", "", Cond::m_gt1},
        {"ize", "", Cond::m_gt1},
    }};
    apply_rules(w, rules);
}

void step5a(std::string& w)
{
    if (!ends_with(w, "e")) {
        return;
    }
    const std::string_view stem = std::string_view(w).substr(0, w.size() - 1);
    const int m = measure(stem);
    if (m > 1 || (m == 1 && !ends_cvc(stem))) {
        w.pop_back();
    }
}

void step5b(std::string& w)
{
    if (ends_with(w, "ll") && measure(std::string_view(w).substr(0, w.size() - 1)) > 1) {
        w.pop_back();
    }
}

}  // namespace

std::string stem(std::string_view token)
{
    std::string w(token);
    if (w.empty()) {
        return w;
    }
    step1a(w);
    if (w.empty()) {
        return w;
    }
    step1b(w);
    step1c(w);
    step2(w);
    step3(w);
    step4(w);
    step5a(w);
    step5b(w);
    return w;
}

}  // namespace meshdex
