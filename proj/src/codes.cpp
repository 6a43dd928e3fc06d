#include "clem/codes.hpp"

#include <cctype>

#include "clem/error.hpp"

namespace clem {

namespace {

bool upper_alpha(char c) { return c >= 'A' && c <= 'Z'; }
bool digit(char c) { return c >= '0' && c <= '9'; }
bool upper_alnum(char c) { return upper_alpha(c) || digit(c); }

const char* pattern_name(CodeSystem s) {
    switch (s) {
        case CodeSystem::Diagnosis: return "[A-Z][0-9][0-9A-Z][0-9A-Z]{0,4}";
        case CodeSystem::Procedure: return "[A-Z][0-9]{4} | [0-9]{5} | [0-9]{4}[A-Z]";
        case CodeSystem::Medication: return "8-11 digits";
    }
    return "?";
}

} // namespace

const char* system_tag(CodeSystem s) {
    switch (s) {
        case CodeSystem::Diagnosis: return "dx";
        case CodeSystem::Procedure: return "px";
        case CodeSystem::Medication: return "rx";
    }
    return "?";
}

CodeSystem system_from_tag(std::string_view tag) {
    if (tag == "dx") return CodeSystem::Diagnosis;
    if (tag == "px") return CodeSystem::Procedure;
    if (tag == "rx") return CodeSystem::Medication;
    throw SchemaError("unknown code system tag: '" + std::string(tag) + "'");
}

std::string normalize_code(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (char c : raw) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) out.push_back(static_cast<char>(std::toupper(u)));
    }
    return out;
}

bool valid_code_value(CodeSystem system, std::string_view v) {
    switch (system) {
        case CodeSystem::Diagnosis: {
            if (v.size() < 3 || v.size() > 7) return false;
            if (!upper_alpha(v[0]) || !digit(v[1]) || !upper_alnum(v[2])) return false;
            for (std::size_t i = 3; i < v.size(); ++i)
                if (!upper_alnum(v[i])) return false;
            return true;
        }
        case CodeSystem::Procedure: {
            if (v.size() != 5) return false;
            // HCPCS Level II: letter + 4 digits
            if (upper_alpha(v[0]))
                return digit(v[1]) && digit(v[2]) && digit(v[3]) && digit(v[4]);
            if (!digit(v[0]) || !digit(v[1]) || !digit(v[2]) || !digit(v[3])) return false;
            // CPT: 5 digits; CPT Category II: 4 digits + letter
            return digit(v[4]) || upper_alpha(v[4]);
        }
        case CodeSystem::Medication: {
            if (v.size() < 8 || v.size() > 11) return false;
            for (char c : v)
                if (!digit(c)) return false;
            return true;
        }
    }
    return false;
}

MedicalCode parse_code(CodeSystem system, std::string_view raw) {
    if (raw.empty())
        throw FormatError(std::string("empty ") + system_tag(system) + " code");
    std::string norm = normalize_code(raw);
    if (!valid_code_value(system, norm))
        throw FormatError(std::string(system_tag(system)) + " code '" + std::string(raw) +
                          "' does not match " + pattern_name(system));
    return MedicalCode{system, std::move(norm)};
}

} // namespace clem
