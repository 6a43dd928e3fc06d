#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace clem {

enum class CodeSystem : std::uint8_t {
    Diagnosis,  // ICD-10-CM
    Procedure,  // HCPCS / CPT
    Medication, // NDC
};

/// Short lowercase tag used in file schemas: "dx", "px", "rx".
const char* system_tag(CodeSystem s);
CodeSystem system_from_tag(std::string_view tag); // throws SchemaError

/// A billing code, normalized (uppercase, punctuation stripped) and
/// validated against its system's format.
struct MedicalCode {
    CodeSystem system;
    std::string value;

    auto operator<=>(const MedicalCode&) const = default;
};

/// Uppercases and removes every non-alphanumeric character. Idempotent.
std::string normalize_code(std::string_view raw);

/// True when a normalized value satisfies the system's format:
///   Diagnosis:  [A-Z][0-9][0-9A-Z] followed by 0..4 alphanumerics
///   Procedure:  [A-Z][0-9]{4} | [0-9]{5} | [0-9]{4}[A-Z]
///   Medication: 8..11 digits (full NDCs are 10-11; 8-9 digit
///               labeler/product prefixes are also accepted)
bool valid_code_value(CodeSystem system, std::string_view normalized);

/// Normalizes and validates. Throws FormatError naming the violated
/// pattern and the offending input.
MedicalCode parse_code(CodeSystem system, std::string_view raw);

} // namespace clem
