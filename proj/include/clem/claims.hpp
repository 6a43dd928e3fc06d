#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "clem/codes.hpp"
#include "clem/date.hpp"

namespace clem {

enum class Sex : std::uint8_t { F, M };

const char* sex_tag(Sex s); // "F" / "M"
Sex sex_from_tag(std::string_view tag);

/// One billing record. Invariants: at least one code across dx/px/rx;
/// primary_dx, when present, is a member of dx.
struct Claim {
    std::string claim_id;
    Date service_date;
    bool is_hospitalization = false;
    std::optional<MedicalCode> primary_dx;
    std::vector<MedicalCode> dx;
    std::vector<MedicalCode> px;
    std::vector<MedicalCode> rx;
};

/// Throws SchemaError when a Claim invariant is violated.
void validate_claim(const Claim& c);

/// Demographics plus claims sorted ascending by service date. Records
/// loaded for modeling have the leakage filter already applied when an
/// anchor date is present; raw cohort records (as generated and stored
/// on disk) may still carry post-anchor claims for label derivation.
struct PatientHistory {
    std::string patient_id;
    int age_years = 0;
    Sex sex = Sex::F;
    std::optional<Date> anchor_date;
    std::vector<Claim> claims;
};

enum class Label : std::uint8_t { NotHospitalized = 0, Hospitalized = 1 };

struct LabeledExample {
    PatientHistory history;
    Label label;
};

// --- corpus file: UTF-8, one JSON object per line ---

void save_claims_corpus(const std::vector<PatientHistory>& records, const std::string& path);

/// Streams records exactly as stored (claims sorted, no filtering).
/// Schema violations raise SchemaError naming the line number.
void for_each_corpus_record(const std::string& path,
                            const std::function<void(PatientHistory&&)>& fn);

/// Loads records as stored, sorted by service date, unfiltered.
std::vector<PatientHistory> read_corpus_raw(const std::string& path);

/// Loads model-facing histories: the leakage filter is applied to every
/// record that carries an anchor date.
std::vector<PatientHistory> load_claims_corpus(const std::string& path);

struct CohortStats {
    std::size_t n_records = 0;
    std::size_t n_hospitalized = 0;
    std::size_t n_not_hospitalized = 0;
    std::size_t n_indeterminate = 0; // excluded from the returned set
};

/// Derives labels from the unfiltered records, then applies the leakage
/// filter to the kept examples. Indeterminate records are dropped and
/// counted.
std::vector<LabeledExample> load_labeled_cohort(const std::string& path,
                                                const std::set<std::string>& covid_dx_codes,
                                                CohortStats* stats = nullptr);

} // namespace clem
