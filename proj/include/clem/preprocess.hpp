#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "clem/claims.hpp"

namespace clem {

/// One bucket of the age partition. The last bucket is open-ended.
struct AgeBucket {
    int ordinal = 0;
    int lower = 0;
    std::optional<int> upper; // inclusive; nullopt for the last bucket
    std::string label;        // e.g. "65-78", "79+"
};

/// Partition of [0, inf) into consecutive buckets, defined by the
/// inclusive upper bounds of all but the last bucket.
class AgeBucketTable {
  public:
    explicit AgeBucketTable(std::vector<int> upper_bounds);

    /// Clinically-derived default: 0-2, 3-5, 6-13, 14-18, 19-33, 34-48,
    /// 49-64, 65-78, 79+.
    static const AgeBucketTable& defaults();

    AgeBucket bucket(int age_years) const; // total for age_years >= 0
    int size() const { return static_cast<int>(uppers_.size()) + 1; }
    const std::vector<int>& upper_bounds() const { return uppers_; }
    std::vector<std::string> labels() const;

  private:
    std::vector<int> uppers_;
};

/// Keeps exactly the claims with service_date < anchor - 7 days and
/// service_date >= anchor - 3 calendar years, preserving order.
/// "Up to 7 days prior" drops [anchor - 7d, anchor]; post-anchor claims
/// are never feature material and are dropped as well.
std::vector<Claim> apply_leakage_filter(std::vector<Claim> claims, const Date& anchor);

/// Filters h.claims in place when an anchor is present; no-op otherwise.
PatientHistory apply_leakage_filter(PatientHistory h);

enum class LabelOutcome : std::uint8_t { NotHospitalized = 0, Hospitalized = 1, Indeterminate = 2 };

/// Labeling over the *unfiltered* record:
///   Hospitalized     — some post-anchor hospitalization claim has a
///                      primary diagnosis in covid_dx_codes;
///   NotHospitalized  — some post-anchor non-hospitalization claim
///                      exists, or no claim falls in (anchor, anchor+30d];
///   Indeterminate    — otherwise (excluded from cohorts).
LabelOutcome derive_label(const std::vector<Claim>& claims, const Date& anchor,
                          const std::set<std::string>& covid_dx_codes);

/// Inclusive alphanumeric prefix range for one risk factor.
struct RiskFactorEntry {
    std::string risk_name;
    CodeSystem system;
    std::string prefix_lo;
    std::string prefix_hi;
};

/// Ordered set of risk factors, each backed by one or more prefix
/// ranges. Risk order (= feature order) is first-appearance order.
class RiskFactorMap {
  public:
    static RiskFactorMap from_entries(std::vector<RiskFactorEntry> entries);

    /// Tab-separated file: risk_name, system (dx/px/rx), prefix_lo,
    /// prefix_hi. '#' starts a comment.
    static RiskFactorMap load(const std::string& path);
    void save(const std::string& path) const;

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<RiskFactorEntry>& entries() const { return entries_; }
    std::size_t size() const { return names_.size(); }

    /// Indices (into names()) of every risk factor whose ranges contain
    /// the code. Possibly empty.
    std::vector<int> match(const MedicalCode& code) const;
    bool matches_any(const MedicalCode& code) const;

  private:
    void validate() const;

    std::vector<RiskFactorEntry> entries_;
    std::vector<std::string> names_;
    std::vector<int> entry_risk_; // entries_[i] -> index into names_
};

/// The 25-entry default map (CDC-style high-risk condition list).
const RiskFactorMap& default_risk_map();

/// Binary indicator per risk factor (1 iff any code in the history
/// matches), followed by the age bucket ordinal and a sex indicator
/// (M = 1). Length map.size() + 2.
std::vector<double> map_risk_factors(const PatientHistory& history, const RiskFactorMap& map,
                                     const AgeBucketTable& buckets = AgeBucketTable::defaults());

} // namespace clem
