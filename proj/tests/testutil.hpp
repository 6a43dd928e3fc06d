#pragma once

#include <string>
#include <vector>

#include "clem/claims.hpp"
#include "clem/codes.hpp"
#include "clem/date.hpp"

namespace clem::testutil {

inline Date d(const std::string& iso) { return *parse_date(iso); }

inline std::vector<MedicalCode> dx_codes(const std::vector<std::string>& vals) {
    std::vector<MedicalCode> out;
    for (const auto& v : vals) out.push_back(parse_code(CodeSystem::Diagnosis, v));
    return out;
}

inline Claim make_claim(const std::string& date, const std::vector<std::string>& dx,
                        bool hosp = false, const std::string& primary = "") {
    Claim c;
    static int counter = 0;
    c.claim_id = "T-" + std::to_string(counter++);
    c.service_date = d(date);
    c.is_hospitalization = hosp;
    c.dx = dx_codes(dx);
    if (!primary.empty()) c.primary_dx = parse_code(CodeSystem::Diagnosis, primary);
    else if (!c.dx.empty()) c.primary_dx = c.dx.front();
    return c;
}

inline PatientHistory make_history(const std::vector<Claim>& claims, int age = 50, Sex sex = Sex::F,
                                   const std::string& anchor = "") {
    PatientHistory h;
    h.patient_id = "TP";
    h.age_years = age;
    h.sex = sex;
    if (!anchor.empty()) h.anchor_date = d(anchor);
    h.claims = claims;
    return h;
}

} // namespace clem::testutil
