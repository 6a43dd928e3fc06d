#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "clem/claims.hpp"
#include "clem/preprocess.hpp"

namespace clem {

enum class TokenKind : std::uint8_t { Age, Sex, Dx, Px, Rx, Special };

/// Surfaces carry their kind as a prefix: "AGE_65-78", "SEX_F",
/// "DX_R062", "PX_99214", "RX_0143988701", "[CLS]".
TokenKind token_kind(std::string_view surface);
bool is_code_kind(TokenKind k);

std::string age_token(int age_years, const AgeBucketTable& buckets);
std::string sex_token(Sex s);
std::string code_token(const MedicalCode& c);

/// Special token ids are fixed: [PAD]=0, [UNK]=1, [CLS]=2, [MASK]=3.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kMaskId = 3;
inline constexpr std::int32_t kNumSpecials = 4;

class Vocabulary {
  public:
    /// Specials first, then every token ordered by (frequency desc,
    /// surface asc). Code tokens below min_count are dropped (they map
    /// to [UNK]); demographic tokens are always included.
    static Vocabulary build(const std::vector<PatientHistory>& corpus, int min_count,
                            const AgeBucketTable& buckets = AgeBucketTable::defaults());

    /// Tab-separated (id, surface, frequency), sorted by id.
    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;

    std::int32_t id(std::string_view surface) const; // kUnkId when absent
    const std::string& surface(std::int32_t id) const;
    TokenKind kind(std::int32_t id) const { return kinds_[static_cast<std::size_t>(id)]; }
    std::int64_t frequency(std::int32_t id) const { return freqs_[static_cast<std::size_t>(id)]; }
    std::int32_t size() const { return static_cast<std::int32_t>(surfaces_.size()); }
    int min_count() const { return min_count_; }

  private:
    Vocabulary() = default;
    void index();

    std::vector<std::string> surfaces_;
    std::vector<std::int64_t> freqs_;
    std::vector<TokenKind> kinds_;
    std::unordered_map<std::string, std::int32_t> by_surface_;
    int min_count_ = 0;
};

/// Token ids plus per-position provenance.
struct ClaimSequence {
    std::vector<std::int32_t> ids;
    std::vector<TokenKind> kinds;           // aligned with ids
    std::vector<std::uint32_t> claim_ref;   // aligned; index into claim_ids
    std::vector<std::string> claim_ids;

    std::size_t size() const { return ids.size(); }
};

/// Pretraining view of one claim: [AGE, SEX] then the claim's code
/// tokens in seed-shuffled order. Unknown codes map to [UNK].
ClaimSequence tokenize_claim(const Claim& claim, int age_years, Sex sex, const Vocabulary& vocab,
                             std::uint64_t seed,
                             const AgeBucketTable& buckets = AgeBucketTable::defaults());

/// Fine-tuning view of a whole history: [CLS], AGE, SEX, then code
/// tokens in chronological order (dx, px, rx within each claim). When
/// the result would exceed max_len, the oldest code tokens are dropped;
/// the three leading tokens never are.
ClaimSequence tokenize_history(const PatientHistory& history, const Vocabulary& vocab,
                               std::size_t max_len,
                               const AgeBucketTable& buckets = AgeBucketTable::defaults());

} // namespace clem
