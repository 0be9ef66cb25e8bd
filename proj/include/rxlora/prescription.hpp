#pragma once

// Prescription domain types and the "<herb> <grams>g, ..." target-string grammar.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rxlora {

// Opaque herb identifier. Interior spaces are allowed; commas, newlines and
// surrounding whitespace are not.
class HerbName {
 public:
  explicit HerbName(std::string text);

  const std::string& str() const noexcept { return text_; }

  friend bool operator==(const HerbName&, const HerbName&) = default;
  friend auto operator<=>(const HerbName&, const HerbName&) = default;

 private:
  std::string text_;
};

// Positive dosage in grams, stored as an integer count of tenths so that
// rendering and parsing are exact.
class Dosage {
 public:
  static Dosage from_tenths(std::int64_t tenths);
  // Rejects values that are not a whole number of tenths (within 1e-6 g).
  static Dosage from_grams(double grams);

  std::int64_t tenths() const noexcept { return tenths_; }
  double grams() const noexcept { return static_cast<double>(tenths_) / 10.0; }

  // "10", "4.5"; never exponent notation, never a trailing ".0".
  std::string to_string() const;

  friend bool operator==(const Dosage&, const Dosage&) = default;
  friend auto operator<=>(const Dosage&, const Dosage&) = default;

 private:
  explicit Dosage(std::int64_t tenths) : tenths_(tenths) {}
  std::int64_t tenths_;
};

struct PrescriptionItem {
  HerbName herb;
  Dosage dosage;

  friend bool operator==(const PrescriptionItem&, const PrescriptionItem&) = default;
};

// Ordered, non-empty list of items with pairwise distinct herbs.
class Prescription {
 public:
  explicit Prescription(std::vector<PrescriptionItem> items);

  const std::vector<PrescriptionItem>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }

  const PrescriptionItem* find(const HerbName& herb) const;

  friend bool operator==(const Prescription&, const Prescription&) = default;

 private:
  std::vector<PrescriptionItem> items_;
};

struct ClinicalRecord {
  std::string chief_complaint;
  std::string history;
  std::string tongue;
  Prescription prescription;

  // Throws InvariantViolation when chief_complaint is empty.
  void validate() const;

  friend bool operator==(const ClinicalRecord&, const ClinicalRecord&) = default;
};

std::string serialize(const Prescription& p);

// Exact inverse of serialize. Throws MalformedItem, DuplicateHerb or
// EmptyPrescription.
Prescription parse_strict(std::string_view s);

struct ParseWarning {
  std::size_t item_index;
  std::string item;
  std::string reason;
};

struct LenientParse {
  std::optional<Prescription> prescription;  // nullopt when no item survived
  std::vector<ParseWarning> warnings;
};

// Never throws. Malformed items are skipped, duplicate herbs keep the first
// occurrence; each skipped item yields one warning.
LenientParse parse_lenient(std::string_view s);

std::string render_prompt(const ClinicalRecord& r);

}  // namespace rxlora
