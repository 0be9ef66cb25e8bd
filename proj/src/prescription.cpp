#include "rxlora/prescription.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "rxlora/error.hpp"

namespace rxlora {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Parses "<number>g" into tenths. In canonical mode only the exact form that
// Dosage::to_string produces is accepted.
std::optional<Dosage> parse_dosage(std::string_view token, bool canonical) {
  if (token.size() < 2 || token.back() != 'g') return std::nullopt;
  token.remove_suffix(1);
  const auto dot = token.find('.');
  const std::string_view whole = token.substr(0, dot);
  std::string_view frac;
  if (dot != std::string_view::npos) {
    frac = token.substr(dot + 1);
    if (frac.size() != 1) return std::nullopt;
  }
  if (whole.empty() || whole.size() > 12) return std::nullopt;
  const auto all_digits = [](std::string_view d) {
    return std::all_of(d.begin(), d.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (!all_digits(whole) || !all_digits(frac)) return std::nullopt;
  if (canonical) {
    if (whole.size() > 1 && whole.front() == '0') return std::nullopt;
    if (!frac.empty() && frac.front() == '0') return std::nullopt;
  }
  std::int64_t tenths = 0;
  for (char c : whole) tenths = tenths * 10 + (c - '0');
  tenths *= 10;
  if (!frac.empty()) tenths += frac.front() - '0';
  if (tenths <= 0) return std::nullopt;
  return Dosage::from_tenths(tenths);
}

struct ItemResult {
  std::optional<PrescriptionItem> item;
  std::string reason;
};

ItemResult parse_item(std::string_view text, bool canonical) {
  if (text.empty()) return {std::nullopt, "empty item"};
  const auto space = text.find_last_of(' ');
  if (space == std::string_view::npos) return {std::nullopt, "missing dosage"};
  std::string_view herb = text.substr(0, space);
  const std::string_view dose = text.substr(space + 1);
  if (!canonical) herb = trim(herb);
  if (herb.empty() || is_space(herb.front()) || is_space(herb.back())) {
    return {std::nullopt, "empty herb name"};
  }
  if (herb.find_first_of(",\n") != std::string_view::npos) {
    return {std::nullopt, "invalid herb name"};
  }
  auto dosage = parse_dosage(dose, canonical);
  if (!dosage) return {std::nullopt, "malformed dosage '" + std::string(dose) + "'"};
  return {PrescriptionItem{HerbName(std::string(herb)), *dosage}, {}};
}

}  // namespace

HerbName::HerbName(std::string text) : text_(std::move(text)) {
  if (text_.empty()) throw Error(ErrorKind::kInvariantViolation, "herb name is empty");
  if (is_space(text_.front()) || is_space(text_.back())) {
    throw Error(ErrorKind::kInvariantViolation, "herb name has surrounding whitespace: '" + text_ + "'");
  }
  if (text_.find_first_of(",\n") != std::string::npos) {
    throw Error(ErrorKind::kInvariantViolation, "herb name contains a delimiter: '" + text_ + "'");
  }
}

Dosage Dosage::from_tenths(std::int64_t tenths) {
  if (tenths <= 0) {
    throw Error(ErrorKind::kInvariantViolation, "dosage must be positive");
  }
  return Dosage(tenths);
}

Dosage Dosage::from_grams(double grams) {
  if (!std::isfinite(grams) || grams <= 0.0) {
    throw Error(ErrorKind::kInvariantViolation, "dosage must be positive and finite");
  }
  const double scaled = grams * 10.0;
  if (scaled > static_cast<double>(std::numeric_limits<std::int32_t>::max())) {
    throw Error(ErrorKind::kInvariantViolation, "dosage out of range");
  }
  const double rounded = std::round(scaled);
  if (std::abs(scaled - rounded) > 1e-5) {
    throw Error(ErrorKind::kInvariantViolation, "dosage has more than one fractional digit");
  }
  return from_tenths(static_cast<std::int64_t>(rounded));
}

std::string Dosage::to_string() const {
  std::string out = std::to_string(tenths_ / 10);
  if (tenths_ % 10 != 0) {
    out += '.';
    out += static_cast<char>('0' + tenths_ % 10);
  }
  return out;
}

Prescription::Prescription(std::vector<PrescriptionItem> items) : items_(std::move(items)) {
  if (items_.empty()) throw Error(ErrorKind::kEmptyPrescription, "prescription has no items");
  std::set<std::string_view> seen;
  for (const auto& item : items_) {
    if (!seen.insert(item.herb.str()).second) {
      throw Error(ErrorKind::kDuplicateHerb, "duplicate herb '" + item.herb.str() + "'");
    }
  }
}

const PrescriptionItem* Prescription::find(const HerbName& herb) const {
  for (const auto& item : items_) {
    if (item.herb == herb) return &item;
  }
  return nullptr;
}

void ClinicalRecord::validate() const {
  if (chief_complaint.empty()) {
    throw Error(ErrorKind::kInvariantViolation, "chief complaint is empty");
  }
}

std::string serialize(const Prescription& p) {
  std::string out;
  for (std::size_t i = 0; i < p.items().size(); ++i) {
    if (i > 0) out += ", ";
    const auto& item = p.items()[i];
    out += item.herb.str();
    out += ' ';
    out += item.dosage.to_string();
    out += 'g';
  }
  return out;
}

Prescription parse_strict(std::string_view s) {
  if (s.empty()) throw Error(ErrorKind::kEmptyPrescription, "empty string");
  std::vector<PrescriptionItem> items;
  std::set<std::string> seen;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    const std::string_view text = s.substr(start, comma == std::string_view::npos ? s.npos : comma - start);
    auto parsed = parse_item(text, /*canonical=*/true);
    if (!parsed.item) {
      throw Error(ErrorKind::kMalformedItem, "item " + std::to_string(items.size()) + " '" +
                                                 std::string(text) + "': " + parsed.reason);
    }
    if (!seen.insert(parsed.item->herb.str()).second) {
      throw Error(ErrorKind::kDuplicateHerb, "duplicate herb '" + parsed.item->herb.str() + "'");
    }
    items.push_back(std::move(*parsed.item));
    if (comma == std::string_view::npos) break;
    if (comma + 1 >= s.size() || s[comma + 1] != ' ') {
      throw Error(ErrorKind::kMalformedItem, "separator after item " +
                                                 std::to_string(items.size() - 1) + " is not \", \"");
    }
    start = comma + 2;
  }
  return Prescription(std::move(items));
}

LenientParse parse_lenient(std::string_view s) {
  LenientParse out;
  if (trim(s).empty()) {
    out.warnings.push_back({0, std::string(s), "empty prediction"});
    return out;
  }
  std::vector<PrescriptionItem> items;
  std::set<std::string> seen;
  std::size_t start = 0;
  std::size_t index = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string_view raw = s.substr(start, comma == std::string_view::npos ? s.npos : comma - start);
    const std::string_view text = trim(raw);
    auto parsed = parse_item(text, /*canonical=*/false);
    if (!parsed.item) {
      out.warnings.push_back({index, std::string(text), parsed.reason});
    } else if (!seen.insert(parsed.item->herb.str()).second) {
      out.warnings.push_back({index, std::string(text), "duplicate herb, kept first occurrence"});
    } else {
      items.push_back(std::move(*parsed.item));
    }
    ++index;
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (!items.empty()) out.prescription.emplace(std::move(items));
  return out;
}

std::string render_prompt(const ClinicalRecord& r) {
  return "Symptoms: " + r.chief_complaint + " | History: " + r.history + " | Tongue: " + r.tongue +
         "\nPrescription:";
}

}  // namespace rxlora
