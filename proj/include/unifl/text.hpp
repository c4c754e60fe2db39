#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace unifl::text {

// One structured hospital event: a type tag plus an ordered list of
// (feature name, feature value) pairs. Feature order is meaningful and is
// preserved through linearization.
struct MedicalEvent {
  std::string event_type;
  std::vector<std::pair<std::string, std::string>> features;
  std::int64_t timestamp_min = 0;  // minutes from admission, >= 0
};

// Code -> free-text description map. Descriptions are shared vocabulary
// across clients even when the codes themselves are client-local.
struct CodeDictionary {
  struct Entry {
    std::string description;
    std::string domain_tag;
  };
  std::map<std::string, Entry> entries;

  void add(const std::string& code, const std::string& description,
           const std::string& domain_tag);
  bool contains(const std::string& code) const;
  std::size_t size() const { return entries.size(); }
};

// Lowercase and collapse all whitespace runs to single ASCII spaces,
// trimming the ends. The normal form used everywhere downstream.
std::string normalize(const std::string& s);

// Code-to-description substitution; non-codes pass through unchanged.
std::string describe_value(const std::string& value, const CodeDictionary& dict);

// Flatten an event to its free-text form: the event type, then each
// feature's name and (described) value in order, space-joined. The result
// is identical for identical content regardless of which client schema
// produced the event, which is what makes heterogeneous clients share one
// input space.
std::string linearize_event(const MedicalEvent& event, const CodeDictionary& dict);

// Dictionary file format: `code<TAB>description<TAB>domain_tag`, one entry
// per line, UTF-8.
void save_dictionary_tsv(const CodeDictionary& dict, const std::string& path);
CodeDictionary load_dictionary_tsv(const std::string& path);

}  // namespace unifl::text
