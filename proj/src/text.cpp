#include "unifl/text.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace unifl::text {

void CodeDictionary::add(const std::string& code, const std::string& description,
                         const std::string& domain_tag) {
  if (description.empty()) {
    throw std::invalid_argument("dictionary description must be nonempty (code '" +
                                code + "')");
  }
  entries[code] = Entry{description, domain_tag};
}

bool CodeDictionary::contains(const std::string& code) const {
  return entries.find(code) != entries.end();
}

std::string normalize(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::string describe_value(const std::string& value, const CodeDictionary& dict) {
  auto it = dict.entries.find(value);
  return it != dict.entries.end() ? it->second.description : value;
}

std::string linearize_event(const MedicalEvent& event, const CodeDictionary& dict) {
  std::string out = normalize(event.event_type);
  for (const auto& [name, value] : event.features) {
    const std::string described = normalize(describe_value(value, dict));
    const std::string norm_name = normalize(name);
    if (!norm_name.empty()) {
      out.push_back(' ');
      out += norm_name;
    }
    if (!described.empty()) {
      out.push_back(' ');
      out += described;
    }
  }
  return out;
}

void save_dictionary_tsv(const CodeDictionary& dict, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  for (const auto& [code, entry] : dict.entries) {
    f << code << '\t' << entry.description << '\t' << entry.domain_tag << '\n';
  }
}

CodeDictionary load_dictionary_tsv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  CodeDictionary dict;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos
                                                : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected code<TAB>description<TAB>domain_tag");
    }
    dict.add(line.substr(0, tab1), line.substr(tab1 + 1, tab2 - tab1 - 1),
             line.substr(tab2 + 1));
  }
  return dict;
}

}  // namespace unifl::text
