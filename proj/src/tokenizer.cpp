#include "dlcm/tokenizer.hpp"

#include <json.hpp>

#include <fstream>

namespace dlcm {

Vocab Vocab::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("vocab: cannot open " + path);
  nlohmann::json j;
  in >> j;
  const std::string type = j.value("type", "");
  if (type != "byte") throw ConfigError("vocab: unsupported type '" + type + "' in " + path);
  return Vocab{};
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
  std::vector<int> ids;
  ids.reserve(text.size() + 1);
  ids.push_back(kBod);
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

std::vector<std::string> Vocab::token_strings(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= 0 && id < 256) {
      out.emplace_back(1, static_cast<char>(static_cast<unsigned char>(id)));
    } else {
      out.emplace_back();
    }
  }
  return out;
}

}  // namespace dlcm
