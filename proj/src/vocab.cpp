#include "kale/vocab.hpp"

#include <fstream>

namespace kale {

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.empty()) throw ConfigError("vocabulary is empty");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) {
    auto [it, inserted] = v.index_.emplace(v.tokens_[i], i);
    if (!inserted)
      throw ConfigError("duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  auto find = [&](const char* tok) {
    auto it = v.index_.find(tok);
    if (it == v.index_.end())
      throw ConfigError(std::string("vocabulary is missing required token ") + tok);
    return it->second;
  };
  v.pad_ = find(kPad);
  v.unk_ = find(kUnk);
  v.cls_ = find(kCls);
  v.sep_ = find(kSep);
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary file " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary file " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id_or_unk(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_ : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw InputError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

}  // namespace kale
