#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "kale/error.hpp"

namespace kale {

// Token table backed by a one-token-per-line file; line number is the id.
// The four special tokens must be present.
class Vocabulary {
 public:
  static constexpr const char* kPad = "[PAD]";
  static constexpr const char* kUnk = "[UNK]";
  static constexpr const char* kCls = "[CLS]";
  static constexpr const char* kSep = "[SEP]";

  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  // Returns the id, or the [UNK] id for out-of-vocabulary tokens.
  int id_or_unk(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;

  int pad_id() const { return pad_; }
  int unk_id() const { return unk_; }
  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int pad_ = -1, unk_ = -1, cls_ = -1, sep_ = -1;
};

}  // namespace kale
