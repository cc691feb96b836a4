// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace capgan {

// Bidirectional token <-> id map. Ids 0..3 are reserved for the special
// tokens; regular tokens start at 4.
class Vocabulary {
public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);  // full list incl. specials

  // Appends a non-special token; returns its id. Duplicates are rejected.
  int add(const std::string& token);

  int id(const std::string& token) const;  // kUnk when unknown
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  std::size_t size() const { return id_to_token_.size(); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  // Drops <pad>/<bos>/<eos>; keeps <unk> visible as a regular token.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  int min_count_used = 0;

private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace capgan
