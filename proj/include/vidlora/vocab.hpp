// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "vidlora/common.hpp"

#include <cctype>
#include <string>
#include <unordered_map>
#include <vector>

namespace vidlora {

// Tokenized prompt. Token 0 is the reserved null/unconditional token.
struct PromptSpec {
  std::vector<Index> tokens;
  std::string raw_text;

  bool is_null() const { return tokens.size() == 1 && tokens[0] == 0; }
};

// Closed word-level vocabulary for the synthetic domain.
class Vocab {
 public:
  static const Vocab& instance() {
    static Vocab v;
    return v;
  }

  Index size() const { return static_cast<Index>(words_.size()); }
  Index null_id() const { return 0; }

  Index id(const std::string& w) const {
    auto it = index_.find(w);
    VL_CHECK(it != index_.end(), "vocab: unknown word '" + w + "'");
    return it->second;
  }
  const std::string& word(Index i) const { return words_.at(static_cast<size_t>(i)); }

  PromptSpec tokenize(const std::string& text) const {
    PromptSpec p;
    p.raw_text = text;
    std::string cur;
    auto push = [&] {
      if (!cur.empty()) {
        p.tokens.push_back(id(cur));
        cur.clear();
      }
    };
    for (char c : text) {
      if (c == ' ' || c == '\t' || c == '\n') {
        push();
      } else {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    push();
    VL_CHECK(!p.tokens.empty(), "vocab: empty prompt");
    return p;
  }

  static PromptSpec null_prompt() {
    PromptSpec p;
    p.tokens = {0};
    p.raw_text = "";
    return p;
  }

 private:
  Vocab() {
    words_ = {
        "<null>",
        // articles / glue
        "a", "an", "in", "then", "the", "on",
        // colors
        "red", "green", "blue", "yellow", "cyan", "magenta", "orange",
        // shapes
        "square", "circle", "triangle",
        // motion words
        "sliding", "right", "left", "up", "down", "moving", "arc", "zigzagging",
        "forward", "turning", "still", "holding",
        // camera / background
        "camera", "panning", "while", "plain", "gradient", "background", "over",
        // sizes
        "small", "large",
    };
    for (size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<Index>(i);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, Index> index_;
};

}  // namespace vidlora
