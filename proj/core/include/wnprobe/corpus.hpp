// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace wnprobe {

using TokenId = std::uint32_t;

// A contiguous run of tokens fed to one forward pass. `offset` is the global
// corpus index of ids[0]; it keys captured samples and POS annotations.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::uint32_t doc_id = 0;
  std::uint64_t offset = 0;
};

struct Corpus {
  std::string name;
  std::string split;
  std::size_t vocab_size = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint64_t> doc_starts;  // first is 0, strictly increasing
  std::string checksum;

  std::size_t size() const { return ids.size(); }
  std::uint32_t doc_of(std::uint64_t index) const;
  void validate() const;
};

// Reads the JSON manifest and its little-endian u32 token file.
Corpus load_corpus(const std::filesystem::path& manifest_path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& manifest_path);

struct Window {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
  std::uint32_t doc = 0;
  std::size_t size() const { return static_cast<std::size_t>(end - begin); }
};

// Non-overlapping windows of at most `context` tokens; every document starts a
// new window. Windows shorter than two tokens predict nothing and are dropped.
struct WindowPlan {
  std::vector<Window> windows;
  std::size_t context = 0;

  std::size_t predicted_tokens() const;
  std::string policy() const;
  TokenSequence sequence(const Corpus& corpus, std::size_t w) const;
};

WindowPlan plan_windows(const Corpus& corpus, std::size_t context);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions propagate.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace wnprobe
