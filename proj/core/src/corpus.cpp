// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "wnprobe/checksum.hpp"
#include "wnprobe/error.hpp"

namespace wnprobe {

std::uint32_t Corpus::doc_of(std::uint64_t index) const {
  auto it = std::upper_bound(doc_starts.begin(), doc_starts.end(), index);
  return static_cast<std::uint32_t>(std::distance(doc_starts.begin(), it) - 1);
}

void Corpus::validate() const {
  if (ids.empty()) throw input_error("corpus '" + name + "' is empty");
  if (doc_starts.empty() || doc_starts.front() != 0) {
    throw input_error("corpus '" + name + "': document offsets must start at 0");
  }
  for (std::size_t i = 1; i < doc_starts.size(); ++i) {
    if (doc_starts[i] <= doc_starts[i - 1] || doc_starts[i] >= ids.size()) {
      throw input_error("corpus '" + name + "': document offsets must be strictly increasing and in range");
    }
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab_size) {
      throw input_error("corpus '" + name + "': token " + std::to_string(ids[i]) + " at index " +
                        std::to_string(i) + " is outside the vocabulary");
    }
  }
}

Corpus load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw input_error("cannot open corpus manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw input_error(manifest_path.string() + ": " + e.what());
  }
  Corpus c;
  c.name = j.value("name", manifest_path.stem().string());
  c.split = j.value("split", "");
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.doc_starts = j.value("documents", std::vector<std::uint64_t>{0});
  const auto token_path = manifest_path.parent_path() / j.at("tokens").get<std::string>();
  c.checksum = sha256_file(token_path);
  if (j.contains("checksum") && j.at("checksum").get<std::string>() != c.checksum) {
    throw input_error("checksum mismatch for corpus tokens " + token_path.string());
  }
  std::ifstream tok(token_path, std::ios::binary);
  if (!tok) throw input_error("cannot open corpus tokens " + token_path.string());
  tok.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(tok.tellg());
  if (bytes % 4 != 0) throw input_error(token_path.string() + ": size is not a multiple of 4 bytes");
  tok.seekg(0);
  c.ids.resize(bytes / 4);
  tok.read(reinterpret_cast<char*>(c.ids.data()), static_cast<std::streamsize>(bytes));
  c.validate();
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& manifest_path) {
  auto token_path = manifest_path;
  token_path.replace_extension(".bin");
  {
    std::ofstream out(token_path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(corpus.ids.data()),
              static_cast<std::streamsize>(corpus.ids.size() * sizeof(TokenId)));
    if (!out) throw input_error("cannot write " + token_path.string());
  }
  nlohmann::json j = {
      {"format", "wnprobe-corpus/1"},  {"name", corpus.name},
      {"split", corpus.split},         {"vocab_size", corpus.vocab_size},
      {"tokens", token_path.filename().string()}, {"documents", corpus.doc_starts},
      {"checksum", sha256_file(token_path)},
  };
  std::ofstream out(manifest_path);
  out << j.dump(2) << '\n';
}

std::size_t WindowPlan::predicted_tokens() const {
  std::size_t n = 0;
  for (const auto& w : windows) n += w.size() - 1;
  return n;
}

std::string WindowPlan::policy() const {
  return "non_overlapping;context=" + std::to_string(context) + ";document_boundaries=reset;first_token=unscored";
}

TokenSequence WindowPlan::sequence(const Corpus& corpus, std::size_t w) const {
  const Window& win = windows.at(w);
  TokenSequence s;
  s.ids.assign(corpus.ids.begin() + static_cast<std::ptrdiff_t>(win.begin),
               corpus.ids.begin() + static_cast<std::ptrdiff_t>(win.end));
  s.doc_id = win.doc;
  s.offset = win.begin;
  return s;
}

WindowPlan plan_windows(const Corpus& corpus, std::size_t context) {
  if (context < 2) throw input_error("context length must be at least 2 to predict anything");
  WindowPlan plan;
  plan.context = context;
  const std::uint64_t n = corpus.size();
  for (std::size_t d = 0; d < corpus.doc_starts.size(); ++d) {
    const std::uint64_t doc_end = d + 1 < corpus.doc_starts.size() ? corpus.doc_starts[d + 1] : n;
    for (std::uint64_t b = corpus.doc_starts[d]; b < doc_end; b += context) {
      const std::uint64_t e = std::min<std::uint64_t>(b + context, doc_end);
      if (e - b >= 2) plan.windows.push_back({b, e, static_cast<std::uint32_t>(d)});
    }
  }
  return plan;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace wnprobe
