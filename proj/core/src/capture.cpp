// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/capture.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <queue>

#include "wnprobe/error.hpp"

namespace wnprobe {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw input_error(path.string() + ": truncated trace file");
  return v;
}

}  // namespace

std::uint64_t sample_key(std::uint64_t seed, std::uint64_t index) { return splitmix64(seed ^ splitmix64(index)); }

void CaptureSpec::validate(const ModelConfig& config) const {
  if (reservoir_limit == 0) throw input_error("reservoir_limit must be at least 1");
  if (what == CaptureWhat::input_vector_and_scalar && !wildcard_layers.empty()) {
    throw input_error("input-vector capture requires explicit neurons, not a whole-layer wildcard");
  }
  for (const auto& n : neurons) validate_neuron(n, config);
  for (auto l : wildcard_layers) {
    if (l >= config.n_layers) throw input_error("capture layer " + std::to_string(l) + " out of range");
  }
  if (neurons.empty() && wildcard_layers.empty()) throw input_error("capture spec selects no neurons");
}

std::size_t LayerTrace::find_row(std::uint32_t row) const {
  auto it = std::lower_bound(rows.begin(), rows.end(), row);
  return it != rows.end() && *it == row ? static_cast<std::size_t>(it - rows.begin()) : static_cast<std::size_t>(-1);
}

const LayerTrace* TraceSet::find_layer(std::size_t layer) const {
  for (const auto& l : layers) {
    if (l.layer == layer) return &l;
  }
  return nullptr;
}

ActivationTrace TraceSet::trace(const NeuronId& n) const {
  const LayerTrace* l = find_layer(n.layer);
  const std::size_t k = l ? l->find_row(n.row) : static_cast<std::size_t>(-1);
  if (k == static_cast<std::size_t>(-1)) throw input_error("neuron " + to_string(n) + " was not captured");
  return {n, l, l->values_of(k)};
}

// --- TraceCollector -------------------------------------------------------------------

struct TraceCollector::LayerState {
  struct Slot {
    std::uint64_t key;
    std::uint64_t index;
    TokenId token;
    std::uint32_t doc;
  };
  std::uint32_t layer = 0;
  Projection projection = Projection::up;
  std::vector<std::uint32_t> rows;
  bool inputs = false;
  std::size_t input_dim = 0;
  std::vector<Slot> slots;
  std::vector<float> values;       // slot-major: slots x rows
  std::vector<float> input_rows;   // slots x input_dim
  std::priority_queue<std::pair<std::uint64_t, std::size_t>> heap;  // (key, slot), max key on top
  std::mutex mutex;
};

TraceCollector::TraceCollector(const CaptureSpec& spec, const ModelConfig& config)
    : layer_slot_(config.n_layers, -1), spec_(spec) {
  spec.validate(config);
  const Projection proj = preactivation_projection(config);
  std::vector<std::set<std::uint32_t>> rows(config.n_layers);
  std::vector<bool> wildcard(config.n_layers, false);
  for (auto l : spec.wildcard_layers) wildcard[l] = true;
  for (const auto& n : spec.neurons) rows[n.layer].insert(n.row);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    if (!wildcard[l] && rows[l].empty()) continue;
    auto state = std::make_unique<LayerState>();
    state->layer = static_cast<std::uint32_t>(l);
    state->projection = proj;
    if (wildcard[l]) {
      state->rows.resize(config.d_mlp);
      std::iota(state->rows.begin(), state->rows.end(), 0u);
    } else {
      state->rows.assign(rows[l].begin(), rows[l].end());
    }
    state->inputs = spec.what == CaptureWhat::input_vector_and_scalar;
    state->input_dim = state->inputs ? config.d_model : 0;
    layer_slot_[l] = static_cast<std::int32_t>(layers_.size());
    layers_.push_back(std::move(state));
  }
}

TraceCollector::~TraceCollector() = default;

void TraceCollector::observe(const PreactivationSite& site) {
  if (site.layer >= layer_slot_.size() || layer_slot_[site.layer] < 0) return;
  LayerState& st = *layers_[static_cast<std::size_t>(layer_slot_[site.layer])];
  const std::size_t width = st.rows.size();
  std::lock_guard lock(st.mutex);
  for (std::size_t t = 0; t < site.positions; ++t) {
    const std::uint64_t g = site.sequence->offset + t;
    const std::uint64_t key = sample_key(spec_.seed, g);
    std::size_t slot;
    if (st.slots.size() < spec_.reservoir_limit) {
      slot = st.slots.size();
      st.slots.push_back({});
      st.values.resize(st.values.size() + width);
      if (st.inputs) st.input_rows.resize(st.input_rows.size() + st.input_dim);
    } else {
      if (key >= st.heap.top().first) continue;
      slot = st.heap.top().second;
      st.heap.pop();
    }
    st.heap.emplace(key, slot);
    st.slots[slot] = {key, g, site.sequence->ids[t], site.sequence->doc_id};
    auto pre = site.preact_at(t);
    for (std::size_t k = 0; k < width; ++k) st.values[slot * width + k] = pre[st.rows[k]];
    if (st.inputs) {
      auto x = site.input_at(t);
      std::copy(x.begin(), x.end(), st.input_rows.begin() + static_cast<std::ptrdiff_t>(slot * st.input_dim));
    }
  }
}

TraceSet TraceCollector::drain(std::string corpus_checksum) {
  TraceSet out;
  out.corpus_checksum = std::move(corpus_checksum);
  for (auto& stp : layers_) {
    LayerState& st = *stp;
    std::lock_guard lock(st.mutex);
    std::vector<std::size_t> order(st.slots.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return st.slots[a].index < st.slots[b].index; });
    LayerTrace lt;
    lt.layer = st.layer;
    lt.projection = st.projection;
    lt.rows = st.rows;
    lt.input_dim = st.input_dim;
    const std::size_t n = order.size();
    const std::size_t width = st.rows.size();
    lt.values.resize(width * n);
    if (st.inputs) lt.inputs.resize(n * st.input_dim);
    for (std::size_t s = 0; s < n; ++s) {
      const auto& slot = st.slots[order[s]];
      lt.index.push_back(slot.index);
      lt.token.push_back(slot.token);
      lt.doc.push_back(slot.doc);
      for (std::size_t k = 0; k < width; ++k) lt.values[k * n + s] = st.values[order[s] * width + k];
      if (st.inputs) {
        std::copy_n(st.input_rows.begin() + static_cast<std::ptrdiff_t>(order[s] * st.input_dim), st.input_dim,
                    lt.inputs.begin() + static_cast<std::ptrdiff_t>(s * st.input_dim));
      }
    }
    out.layers.push_back(std::move(lt));
  }
  return out;
}

// --- PointCollector -------------------------------------------------------------------

PointCollector::PointCollector(std::vector<std::size_t> layers, std::vector<std::uint64_t> indices,
                               const ModelConfig& config)
    : layers_(std::move(layers)), indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
  for (auto l : layers_) {
    if (l >= config.n_layers) throw input_error("capture layer " + std::to_string(l) + " out of range");
    LayerTrace lt;
    lt.layer = static_cast<std::uint32_t>(l);
    lt.projection = preactivation_projection(config);
    lt.rows.resize(config.d_mlp);
    std::iota(lt.rows.begin(), lt.rows.end(), 0u);
    lt.index = indices_;
    lt.token.assign(indices_.size(), 0);
    lt.doc.assign(indices_.size(), 0);
    lt.values.assign(config.d_mlp * indices_.size(), 0.0f);
    lt.input_dim = config.d_model;
    lt.inputs.assign(config.d_model * indices_.size(), 0.0f);
    traces_.push_back(std::move(lt));
    seen_.emplace_back(indices_.size(), false);
  }
}

void PointCollector::observe(const PreactivationSite& site) {
  auto it = std::find(layers_.begin(), layers_.end(), site.layer);
  if (it == layers_.end()) return;
  const auto li = static_cast<std::size_t>(it - layers_.begin());
  LayerTrace& lt = traces_[li];
  const std::uint64_t begin = site.sequence->offset;
  const std::uint64_t end = begin + site.positions;
  auto lo = std::lower_bound(indices_.begin(), indices_.end(), begin);
  std::lock_guard lock(mutex_);
  const std::size_t n = indices_.size();
  for (; lo != indices_.end() && *lo < end; ++lo) {
    const auto s = static_cast<std::size_t>(lo - indices_.begin());
    const std::size_t t = *lo - begin;
    lt.token[s] = site.sequence->ids[t];
    lt.doc[s] = site.sequence->doc_id;
    auto pre = site.preact_at(t);
    for (std::size_t k = 0; k < site.width; ++k) lt.values[k * n + s] = pre[k];
    auto x = site.input_at(t);
    std::copy(x.begin(), x.end(), lt.inputs.begin() + static_cast<std::ptrdiff_t>(s * lt.input_dim));
    seen_[li][s] = true;
  }
}

TraceSet PointCollector::drain(std::string corpus_checksum) {
  std::lock_guard lock(mutex_);
  for (const auto& seen : seen_) {
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw input_error("point capture: some requested token indices were never visited");
    }
  }
  TraceSet out;
  out.corpus_checksum = std::move(corpus_checksum);
  out.layers = std::move(traces_);
  traces_.clear();
  return out;
}

// --- runs -----------------------------------------------------------------------------

void run_windows(const Model& model, const Corpus& corpus, const WindowPlan& plan, const HookSet& hooks,
                 std::size_t threads) {
  parallel_for(plan.windows.size(), threads, [&](std::size_t w) { model.forward(plan.sequence(corpus, w), hooks); });
}

WindowPlan coverage_plan(const Corpus& corpus, std::size_t context) {
  WindowPlan plan;
  plan.context = context;
  const std::uint64_t n = corpus.size();
  for (std::size_t d = 0; d < corpus.doc_starts.size(); ++d) {
    const std::uint64_t doc_end = d + 1 < corpus.doc_starts.size() ? corpus.doc_starts[d + 1] : n;
    for (std::uint64_t b = corpus.doc_starts[d]; b < doc_end; b += context) {
      plan.windows.push_back({b, std::min<std::uint64_t>(b + context, doc_end), static_cast<std::uint32_t>(d)});
    }
  }
  return plan;
}

TraceSet capture(const Model& model, const Corpus& corpus, const CaptureSpec& spec, std::size_t threads) {
  if (corpus.vocab_size > model.config().vocab_size) {
    throw input_error("corpus vocabulary is larger than the model vocabulary");
  }
  TraceCollector collector(spec, model.config());
  HookSet hooks;
  hooks.observers.push_back(&collector);
  const WindowPlan plan = coverage_plan(corpus, model.config().context_length);
  run_windows(model, corpus, plan, hooks, threads);
  return collector.drain(corpus.checksum);
}

// --- files ----------------------------------------------------------------------------

void write_trace_file(const std::filesystem::path& path, const TraceSet& traces) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write " + path.string());
  out.write("WNTRACE1", 8);
  std::uint32_t records = 0;
  for (const auto& l : traces.layers) records += static_cast<std::uint32_t>(l.rows.size());
  put(out, records);
  for (const auto& l : traces.layers) {
    for (std::size_t k = 0; k < l.rows.size(); ++k) {
      put(out, l.layer);
      put(out, static_cast<std::uint8_t>(l.projection));
      put(out, l.rows[k]);
      put(out, static_cast<std::uint16_t>(traces.corpus_checksum.size()));
      out.write(traces.corpus_checksum.data(), static_cast<std::streamsize>(traces.corpus_checksum.size()));
      put(out, static_cast<std::uint64_t>(l.samples()));
      auto vals = l.values_of(k);
      for (std::size_t s = 0; s < l.samples(); ++s) {
        put(out, l.index[s]);
        put(out, vals[s]);
      }
    }
  }
  if (!out) throw input_error("failed writing " + path.string());
}

std::vector<TraceRecord> read_trace_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open trace file " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "WNTRACE1", 8) != 0) {
    throw input_error(path.string() + ": not a trace file");
  }
  const auto records = get<std::uint32_t>(in, path);
  std::vector<TraceRecord> out;
  for (std::uint32_t r = 0; r < records; ++r) {
    TraceRecord rec;
    rec.neuron.layer = get<std::uint32_t>(in, path);
    rec.neuron.projection = static_cast<Projection>(get<std::uint8_t>(in, path));
    rec.neuron.row = get<std::uint32_t>(in, path);
    rec.corpus_checksum.resize(get<std::uint16_t>(in, path));
    in.read(rec.corpus_checksum.data(), static_cast<std::streamsize>(rec.corpus_checksum.size()));
    const auto count = get<std::uint64_t>(in, path);
    rec.index.reserve(count);
    rec.values.reserve(count);
    for (std::uint64_t s = 0; s < count; ++s) {
      rec.index.push_back(get<std::uint64_t>(in, path));
      rec.values.push_back(get<float>(in, path));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_input_side_file(const std::filesystem::path& path, const LayerTrace& layer) {
  if (!layer.has_inputs()) throw input_error("layer trace holds no input vectors");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write " + path.string());
  out.write("WNINPUT1", 8);
  put(out, static_cast<std::uint64_t>(layer.samples()));
  put(out, static_cast<std::uint32_t>(layer.input_dim));
  for (std::size_t s = 0; s < layer.samples(); ++s) {
    put(out, layer.index[s]);
    out.write(reinterpret_cast<const char*>(layer.input_at(s).data()),
              static_cast<std::streamsize>(layer.input_dim * sizeof(float)));
  }
}

LayerTrace read_input_side_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open input side file " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "WNINPUT1", 8) != 0) {
    throw input_error(path.string() + ": not an input side file");
  }
  LayerTrace lt;
  const auto count = get<std::uint64_t>(in, path);
  lt.input_dim = get<std::uint32_t>(in, path);
  lt.inputs.resize(count * lt.input_dim);
  for (std::uint64_t s = 0; s < count; ++s) {
    lt.index.push_back(get<std::uint64_t>(in, path));
    if (!in.read(reinterpret_cast<char*>(lt.inputs.data() + s * lt.input_dim),
                 static_cast<std::streamsize>(lt.input_dim * sizeof(float)))) {
      throw input_error(path.string() + ": truncated input side file");
    }
  }
  return lt;
}

}  // namespace wnprobe
