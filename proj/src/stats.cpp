#include "matvl/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include <json.hpp>

#include "matvl/corpus.hpp"
#include "matvl/fsutil.hpp"
#include "matvl/image.hpp"

namespace matvl::stats {

namespace fs = std::filesystem;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::vector<std::string_view> words(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

std::vector<std::string> utf8_symbols(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 6 ? 2 : (c >> 4) == 14 ? 3 : (c >> 3) == 30 ? 4 : 1;
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::string format_edge(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::to_string(v);
}

}  // namespace

TokenizerAdapter TokenizerAdapter::whitespace() { return TokenizerAdapter{}; }

TokenizerAdapter TokenizerAdapter::from_merges(std::vector<std::pair<std::string, std::string>> merges,
                                               std::string id) {
  TokenizerAdapter t;
  t.id_ = std::move(id);
  t.bpe_ = true;
  for (std::size_t i = 0; i < merges.size(); ++i) t.ranks_.emplace(std::move(merges[i]), i);
  return t;
}

TokenizerAdapter TokenizerAdapter::from_file(const fs::path& path) {
  if (path == "whitespace") return whitespace();
  std::string content;
  try {
    content = read_file(path);
  } catch (const Error& e) {
    throw Error("tokenizer", "cannot load adapter: " + std::string(e.what()));
  }
  std::vector<std::pair<std::string, std::string>> merges;
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(content);
      for (const auto& m : j.at("model").at("merges")) {
        if (m.is_array()) {
          merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
        } else {
          const std::string s = m.get<std::string>();
          const auto sp = s.find(' ');
          if (sp == std::string::npos) throw Error("tokenizer", "bad merge entry '" + s + "'");
          merges.emplace_back(s.substr(0, sp), s.substr(sp + 1));
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("tokenizer", path.string() + ": " + e.what());
    }
  } else {
    std::size_t pos = 0;
    while (pos <= content.size()) {
      auto nl = content.find('\n', pos);
      if (nl == std::string::npos) nl = content.size();
      std::string_view line(content.data() + pos, nl - pos);
      pos = nl + 1;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty() || line.front() == '#') continue;
      auto parts = words(line);
      if (parts.size() != 2) throw Error("tokenizer", "bad merge line '" + std::string(line) + "'");
      merges.emplace_back(std::string(parts[0]), std::string(parts[1]));
    }
  }
  return from_merges(std::move(merges), path.filename().string());
}

std::vector<std::string> TokenizerAdapter::tokenize(std::string_view text) const {
  std::vector<std::string> out;
  for (std::string_view w : words(text)) {
    if (!bpe_) {
      out.emplace_back(w);
      continue;
    }
    std::vector<std::string> sym = utf8_symbols(w);
    while (sym.size() > 1) {
      std::size_t best_rank = SIZE_MAX;
      std::pair<std::string, std::string> best;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        auto it = ranks_.find({sym[i], sym[i + 1]});
        if (it != ranks_.end() && it->second < best_rank) {
          best_rank = it->second;
          best = it->first;
        }
      }
      if (best_rank == SIZE_MAX) break;
      std::vector<std::string> next;
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && sym[i] == best.first && sym[i + 1] == best.second) {
          next.push_back(sym[i] + sym[i + 1]);
          ++i;
        } else {
          next.push_back(std::move(sym[i]));
        }
      }
      sym = std::move(next);
    }
    for (auto& s : sym) out.push_back(std::move(s));
  }
  return out;
}

std::size_t TokenizerAdapter::count_tokens(std::string_view text) const {
  if (!bpe_) return words(text).size();
  return tokenize(text).size();
}

Histogram::Histogram(std::vector<double> edges) : edges_(std::move(edges)) {
  if (edges_.size() < 2) throw Error("histogram", "need at least two edges");
  for (std::size_t i = 1; i < edges_.size(); ++i)
    if (!(edges_[i] > edges_[i - 1])) throw Error("histogram", "edges must be strictly ascending");
  counts_.assign(edges_.size() - 1, 0);
}

Histogram Histogram::uniform(double lo, double hi, std::size_t bins) {
  if (bins < 1) throw Error("histogram", "need at least one bin");
  if (!(hi > lo)) throw Error("histogram", "empty range");
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i)
    edges[i] = lo + (hi - lo) * (static_cast<double>(i) / static_cast<double>(bins));
  edges.back() = hi;
  return Histogram(std::move(edges));
}

Histogram Histogram::from_values(const std::vector<double>& values, std::size_t bins) {
  double lo = 0, hi = 1;
  if (!values.empty()) {
    auto [a, b] = std::minmax_element(values.begin(), values.end());
    lo = *a;
    hi = *b > *a ? *b : *a + 1;
  }
  Histogram h = uniform(lo, hi, bins);
  for (double v : values) h.add(v);
  return h;
}

void Histogram::add(double value) {
  if (!(value >= edges_.front() && value <= edges_.back())) {
    ++outside_;
    return;
  }
  std::size_t bin = static_cast<std::size_t>(std::upper_bound(edges_.begin(), edges_.end(), value) -
                                             edges_.begin()) - 1;
  bin = std::min(bin, counts_.size() - 1);
  ++counts_[bin];
  ++total_;
}

void Histogram::merge(const Histogram& other) {
  if (other.edges_ != edges_) throw Error("histogram", "cannot merge histograms with different edges");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
  outside_ += other.outside_;
}

Histogram Histogram::rebin(std::size_t factor) const {
  if (factor < 1 || counts_.size() % factor != 0)
    throw Error("histogram", "rebin factor must divide the bin count");
  std::vector<double> edges;
  for (std::size_t i = 0; i < edges_.size(); i += factor) edges.push_back(edges_[i]);
  Histogram out(std::move(edges));
  for (std::size_t i = 0; i < counts_.size(); ++i) out.counts_[i / factor] += counts_[i];
  out.total_ = total_;
  out.outside_ = outside_;
  return out;
}

std::string Histogram::to_csv() const {
  std::string out = "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < counts_.size(); ++i)
    out += format_edge(edges_[i]) + "," + format_edge(edges_[i + 1]) + "," + std::to_string(counts_[i]) + "\n";
  return out;
}

std::vector<double> token_counts(const std::vector<TextPair>& records, TextField field,
                                 const TokenizerAdapter& adapter) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const TextPair& r : records) {
    std::size_t n = 0;
    if (field != TextField::answer) n += adapter.count_tokens(r.question);
    if (field != TextField::question) n += adapter.count_tokens(r.answer);
    out.push_back(static_cast<double>(n));
  }
  return out;
}

Histogram token_histogram(const std::vector<TextPair>& records, TextField field,
                          const TokenizerAdapter& adapter, std::size_t bins) {
  return Histogram::from_values(token_counts(records, field, adapter), bins);
}

Histogram token_histogram(const std::vector<TextPair>& records, TextField field,
                          const TokenizerAdapter& adapter, std::vector<double> edges) {
  Histogram h(std::move(edges));
  for (double v : token_counts(records, field, adapter)) h.add(v);
  return h;
}

ResolutionSample image_resolutions(const std::vector<fs::path>& images, Axis axis) {
  ResolutionSample out;
  for (const fs::path& p : images) {
    try {
      const Raster r = decode_image(read_file(p));
      out.values.push_back(axis == Axis::x ? r.width : r.height);
    } catch (const Error&) {
      ++out.skipped;
    }
  }
  return out;
}

ResolutionHistogram resolution_histogram(const std::vector<fs::path>& images, Axis axis,
                                         std::size_t bins) {
  ResolutionSample s = image_resolutions(images, axis);
  return {Histogram::from_values(s.values, bins), s.skipped};
}

ResolutionHistogram resolution_histogram(const std::vector<fs::path>& images, Axis axis,
                                         std::vector<double> edges) {
  ResolutionSample s = image_resolutions(images, axis);
  Histogram h(std::move(edges));
  for (double v : s.values) h.add(v);
  return {h, s.skipped};
}

ReportFiles report(const fs::path& corpus_dir, const TokenizerAdapter& adapter, const fs::path& out,
                   std::size_t bins) {
  const corpus::ImportedCorpus corpus = corpus::import_jsonl(corpus_dir);
  std::vector<TextPair> pairs;
  std::set<std::string> refs;
  for (const auto& r : corpus.records) {
    pairs.push_back({r.query, r.answer});
    if (r.image_ref) refs.insert(*r.image_ref);
  }
  std::vector<fs::path> images;
  for (const auto& ref : refs) images.push_back(corpus_dir / ref);

  ReportFiles files;
  files.records = pairs.size();
  auto emit = [&](const std::string& name, const std::string& body) {
    write_file_atomic(out / name, body);
    files.csvs.push_back(out / name);
  };
  const std::pair<const char*, TextField> fields[] = {
      {"tokens_question.csv", TextField::question},
      {"tokens_answer.csv", TextField::answer},
      {"tokens_combined.csv", TextField::combined}};
  for (const auto& [name, field] : fields) emit(name, token_histogram(pairs, field, adapter, bins).to_csv());

  const ResolutionSample xs = image_resolutions(images, Axis::x);
  const ResolutionSample ys = image_resolutions(images, Axis::y);
  emit("resolution_x.csv", Histogram::from_values(xs.values, bins).to_csv());
  emit("resolution_y.csv", Histogram::from_values(ys.values, bins).to_csv());
  files.images = xs.values.size();
  files.skipped_images = xs.skipped;

  std::string summary = "metric,value\n";
  summary += "records," + std::to_string(files.records) + "\n";
  summary += "images," + std::to_string(files.images) + "\n";
  summary += "skipped_images," + std::to_string(files.skipped_images) + "\n";
  summary += "tokenizer," + adapter.id() + "\n";
  summary += "bins," + std::to_string(bins) + "\n";
  emit("summary.csv", summary);
  return files;
}

}  // namespace matvl::stats
