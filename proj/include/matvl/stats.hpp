#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "matvl/error.hpp"

namespace matvl::stats {

/// Counts tokens either by whitespace runs or with BPE merges applied inside
/// each whitespace-delimited word.
class TokenizerAdapter {
 public:
  static TokenizerAdapter whitespace();
  /// Accepts a merges text file ("left right" per line, '#' comments) or a
  /// tokenizer.json whose model carries a "merges" list.
  static TokenizerAdapter from_file(const std::filesystem::path& path);
  static TokenizerAdapter from_merges(std::vector<std::pair<std::string, std::string>> merges,
                                      std::string id = "merges");

  const std::string& id() const { return id_; }
  std::size_t count_tokens(std::string_view text) const;
  std::vector<std::string> tokenize(std::string_view text) const;

 private:
  std::string id_ = "whitespace";
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
  bool bpe_ = false;
};

/// Fixed-edge histogram. The last bin is closed on the right; values outside
/// [edges.front(), edges.back()] are tallied separately.
class Histogram {
 public:
  explicit Histogram(std::vector<double> edges);
  static Histogram uniform(double lo, double hi, std::size_t bins);
  /// Range taken from the data; a constant sample gets a unit-wide range.
  static Histogram from_values(const std::vector<double>& values, std::size_t bins);

  void add(double value);
  void merge(const Histogram& other);
  /// Merges each run of `factor` adjacent bins; bins must divide evenly.
  Histogram rebin(std::size_t factor) const;

  const std::vector<double>& edges() const { return edges_; }
  const std::vector<std::size_t>& counts() const { return counts_; }
  std::size_t total() const { return total_; }
  std::size_t outside() const { return outside_; }

  /// "bin_lo,bin_hi,count" rows with a header line.
  std::string to_csv() const;

 private:
  std::vector<double> edges_;
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
  std::size_t outside_ = 0;
};

enum class TextField { question, answer, combined };
enum class Axis { x, y };

struct TextPair {
  std::string question;
  std::string answer;
};

std::vector<double> token_counts(const std::vector<TextPair>& records, TextField field,
                                 const TokenizerAdapter& adapter);

Histogram token_histogram(const std::vector<TextPair>& records, TextField field,
                          const TokenizerAdapter& adapter, std::size_t bins = 50);
Histogram token_histogram(const std::vector<TextPair>& records, TextField field,
                          const TokenizerAdapter& adapter, std::vector<double> edges);

struct ResolutionSample {
  std::vector<double> values;
  std::size_t skipped = 0;
};

/// Pixel width (x) or height (y) of each decodable image file.
ResolutionSample image_resolutions(const std::vector<std::filesystem::path>& images, Axis axis);

struct ResolutionHistogram {
  Histogram histogram;
  std::size_t skipped = 0;
};

ResolutionHistogram resolution_histogram(const std::vector<std::filesystem::path>& images,
                                         Axis axis, std::size_t bins = 50);
ResolutionHistogram resolution_histogram(const std::vector<std::filesystem::path>& images,
                                         Axis axis, std::vector<double> edges);

struct ReportFiles {
  std::vector<std::filesystem::path> csvs;
  std::size_t records = 0;
  std::size_t images = 0;
  std::size_t skipped_images = 0;
};

/// Reads an exported corpus directory and writes tokens_{question,answer,
/// combined}.csv, resolution_{x,y}.csv and summary.csv into `out`.
ReportFiles report(const std::filesystem::path& corpus_dir, const TokenizerAdapter& adapter,
                   const std::filesystem::path& out, std::size_t bins = 50);

}  // namespace matvl::stats
