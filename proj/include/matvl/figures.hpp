#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "matvl/error.hpp"
#include "matvl/geometry.hpp"
#include "matvl/image.hpp"

namespace matvl::figures {

struct PageGeometry {
  std::size_t page_index = 0;
  double width = 0;
  double height = 0;
};

struct TextBlock {
  std::string text;
  Box bbox;
  std::size_t page_index = 0;
};

struct ExtractedImage {
  std::string bytes;  // encoded, see `format`
  ImageFormat format = ImageFormat::png;
  Box bbox;
  std::size_t page_index = 0;
  int width_px = 0;
  int height_px = 0;
  std::string content_hash;  // empty when undecodable
  std::optional<Raster> raster;
  std::string decode_error;  // set when raster is absent
  bool unsupported_colorspace = false;
};

enum class RejectCode {
  in_exclusion_list,
  extreme_aspect_ratio,
  too_small,
  undecodable,
  unsupported_colorspace,
  no_caption_found,
};

std::string_view to_string(RejectCode code);

struct RejectReason {
  RejectCode code;
  std::string detail;
};

struct Rejection {
  ExtractedImage image;
  RejectReason reason;
};

struct FigurePair {
  ExtractedImage image;
  TextBlock caption;
  double distance = 0;
  std::string doc_id;
  bool shared_caption = false;  // another image on the page claimed the same caption
};

struct FilterPolicy {
  double max_aspect = 8.0;
  int min_px = 64;
  double below_tolerance = 2.0;
  std::vector<std::string> caption_prefixes{"fig", "figure"};
  std::set<std::string> excluded_hashes;
};

/// Reads one hex digest per line; blank lines and '#' comments are ignored.
std::set<std::string> load_exclusion_list(const std::filesystem::path& path);

bool is_caption_block(std::string_view text,
                      const std::vector<std::string>& prefixes = FilterPolicy{}.caption_prefixes);

/// Distance from the image's lower-left corner to the caption's top-left
/// corner, or nullopt when the caption does not start below the image.
std::optional<double> caption_distance(const Box& image, const Box& caption,
                                       double tolerance = 2.0);

struct MatchResult {
  std::vector<FigurePair> pairs;
  std::vector<Rejection> rejects;
};

/// Pairs every image with its nearest caption below it on the same page.
/// Ties go to the earlier caption. Non-caption blocks are ignored.
MatchResult match_figures(const std::vector<ExtractedImage>& images,
                          const std::vector<TextBlock>& captions, const FilterPolicy& policy = {},
                          const std::string& doc_id = {});

/// Accepted images come back with their raster converted to RGB.
std::variant<ExtractedImage, RejectReason> filter_image(const ExtractedImage& image,
                                                        const FilterPolicy& policy);

struct PageIssue {
  std::size_t page_index = 0;
  std::string message;
};

struct DocumentResult {
  std::string doc_id;
  std::vector<PageGeometry> pages;
  std::vector<FigurePair> pairs;
  std::vector<Rejection> rejects;
  std::vector<PageIssue> issues;
};

class ExtractionError : public Error {
 public:
  ExtractionError(const std::string& doc_id, const std::string& message)
      : Error("extract", doc_id + ": " + message), doc_id_(doc_id) {}
  const std::string& doc_id() const { return doc_id_; }

 private:
  std::string doc_id_;
};

/// Runs caption detection, image extraction, filtering and matching over
/// every page. Throws ExtractionError when the bytes are not a readable PDF.
DocumentResult extract_document(std::string pdf_bytes, const std::string& doc_id,
                                const FilterPolicy& policy = {});

/// Writes `<doc_id>_p<page>_<n>.png` per pair (n counts from 1 within a page)
/// and `<doc_id>.jsonl` with one line per pair. Returns the sidecar path.
std::filesystem::path write_sidecar(const DocumentResult& result,
                                    const std::filesystem::path& out_dir);

std::string image_file_name(const std::string& doc_id, std::size_t page, std::size_t n);

}  // namespace matvl::figures
