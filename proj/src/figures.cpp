#include "matvl/figures.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "matvl/pdf/page.hpp"

namespace matvl::figures {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n\f\v");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string_view to_string(RejectCode code) {
  switch (code) {
    case RejectCode::in_exclusion_list: return "in_exclusion_list";
    case RejectCode::extreme_aspect_ratio: return "extreme_aspect_ratio";
    case RejectCode::too_small: return "too_small";
    case RejectCode::undecodable: return "undecodable";
    case RejectCode::unsupported_colorspace: return "unsupported_colorspace";
    case RejectCode::no_caption_found: return "no_caption_found";
  }
  return "unknown";
}

std::set<std::string> load_exclusion_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot read exclusion list " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::string h(t);
    std::transform(h.begin(), h.end(), h.begin(), [](unsigned char c) { return std::tolower(c); });
    out.insert(std::move(h));
  }
  return out;
}

bool is_caption_block(std::string_view text, const std::vector<std::string>& prefixes) {
  const std::string_view t = trim(text);
  for (const std::string& prefix : prefixes) {
    if (prefix.empty() || t.size() < prefix.size()) continue;
    bool match = true;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      if (std::tolower(static_cast<unsigned char>(t[i])) !=
          std::tolower(static_cast<unsigned char>(prefix[i]))) {
        match = false;
        break;
      }
    }
    if (match) return true;
  }
  return false;
}

std::optional<double> caption_distance(const Box& image, const Box& caption, double tolerance) {
  const double x_image = image.x0;
  const double y_image = image.y1;  // lower-left corner in y-down coordinates
  const double x_caption = caption.x0;
  const double y_caption = caption.y0;
  if (y_caption < y_image - tolerance) return std::nullopt;
  const double dy = y_caption - y_image;
  const double dx = x_caption - x_image;
  return std::sqrt(dy * dy + dx * dx);
}

MatchResult match_figures(const std::vector<ExtractedImage>& images,
                          const std::vector<TextBlock>& captions, const FilterPolicy& policy,
                          const std::string& doc_id) {
  MatchResult result;
  std::vector<std::size_t> chosen;
  std::map<std::size_t, int> claims;
  for (const ExtractedImage& image : images) {
    std::optional<std::size_t> best;
    double best_distance = 0;
    for (std::size_t j = 0; j < captions.size(); ++j) {
      if (!is_caption_block(captions[j].text, policy.caption_prefixes)) continue;
      auto d = caption_distance(image.bbox, captions[j].bbox, policy.below_tolerance);
      if (d && (!best || *d < best_distance)) {
        best = j;
        best_distance = *d;
      }
    }
    if (!best) {
      result.rejects.push_back({image, {RejectCode::no_caption_found, "no caption block below image"}});
      continue;
    }
    result.pairs.push_back(FigurePair{image, captions[*best], best_distance, doc_id, false});
    chosen.push_back(*best);
    ++claims[*best];
  }
  for (std::size_t i = 0; i < result.pairs.size(); ++i)
    result.pairs[i].shared_caption = claims[chosen[i]] > 1;
  return result;
}

std::variant<ExtractedImage, RejectReason> filter_image(const ExtractedImage& image,
                                                        const FilterPolicy& policy) {
  if (!image.raster) {
    if (image.unsupported_colorspace)
      return RejectReason{RejectCode::unsupported_colorspace, image.decode_error};
    return RejectReason{RejectCode::undecodable,
                        image.decode_error.empty() ? "no pixel data" : image.decode_error};
  }
  if (!image.content_hash.empty() && policy.excluded_hashes.count(image.content_hash))
    return RejectReason{RejectCode::in_exclusion_list, image.content_hash};
  const int w = image.width_px;
  const int h = image.height_px;
  if (w <= 0 || h <= 0) return RejectReason{RejectCode::undecodable, "zero-sized image"};
  const double aspect = static_cast<double>(std::max(w, h)) / std::min(w, h);
  if (aspect > policy.max_aspect)
    return RejectReason{RejectCode::extreme_aspect_ratio,
                        std::to_string(w) + "x" + std::to_string(h)};
  if (std::min(w, h) < policy.min_px)
    return RejectReason{RejectCode::too_small, std::to_string(w) + "x" + std::to_string(h)};
  ExtractedImage accepted = image;
  if (accepted.raster->model != ColorModel::rgb) accepted.raster = to_rgb(*accepted.raster);
  return accepted;
}

namespace {

ExtractedImage extract_image(const pdf::Document& doc, const pdf::ImagePlacement& placement,
                             std::size_t page_index) {
  ExtractedImage img;
  img.bbox = placement.bbox;
  img.page_index = page_index;
  if (const pdf::Dict* d = placement.xobject.dict()) {
    img.width_px = static_cast<int>(doc.get(*d, "Width").integer().value_or(0));
    img.height_px = static_cast<int>(doc.get(*d, "Height").integer().value_or(0));
  }
  try {
    pdf::DecodedImage decoded = pdf::decode_image_xobject(doc, placement.xobject);
    img.bytes = std::move(decoded.encoded);
    img.format = decoded.format;
    img.width_px = decoded.raster.width;
    img.height_px = decoded.raster.height;
    img.content_hash = pixel_hash(decoded.raster);
    img.raster = std::move(decoded.raster);
  } catch (const pdf::UnsupportedColorSpace& e) {
    img.unsupported_colorspace = true;
    img.decode_error = e.what();
  } catch (const Error& e) {
    img.decode_error = e.what();
  }
  return img;
}

}  // namespace

DocumentResult extract_document(std::string pdf_bytes, const std::string& doc_id,
                                const FilterPolicy& policy) {
  DocumentResult result;
  result.doc_id = doc_id;
  std::optional<pdf::Document> doc;
  try {
    doc.emplace(pdf::Document::parse(std::move(pdf_bytes)));
  } catch (const Error& e) {
    throw ExtractionError(doc_id, e.what());
  }

  for (std::size_t p = 0; p < doc->page_count(); ++p) {
    try {
      pdf::PageContent content = pdf::read_page(*doc, p);
      result.pages.push_back({p, content.width, content.height});
      for (const std::string& w : content.warnings) result.issues.push_back({p, w});

      std::vector<TextBlock> captions;
      for (pdf::LayoutBlock& block : pdf::group_blocks(content.spans)) {
        std::string text(trim(block.text));
        if (text.empty() || !is_caption_block(text, policy.caption_prefixes)) continue;
        captions.push_back({std::move(text), block.bbox, p});
      }

      std::vector<ExtractedImage> accepted;
      for (const pdf::ImagePlacement& placement : content.images) {
        ExtractedImage img = extract_image(*doc, placement, p);
        auto outcome = filter_image(img, policy);
        if (auto* reason = std::get_if<RejectReason>(&outcome)) {
          if (!img.decode_error.empty())
            result.issues.push_back({p, "image /" + placement.resource_name + ": " + img.decode_error});
          result.rejects.push_back({std::move(img), std::move(*reason)});
        } else {
          accepted.push_back(std::move(std::get<ExtractedImage>(outcome)));
        }
      }

      MatchResult matched = match_figures(accepted, captions, policy, doc_id);
      for (auto& pair : matched.pairs) result.pairs.push_back(std::move(pair));
      for (auto& rej : matched.rejects) result.rejects.push_back(std::move(rej));
    } catch (const std::exception& e) {
      result.issues.push_back({p, e.what()});
    }
  }

  std::stable_sort(result.pairs.begin(), result.pairs.end(),
                   [](const FigurePair& a, const FigurePair& b) {
                     if (a.image.page_index != b.image.page_index)
                       return a.image.page_index < b.image.page_index;
                     if (a.image.bbox.y0 != b.image.bbox.y0) return a.image.bbox.y0 < b.image.bbox.y0;
                     return a.image.bbox.x0 < b.image.bbox.x0;
                   });
  return result;
}

std::string image_file_name(const std::string& doc_id, std::size_t page, std::size_t n) {
  return doc_id + "_p" + std::to_string(page) + "_" + std::to_string(n) + ".png";
}

std::filesystem::path write_sidecar(const DocumentResult& result,
                                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto sidecar = out_dir / (result.doc_id + ".jsonl");
  std::ofstream out(sidecar, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + sidecar.string());

  auto box_json = [](const Box& b) { return nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); };
  std::map<std::size_t, std::size_t> per_page;
  for (const FigurePair& pair : result.pairs) {
    const std::size_t n = ++per_page[pair.image.page_index];
    const std::string name = image_file_name(result.doc_id, pair.image.page_index, n);
    const std::string png = encode_png(*pair.image.raster);
    std::ofstream img(out_dir / name, std::ios::binary | std::ios::trunc);
    img.write(png.data(), static_cast<std::streamsize>(png.size()));
    if (!img) throw Error("io", "cannot write " + (out_dir / name).string());

    nlohmann::json flags = nlohmann::json::array();
    if (pair.shared_caption) flags.push_back("shared_caption");
    nlohmann::json line = {
        {"doc_id", result.doc_id},
        {"page", pair.image.page_index},
        {"image", name},
        {"caption", pair.caption.text},
        {"distance", pair.distance},
        {"flags", flags},
        {"image_bbox", box_json(pair.image.bbox)},
        {"caption_bbox", box_json(pair.caption.bbox)},
        {"content_hash", pair.image.content_hash},
        {"width_px", pair.image.width_px},
        {"height_px", pair.image.height_px},
    };
    out << line.dump() << '\n';
  }
  return sidecar;
}

}  // namespace matvl::figures
