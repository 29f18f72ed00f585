#pragma once

#include <chrono>
#include <sstream>
#include <string>
#include <vector>

#include "chat_fixture.hpp"
#include "matvl/cli.hpp"
#include "matvl/corpus.hpp"
#include "matvl/fsutil.hpp"
#include "matvl/http.hpp"
#include "pdf_fixtures.hpp"
#include "wiki_fixture.hpp"

namespace matvl::test {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Local encyclopedia, chat endpoint and one PDF, wired through the CLI from
/// extraction to export.
struct SmokePipeline {
  FixtureWiki wiki;
  MockChat chat;
  std::filesystem::path root;
  std::vector<std::pair<std::string, CliResult>> steps;
  double seconds = 0;

  explicit SmokePipeline(std::filesystem::path dir) : root(std::move(dir)) {
    wiki.images["gecko.png"] = encode_png(pattern(300, 200, 11));
    wiki.images["setae.png"] = encode_png(pattern(200, 260, 12));
    wiki.images["nacre.png"] = encode_png(pattern(256, 256, 13));
    wiki.articles["Gecko"] = article(thumb("/images/gecko.png", "Gecko foot on glass") +
                                     thumb("/images/setae.png", "Setae &amp; spatulae"));
    wiki.articles["Nacre"] = article(thumb("/images/nacre.png", "Nacre platelets") +
                                     thumb("/images/gecko.png", "Gecko again"));
    wiki.search["Biomimicry"] = {"Gecko", "Nacre"};
    wiki.search["Mechanics"] = {"Nacre"};
    wiki.start();
    chat.reply = [](const std::string& prompt) -> std::optional<std::string> {
      const auto a = prompt.find("```") + 3;
      return "The image shows " + prompt.substr(a, prompt.find("```", a) - a) + ".";
    };
    chat.start();

    FixtureDoc doc;
    doc.name = "paper1";
    doc.images.push_back(image_at(0, 100, 100, 200, 150, 21));
    doc.texts.push_back(caption_at(0, "Figure 1: Stress field under load", 100, 262));
    doc.images.push_back(image_at(0, 100, 420, 200, 150, 22));
    doc.texts.push_back(caption_at(0, "Figure 2: Crack path along the interface", 100, 582));
    write_file_atomic(root / "pdfs/paper1.pdf", doc.build());
    write_file_atomic(root / "keywords.txt", "Biomimicry\nMechanics\n");
    write_file_atomic(root / "pipeline.toml", "seed = 7\n[harvest]\nspacing_s = 0\nbase_url = \"" + wiki.base() +
                                                  "\"\n[endpoint]\nmax_in_flight = 2\ntimeout_s = 10\n");
  }

  bool step(const std::string& name, std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", (root / "pipeline.toml").string()});
    steps.emplace_back(name, run_cli(args));
    return steps.back().second.code == 0;
  }

  std::string p(const char* rel) const { return (root / rel).string(); }

  /// Returns false at the first failing step.
  bool run() {
    const auto t0 = std::chrono::steady_clock::now();
    const bool ok =
        step("extract-pdf", {"extract-pdf", "--in", p("pdfs"), "--out", p("raw")}) &&
        step("harvest", {"harvest", "--keywords", p("keywords.txt"), "--limit", "10", "--out", p("raw")}) &&
        step("refine", {"refine", "--endpoint", chat.base(), "--model", "mock-vlm", "--template", "wiki", "--in",
                        p("raw"), "--out", p("refined")}) &&
        step("corpus add", {"corpus", "add", "--store", p("store"), "--refined", p("refined")}) &&
        step("corpus split", {"corpus", "split", "--store", p("store"), "--ratio", "0.5"}) &&
        step("corpus export", {"corpus", "export", "--store", p("store"), "--out", p("export"), "--name", "smoke"});
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return ok;
  }

  std::string failure() const {
    for (const auto& [name, r] : steps)
      if (r.code != 0) return name + " exited " + std::to_string(r.code) + ": " + r.err;
    return {};
  }
};

/// Every provenance field a record of its source should carry.
inline std::string provenance_gap(const corpus::CorpusRecord& r, const std::filesystem::path& export_dir) {
  if (auto why = corpus::validate(r); !why.empty()) return why;
  if (!r.original_caption || r.original_caption->empty()) return "no original caption";
  if (!r.image_ref || !std::filesystem::exists(export_dir / *r.image_ref)) return "image missing";
  if (r.split == corpus::Split::unassigned) return "no split";
  if (r.source == corpus::Source::wikipedia) {
    if (!r.image_url || !http::parse_url(*r.image_url)) return "bad image_url";
    if (!r.article_url || !http::parse_url(*r.article_url)) return "bad article_url";
  } else if (r.source != corpus::Source::paper_pdf) {
    return "unexpected source";
  }
  return {};
}

}  // namespace matvl::test
