#include "matvl/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "matvl/config.hpp"
#include "matvl/corpus.hpp"
#include "matvl/digest.hpp"
#include "matvl/figures.hpp"
#include "matvl/fsutil.hpp"
#include "matvl/http.hpp"
#include "matvl/image.hpp"
#include "matvl/instruct_eval.hpp"
#include "matvl/model_arith.hpp"
#include "matvl/refine.hpp"
#include "matvl/stats.hpp"
#include "matvl/version.hpp"
#include "matvl/wiki.hpp"

namespace matvl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool is_run_manifest(const fs::path& p) { return p.filename().string().rfind("run_manifest.", 0) == 0; }

std::string digest_path(const fs::path& p) {
  if (fs::is_regular_file(p)) return sha256_hex(read_file(p));
  if (!fs::is_directory(p)) return "missing";
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file() && !is_run_manifest(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files)
    listing += fs::relative(f, p).generic_string() + '\0' + sha256_hex(read_file(f)) + '\n';
  return sha256_hex(listing);
}

std::string extension_for(std::string_view bytes) {
  const auto format = sniff_format(bytes);
  if (!format) throw Error("cli.image", "image is neither PNG nor JPEG");
  return *format == ImageFormat::png ? "png" : "jpg";
}

// Shared state for one invocation: resolved config, inputs and the summary
// that ends up in the run manifest.
struct Run {
  std::string name;
  std::vector<std::string> argv;
  config::PipelineConfig cfg;
  json inputs = json::object();
  json summary = json::object();
  std::string started_at = now_utc();
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  void input(const fs::path& p) { inputs[p.string()] = digest_path(p); }
  void log(const std::string& msg) const { *err << "matvl: " << msg << '\n'; }

  void finish(const fs::path& dir) {
    fs::create_directories(dir);
    json m = {{"tool_version", kToolVersion},
              {"subcommand", name},
              {"argv", argv},
              {"config_digest", config::digest(cfg)},
              {"config", config::to_json(cfg)},
              {"seed", cfg.seed},
              {"inputs", inputs},
              {"summary", summary},
              {"started_at", started_at},
              {"finished_at", now_utc()}};
    write_file_atomic(dir / ("run_manifest." + name + ".json"), m.dump(2) + "\n");
    *out << summary.dump() << '\n';
  }
};

void check_ratio(double r) {
  if (!(r > 0 && r < 1)) throw Error("config", "split ratio must lie strictly between 0 and 1");
}

int extract_pdf(Run& run, const fs::path& in, const fs::path& out) {
  figures::FilterPolicy policy = run.cfg.filter;
  if (!run.cfg.exclusion_list.empty()) {
    config::require_file(run.cfg.exclusion_list, "exclusion list");
    policy.excluded_hashes = figures::load_exclusion_list(run.cfg.exclusion_list);
    run.input(run.cfg.exclusion_list);
  }
  std::vector<fs::path> pdfs;
  if (fs::is_regular_file(in)) {
    pdfs.push_back(in);
  } else if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (e.is_regular_file() && ext == ".pdf") pdfs.push_back(e.path());
    }
    std::sort(pdfs.begin(), pdfs.end());
  }
  if (pdfs.empty()) throw Error("cli.input", "no PDF files found at " + in.string());

  json docs = json::array();
  std::size_t ok = 0, pairs = 0;
  for (const auto& pdf : pdfs) {
    run.input(pdf);
    const std::string doc_id = pdf.stem().string();
    try {
      const auto result = figures::extract_document(read_file(pdf), doc_id, policy);
      figures::write_sidecar(result, out);
      json rejects = json::object();
      for (const auto& r : result.rejects) {
        const std::string code(figures::to_string(r.reason.code));
        rejects[code] = rejects.value(code, 0) + 1;
      }
      json issues = json::array();
      for (const auto& i : result.issues) issues.push_back({{"page", i.page_index}, {"message", i.message}});
      docs.push_back({{"doc_id", doc_id}, {"pairs", result.pairs.size()}, {"rejects", rejects}, {"issues", issues}});
      pairs += result.pairs.size();
      ++ok;
      run.log(doc_id + ": " + std::to_string(result.pairs.size()) + " figure pairs");
    } catch (const Error& e) {
      docs.push_back({{"doc_id", doc_id}, {"error", e.what()}});
      run.log(doc_id + ": " + e.what());
    }
  }
  run.summary = {{"documents", pdfs.size()}, {"failed", pdfs.size() - ok}, {"pairs", pairs}, {"per_document", docs}};
  run.finish(out);
  return ok > 0 ? 0 : 1;
}

int harvest(Run& run, const fs::path& out) {
  config::require_file(run.cfg.harvest.keywords, "keyword file");
  run.input(run.cfg.harvest.keywords);
  const auto keywords = wiki::load_keywords(run.cfg.harvest.keywords);
  http::ClientOptions opts;
  opts.per_host_spacing_s = run.cfg.harvest.per_host_spacing_s;
  opts.per_host_in_flight = run.cfg.harvest.per_host_in_flight;
  http::Client client(opts);
  const auto s = wiki::harvest(client, run.cfg.harvest.wiki, keywords, out, [&](const std::string& m) { run.log(m); });
  json issues = json::array();
  for (const auto& i : s.issues) issues.push_back({{"scope", i.scope}, {"subject", i.subject}, {"message", i.message}});
  run.summary = {{"keywords", keywords.size()},
                 {"new_records", s.new_records},
                 {"total_records", s.total_records},
                 {"articles_fetched", s.articles_fetched},
                 {"articles_skipped", s.articles_skipped},
                 {"images_too_small", s.images_too_small},
                 {"duplicate_urls", s.duplicate_urls},
                 {"dedupe", "image_url"},
                 {"issues", issues}};
  run.finish(out);
  return 0;
}

int refine(Run& run, const fs::path& in, const fs::path& out) {
  auto& ep = run.cfg.refine.endpoint;
  if (ep.base_url.empty()) throw Error("config", "refine needs an endpoint URL");
  if (ep.model.empty()) throw Error("config", "refine needs a model name");
  if (const char* key = std::getenv("MATVL_API_KEY")) ep.api_key = key;
  config::require_file(run.cfg.refine.templates, "template file");
  run.input(run.cfg.refine.templates);
  run.input(in);
  const auto templates = refine::load_templates(run.cfg.refine.templates);
  const auto& tmpl = refine::find_template(templates, run.cfg.refine.template_id);
  const auto inputs = refine::load_inputs(in);
  http::Client client(refine::client_options(ep));
  const auto outcome = refine::refine_batch(client, ep, inputs, tmpl, out, [&](const std::string& m) { run.log(m); });
  std::size_t warned = 0;
  for (const auto& e : outcome.entries)
    if (e.result && e.result->validation == refine::Validation::warn) ++warned;
  run.summary = {{"inputs", inputs.size()}, {"calls", outcome.calls},      {"reused", outcome.reused},
                 {"failed", outcome.failed}, {"warned", warned},           {"template", tmpl.id},
                 {"model", ep.model}};
  run.finish(out);
  return 0;
}

int corpus_add(Run& run, const fs::path& store_dir, const std::optional<fs::path>& refined,
               const std::optional<fs::path>& records_file) {
  auto store = corpus::CorpusStore::open(store_dir);
  std::vector<corpus::CorpusRecord> records;
  if (refined) {
    run.input(*refined / "manifest.jsonl");
    for (const auto& r : refine::load_refined(*refined)) {
      const std::string bytes = read_file(r.input.image_path);
      corpus::CorpusRecord rec;
      rec.source = r.input.source;
      rec.image_ref = store.put_image(bytes, extension_for(bytes));
      rec.image_url = r.input.image_url;
      rec.article_url = r.input.article_url;
      rec.original_caption = r.input.caption;
      rec.query = run.cfg.query;
      rec.answer = r.result.refined_text;
      rec.id = corpus::record_id(rec.source, sha256_hex(bytes), rec.query);
      records.push_back(std::move(rec));
    }
  } else {
    run.input(*records_file);
    const fs::path base = records_file->parent_path();
    for (const auto& line : read_lines(*records_file)) {
      corpus::CorpusRecord rec = corpus::record_from_json(json::parse(line));
      rec.split = corpus::Split::unassigned;
      if (rec.image_ref) {
        const std::string bytes = read_file(base / *rec.image_ref);
        rec.image_ref = store.put_image(bytes, extension_for(bytes));
      }
      records.push_back(std::move(rec));
    }
  }
  const auto result = store.add_records(records);
  json rejected = json::array();
  for (const auto& [id, reason] : result.rejected) rejected.push_back({{"id", id}, {"reason", reason}});
  run.summary = {{"offered", records.size()},
                 {"added", result.added},
                 {"duplicate", result.duplicate},
                 {"rejected", rejected},
                 {"store_records", store.records().size()}};
  run.finish(store_dir);
  return 0;
}

int corpus_split(Run& run, const fs::path& store_dir) {
  check_ratio(run.cfg.split_ratio);
  auto store = corpus::CorpusStore::open(store_dir);
  run.input(store_dir / "records.jsonl");
  const auto counts = store.assign_splits(run.cfg.split_ratio, run.cfg.seed);
  run.summary = {{"train", counts.train}, {"test", counts.test}, {"ratio", run.cfg.split_ratio}, {"seed", run.cfg.seed}};
  run.finish(store_dir);
  return 0;
}

int corpus_export(Run& run, const fs::path& store_dir, const fs::path& out, const std::string& name) {
  const auto store = corpus::CorpusStore::open(store_dir);
  run.input(store_dir / "records.jsonl");
  run.input(store_dir / "splits.json");
  const auto result = store.export_jsonl(out, name, run.started_at);
  json errors = json::array();
  for (const auto& [id, reason] : result.errors) errors.push_back({{"id", id}, {"reason", reason}});
  json files = json::object();
  for (const auto& [split, path] : result.split_files) files[split] = path.filename().string();
  run.summary = {{"records", store.records().size()}, {"files", files}, {"errors", errors}};
  run.finish(out);
  return 0;
}

stats::TokenizerAdapter adapter_for(Run& run) {
  if (run.cfg.tokenizer == "whitespace") return stats::TokenizerAdapter::whitespace();
  config::require_file(run.cfg.tokenizer, "tokenizer");
  run.input(run.cfg.tokenizer);
  return stats::TokenizerAdapter::from_file(run.cfg.tokenizer);
}

int stats_tokens(Run& run, const fs::path& corpus_dir, const fs::path& out) {
  run.input(corpus_dir);
  const auto adapter = adapter_for(run);
  const auto imported = corpus::import_jsonl(corpus_dir);
  std::vector<stats::TextPair> pairs;
  for (const auto& r : imported.records) pairs.push_back({r.query, r.answer});
  const std::pair<const char*, stats::TextField> fields[] = {{"tokens_question.csv", stats::TextField::question},
                                                             {"tokens_answer.csv", stats::TextField::answer},
                                                             {"tokens_combined.csv", stats::TextField::combined}};
  json files = json::array();
  for (const auto& [file, field] : fields) {
    write_file_atomic(out / file, stats::token_histogram(pairs, field, adapter, run.cfg.bins).to_csv());
    files.push_back(file);
  }
  run.summary = {{"records", pairs.size()}, {"tokenizer", adapter.id()}, {"bins", run.cfg.bins}, {"files", files}};
  run.finish(out);
  return 0;
}

int stats_resolutions(Run& run, const fs::path& corpus_dir, const fs::path& out) {
  run.input(corpus_dir);
  const auto imported = corpus::import_jsonl(corpus_dir);
  std::vector<std::string> refs;
  for (const auto& r : imported.records)
    if (r.image_ref) refs.push_back(*r.image_ref);
  std::sort(refs.begin(), refs.end());
  refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
  std::vector<fs::path> images;
  for (const auto& ref : refs) images.push_back(corpus_dir / ref);
  const auto xs = stats::resolution_histogram(images, stats::Axis::x, run.cfg.bins);
  const auto ys = stats::resolution_histogram(images, stats::Axis::y, run.cfg.bins);
  write_file_atomic(out / "resolution_x.csv", xs.histogram.to_csv());
  write_file_atomic(out / "resolution_y.csv", ys.histogram.to_csv());
  run.summary = {{"images", xs.histogram.total()}, {"skipped", xs.skipped}, {"bins", run.cfg.bins},
                 {"files", {"resolution_x.csv", "resolution_y.csv"}}};
  run.finish(out);
  return 0;
}

int instruct_build(Run& run, const std::string& task_name, const fs::path& in, const fs::path& out,
                   const std::string& std_convention) {
  const auto task = instruct::parse_task(task_name);
  if (!task) throw Error("cli.usage", "unknown task '" + task_name + "'");
  const auto convention = std_convention == "sample" ? instruct::StdConvention::sample : instruct::StdConvention::population;
  run.input(in);
  const fs::path base = in.parent_path();

  struct Sample {
    std::string image_bytes;
    std::vector<instruct::AnswerValue> payload;
  };
  std::vector<Sample> samples;
  std::vector<double> diffs;
  std::vector<bool> initiated;
  for (const auto& line : read_lines(in)) {
    const json j = json::parse(line);
    Sample s;
    s.image_bytes = read_file(base / j.at("image").get<std::string>());
    if (*task == instruct::Task::crack) {
      const Raster a = decode_image(read_file(base / j.at("reference").get<std::string>()));
      const Raster b = decode_image(s.image_bytes);
      diffs.push_back(instruct::diff_proportion(a, b, run.cfg.damage));
      initiated.push_back(j.at("initiated").get<bool>());
    } else {
      const auto fs_ = instruct::field_statistics(j.at("values").get<std::vector<double>>(), convention);
      s.payload = {fs_.std_dev, fs_.mean, fs_.median};
    }
    samples.push_back(std::move(s));
  }
  if (*task == instruct::Task::crack) {
    const auto damage = diffs.empty() ? std::vector<double>{} : instruct::normalize_damage(diffs);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].payload = {damage[i], static_cast<bool>(initiated[i])};
  }

  std::string lines;
  for (const auto& s : samples) {
    const std::string ext = extension_for(s.image_bytes);
    const std::string ref = "images/" + sha256_hex(s.image_bytes) + "." + ext;
    if (!fs::exists(out / ref)) write_file_atomic(out / ref, s.image_bytes);
    const auto rec = instruct::build_instruction(*task, s.payload, ref);
    corpus::CorpusRecord c;
    c.source = corpus::Source::simulation;
    c.image_ref = ref;
    c.query = rec.instruction;
    c.answer = instruct::render_answer(rec.answer);
    c.task = std::string(instruct::to_string(*task));
    c.id = corpus::record_id(c.source, sha256_hex(s.image_bytes), c.query);
    lines += corpus::to_json(c).dump() + "\n";
  }
  write_file_atomic(out / "instructions.jsonl", lines);
  run.summary = {{"task", task_name}, {"records", samples.size()}, {"std", std_convention}};
  run.finish(out);
  return 0;
}

int instruct_eval(Run& run, const fs::path& records_file, const fs::path& responses_file, const fs::path& out) {
  run.input(records_file);
  run.input(responses_file);
  std::vector<instruct::InstructionRecord> records;
  for (const auto& line : read_lines(records_file)) {
    const auto c = corpus::record_from_json(json::parse(line));
    if (!c.task) throw Error("cli.input", "record " + c.id + " has no task");
    const auto task = instruct::parse_task(*c.task);
    if (!task) throw Error("cli.input", "record " + c.id + " has unknown task " + *c.task);
    instruct::InstructionRecord r;
    r.id = c.id;
    r.image_ref = c.image_ref.value_or("");
    r.instruction = c.query;
    r.answer = instruct::parse_answer_vector(c.answer, *task);
    r.task = *task;
    records.push_back(std::move(r));
  }
  std::map<std::string, std::string> responses;
  for (const auto& line : read_lines(responses_file)) {
    const json j = json::parse(line);
    responses[j.at("id").get<std::string>()] = j.at("response").get<std::string>();
  }
  const auto report = instruct::evaluate_run(records, responses);
  json tasks = json::object();
  for (const auto& [task, scores] : report.per_task) {
    json r2 = json::object();
    for (std::size_t i = 0; i < scores.components.size(); ++i)
      r2[scores.components[i]] = scores.r2[i] ? json(*scores.r2[i]) : json(nullptr);
    tasks[std::string(instruct::to_string(task))] = {{"scored", scores.scored}, {"r2", r2}};
  }
  json j = {{"total", report.total}, {"unparsed", report.unparsed}, {"missing", report.missing},
            {"unparsed_ids", report.unparsed_ids}, {"tasks", tasks}};
  if (report.crack_initiation) {
    const auto& c = *report.crack_initiation;
    j["crack_initiation"] = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn},
                             {"accuracy", c.accuracy}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1},
                             {"precision_undefined", c.precision_undefined}, {"recall_undefined", c.recall_undefined},
                             {"f1_undefined", c.f1_undefined}};
  }
  write_file_atomic(out, j.dump(2) + "\n");
  run.summary = j;
  run.finish(out.parent_path().empty() ? fs::path(".") : out.parent_path());
  return 0;
}

struct MoeArgs {
  int experts = 3;
  int k = 1;
  int dim = 64;
  int per_expert = 50;
  double sigma = 1.0;
  double separation = 5.0;
  model::TrainOptions train;
};

int moe_demo(Run& run, const MoeArgs& a, const fs::path& out) {
  if (a.k < 1 || a.k > a.experts) throw Error("cli.usage", "k must lie in [1, experts]");
  if (a.dim < a.experts) throw Error("cli.usage", "dim must be at least the number of experts");
  const auto train = model::gaussian_clusters(a.experts, a.dim, a.per_expert, a.sigma, a.separation, run.cfg.seed);
  const auto held_out = model::gaussian_clusters(a.experts, a.dim, a.per_expert, a.sigma, a.separation, run.cfg.seed + 1);
  json losses = json::array();
  const auto result = model::train_gate(train, {a.experts, a.k, a.dim}, a.train, [&](const model::LossPoint& p) {
    *run.out << "epoch " << p.epoch << " loss " << p.loss << '\n';
    losses.push_back({{"epoch", p.epoch}, {"loss", p.loss}});
  });
  const double train_acc = model::routing_accuracy(result.params, train);
  const double acc = model::routing_accuracy(result.params, held_out);

  // route the first held-out sample of each cluster through top-k
  std::vector<model::Expert> experts;
  for (int e = 0; e < a.experts; ++e)
    experts.push_back([e](const model::Vector& x) { return model::Vector(x.size(), static_cast<double>(e)); });
  json routes = json::array();
  for (int e = 0; e < a.experts; ++e) {
    const auto& x = held_out[static_cast<std::size_t>(e)].front();
    const auto top = model::gate_topk(x, result.params, a.k);
    routes.push_back({{"label", e}, {"experts", top.indices}, {"weights", top.weights},
                      {"output", model::moe_combine(x, result.params, a.k, experts).front()}});
  }
  *run.out << "routing accuracy: " << acc << '\n';
  run.summary = {{"experts", a.experts},     {"k", a.k},
                 {"dim", a.dim},             {"per_expert", a.per_expert},
                 {"sigma", a.sigma},         {"separation", a.separation},
                 {"epochs", a.train.epochs}, {"learning_rate", a.train.learning_rate},
                 {"initial_loss", result.initial_loss},
                 {"final_loss", result.final_loss},
                 {"train_accuracy", train_acc},
                 {"routing_accuracy", acc},
                 {"losses", losses},
                 {"routes", routes}};
  run.finish(out);
  return 0;
}

int merge_plan(Run& run, int base, int take, const fs::path& out) {
  const auto plan = model::merge_plan(base, take);
  *run.out << model::format_merge_table(plan);
  std::vector<int> trainable;
  for (std::size_t i = 0; i < plan.trainable_mask.size(); ++i)
    if (plan.trainable_mask[i]) trainable.push_back(static_cast<int>(i));
  run.summary = {{"base_layers", plan.base_layers}, {"donor_take", plan.donor_take},
                 {"donor_indices", plan.donor_indices}, {"total_layers", plan.total_layers},
                 {"trainable_layers", trainable}};
  run.finish(out);
  return 0;
}

void print_error(std::ostream& err, const std::string& code, const std::string& message) {
  err << json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Materials vision-language dataset toolkit", "matvl"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<fs::path> config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "TOML pipeline config");
  app.add_option("--seed", seed, "Seed for every random choice");

  // flag overrides; applied over the config file after parsing
  std::optional<fs::path> in, out_dir, keywords, store, refined, records_file, responses, templates, exclude, corpus_dir;
  std::optional<int> limit, concurrency, min_px, max_in_flight, bins;
  std::optional<double> ratio, max_aspect;
  std::optional<std::string> base_url, endpoint, model_name, template_id, tokenizer, query;
  std::string name = "dataset", task, std_convention = "population";
  MoeArgs moe;
  int base_layers = 32, donor_take = 8;

  auto* extract = app.add_subcommand("extract-pdf", "Pair figures with captions in PDF files");
  extract->add_option("--in", in, "PDF file or directory")->required();
  extract->add_option("--out", out_dir, "Output directory")->required();
  extract->add_option("--max-aspect", max_aspect);
  extract->add_option("--min-px", min_px);
  extract->add_option("--exclude", exclude, "File of image digests to drop");

  auto* harvest_cmd = app.add_subcommand("harvest", "Collect image-caption pairs from encyclopedia articles");
  harvest_cmd->add_option("--keywords", keywords, "Keyword file");
  harvest_cmd->add_option("--limit", limit, "Articles per keyword");
  harvest_cmd->add_option("--out", out_dir)->required();
  harvest_cmd->add_option("--base-url", base_url, "Site root");
  harvest_cmd->add_option("--concurrency", concurrency);
  harvest_cmd->add_option("--min-px", min_px, "Smallest accepted shorter side");

  auto* refine_cmd = app.add_subcommand("refine", "Rewrite captions through a chat endpoint");
  refine_cmd->add_option("--endpoint", endpoint, "Base URL of the chat-completions server");
  refine_cmd->add_option("--model", model_name);
  refine_cmd->add_option("--template", template_id)->check(CLI::IsMember({"wiki", "paper_concise", "paper_reasoned"}));
  refine_cmd->add_option("--templates", templates, "Template file");
  refine_cmd->add_option("--in", in)->required();
  refine_cmd->add_option("--out", out_dir)->required();
  refine_cmd->add_option("--max-in-flight", max_in_flight);

  auto* corpus_cmd = app.add_subcommand("corpus", "Corpus store operations");
  corpus_cmd->require_subcommand(1);
  auto* add = corpus_cmd->add_subcommand("add", "Add refined pairs or records to a store");
  add->add_option("--store", store)->required();
  auto* add_refined = add->add_option("--refined", refined, "Refine output directory");
  auto* add_records = add->add_option("--records", records_file, "CorpusRecord JSONL");
  add_refined->excludes(add_records);
  add->add_option("--query", query);
  auto* split = corpus_cmd->add_subcommand("split", "Assign train/test splits");
  split->add_option("--store", store)->required();
  split->add_option("--ratio", ratio);
  split->add_option("--seed", seed);
  auto* export_cmd = corpus_cmd->add_subcommand("export", "Write split JSONL files and images");
  export_cmd->add_option("--store", store)->required();
  export_cmd->add_option("--out", out_dir)->required();
  export_cmd->add_option("--name", name);

  auto* stats_cmd = app.add_subcommand("stats", "Corpus statistics");
  stats_cmd->require_subcommand(1);
  auto* tokens = stats_cmd->add_subcommand("tokens", "Token-length histograms");
  tokens->add_option("--corpus", corpus_dir, "Exported corpus directory")->required();
  tokens->add_option("--out", out_dir)->required();
  tokens->add_option("--tokenizer", tokenizer, "'whitespace', merges file or tokenizer.json");
  tokens->add_option("--bins", bins);
  auto* resolutions = stats_cmd->add_subcommand("resolutions", "Image resolution histograms");
  resolutions->add_option("--corpus", corpus_dir)->required();
  resolutions->add_option("--out", out_dir)->required();
  resolutions->add_option("--bins", bins);

  auto* instruct_cmd = app.add_subcommand("instruct", "Instruction records for simulation images");
  instruct_cmd->require_subcommand(1);
  auto* build = instruct_cmd->add_subcommand("build", "Build instruction records");
  build->add_option("--task", task)->required()->check(CLI::IsMember({"stress", "energy", "crack"}));
  build->add_option("--in", in, "Sample JSONL")->required();
  build->add_option("--out", out_dir)->required();
  build->add_option("--std", std_convention)->check(CLI::IsMember({"population", "sample"}));
  auto* eval = instruct_cmd->add_subcommand("eval", "Score model responses");
  eval->add_option("--records", records_file)->required();
  eval->add_option("--responses", responses, "JSONL of {id, response}")->required();
  eval->add_option("--out", out_dir, "Report file")->required();

  auto* moe_cmd = app.add_subcommand("moe-demo", "Train a gate on synthetic expert clusters");
  moe_cmd->add_option("--experts", moe.experts);
  moe_cmd->add_option("--k", moe.k);
  moe_cmd->add_option("--dim", moe.dim);
  moe_cmd->add_option("--per-expert", moe.per_expert);
  moe_cmd->add_option("--sigma", moe.sigma);
  moe_cmd->add_option("--separation", moe.separation);
  moe_cmd->add_option("--epochs", moe.train.epochs);
  moe_cmd->add_option("--lr", moe.train.learning_rate);
  moe_cmd->add_option("--seed", seed);
  moe_cmd->add_option("--out", out_dir);

  auto* merge = app.add_subcommand("merge-plan", "Layer table for a depth-upscaled merge");
  merge->add_option("--base", base_layers);
  merge->add_option("--take", donor_take);
  merge->add_option("--out", out_dir);

  std::vector<std::string> argv{"matvl"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<char*> cargv;
  for (auto& a : argv) cargv.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    const CLI::App* where = &app;
    for (const CLI::App* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front(); sub;
         sub = sub->get_subcommands().empty() ? nullptr : sub->get_subcommands().front())
      where = sub;
    err << where->help();
    print_error(err, "usage", e.what());
    return 2;
  }

  Run run;
  run.argv = args;
  run.out = &out;
  run.err = &err;
  try {
    if (config_path) {
      run.cfg = config::load(*config_path);
      run.input(*config_path);
    }
    auto& c = run.cfg;
    if (seed) c.seed = *seed;
    if (keywords) c.harvest.keywords = *keywords;
    if (limit) c.harvest.wiki.limit = *limit;
    if (base_url) c.harvest.wiki.base_url = *base_url;
    if (concurrency) c.harvest.wiki.concurrency = *concurrency;
    if (min_px) (harvest_cmd->parsed() ? c.harvest.wiki.min_image_px : c.filter.min_px) = *min_px;
    if (max_aspect) c.filter.max_aspect = *max_aspect;
    if (exclude) c.exclusion_list = *exclude;
    if (endpoint) c.refine.endpoint.base_url = *endpoint;
    if (model_name) c.refine.endpoint.model = *model_name;
    if (template_id) c.refine.template_id = *template_id;
    if (templates) c.refine.templates = *templates;
    if (max_in_flight) c.refine.endpoint.max_in_flight = *max_in_flight;
    if (ratio) c.split_ratio = *ratio;
    if (tokenizer) c.tokenizer = *tokenizer;
    if (bins) {
      if (*bins < 1) throw Error("config", "bins must be at least 1");
      c.bins = static_cast<std::size_t>(*bins);
    }
    if (query) c.query = *query;
    config::validate(c);

    const fs::path default_out = out_dir.value_or(c.output_root);
    if (extract->parsed()) {
      run.name = "extract-pdf";
      return extract_pdf(run, *in, *out_dir);
    }
    if (harvest_cmd->parsed()) {
      run.name = "harvest";
      return harvest(run, *out_dir);
    }
    if (refine_cmd->parsed()) {
      run.name = "refine";
      return refine(run, *in, *out_dir);
    }
    if (add->parsed()) {
      run.name = "corpus-add";
      if (!refined && !records_file) throw CLI::RequiredError("--refined or --records");
      return corpus_add(run, *store, refined, records_file);
    }
    if (split->parsed()) {
      run.name = "corpus-split";
      return corpus_split(run, *store);
    }
    if (export_cmd->parsed()) {
      run.name = "corpus-export";
      return corpus_export(run, *store, *out_dir, name);
    }
    if (tokens->parsed()) {
      run.name = "stats-tokens";
      return stats_tokens(run, *corpus_dir, *out_dir);
    }
    if (resolutions->parsed()) {
      run.name = "stats-resolutions";
      return stats_resolutions(run, *corpus_dir, *out_dir);
    }
    if (build->parsed()) {
      run.name = "instruct-build";
      return instruct_build(run, task, *in, *out_dir, std_convention);
    }
    if (eval->parsed()) {
      run.name = "instruct-eval";
      return instruct_eval(run, *records_file, *responses, *out_dir);
    }
    if (moe_cmd->parsed()) {
      run.name = "moe-demo";
      return moe_demo(run, moe, default_out);
    }
    if (merge->parsed()) {
      run.name = "merge-plan";
      return merge_plan(run, base_layers, donor_take, default_out);
    }
  } catch (const CLI::Error& e) {
    err << app.help();
    print_error(err, "usage", e.what());
    return 2;
  } catch (const Error& e) {
    print_error(err, e.code(), e.what());
    return e.code() == "cli.usage" ? 2 : 1;
  } catch (const json::exception& e) {
    print_error(err, "json", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
    return 1;
  }
  err << app.help();
  print_error(err, "usage", "no subcommand given");
  return 2;
}

}  // namespace matvl::cli
