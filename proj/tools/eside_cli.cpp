// eside: command-line front end for the timestep ensemble and forensics tools.
//
// Every run writes a manifest (all resolved settings); `eside replay
// --manifest M` reruns it and must reproduce the same bytes.

#include <glob.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "cli_params.hpp"
#include "eside/eside.hpp"
#include "subprocess.hpp"

namespace fs = std::filesystem;
using namespace eside;

namespace {

constexpr const char* kManifestHeader = "eside run manifest; formats ESF1 v1, EMLP v1, ERE1 v1";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatCode::io, "cannot write " + path.string());
  out << text;
  if (!out) throw FormatError(FormatCode::io, "short write to " + path.string());
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

fs::path manifest_for_file(const fs::path& out) { return fs::path(out.string() + ".manifest.txt"); }

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (out.empty()) throw InvalidArgument("no files match '" + pattern + "'");
  return out;
}

NoiseSchedule schedule_from(const cli::Params& p) {
  return NoiseSchedule::linear(p.get<int>("schedule-T"), p.get<double>("beta-start"), p.get<double>("beta-end"));
}

void add_schedule(cli::Params& p) {
  p.add("schedule-T", "24", "noise schedule length T");
  p.add("beta-start", "0.0001", "first beta of the linear schedule");
  p.add("beta-end", "0.02", "last beta of the linear schedule");
}

// Pixels in [0, 1] mapped to the [-1, 1] range the noising operates on.
std::vector<double> signed_pixels(const Raster& r) {
  std::vector<double> x(r.pixels.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * r.pixels[i] - 1.0;
  return x;
}

std::string padded(int t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", t);
  return buf;
}

// ---- subcommands ---------------------------------------------------------------

struct Command {
  std::string name;
  std::string help;
  std::function<void(cli::Params&)> declare;
  std::function<void(const cli::Params&)> run;
};

void run_synth(const cli::Params& p) {
  SynthConfig sc;
  sc.n_per_class = p.get<std::size_t>("n");
  sc.dim = p.get<std::uint32_t>("dim");
  sc.gap = p.get<double>("gap");
  sc.overlap_frac = p.get<double>("overlap");
  sc.seed = p.get<std::uint64_t>("seed");
  const int T = p.get<int>("T");
  const int stride = p.get<int>("stride");
  if (T < 0 || stride < 1 || T % stride != 0) throw InvalidArgument("stride must divide T");
  sc.timesteps.clear();
  for (int t = 0; t <= T; t += stride) sc.timesteps.push_back(static_cast<std::uint32_t>(t));
  const fs::path out = p.str("out");
  ensure_parent(out);
  write_esf(synth_features(sc), out);
  p.manifest("synth-features").save(manifest_for_file(out), kManifestHeader);
}

void run_split(const cli::Params& p) {
  const auto ds = read_esf(p.str("features"));
  const auto [train, test] = split(ds, p.get<double>("frac"), p.get<std::uint64_t>("seed"));
  const fs::path a = p.str("train-out");
  const fs::path b = p.str("test-out");
  ensure_parent(a);
  ensure_parent(b);
  write_esf(train, a);
  write_esf(test, b);
  p.manifest("split").save(manifest_for_file(a), kManifestHeader);
}

void run_train(const cli::Params& p) {
  const auto ds = read_esf(p.str("features"));
  ensemble::EnsembleConfig cfg;
  cfg.T = p.get<int>("T");
  cfg.stride = p.get<int>("stride");
  cfg.eta = p.get<double>("eta");
  cfg.eps_lo = p.get<double>("eps-lo");
  cfg.eps_hi = p.get<double>("eps-hi");
  cfg.hidden = p.list<int>("hidden");
  cfg.dropout = p.get<double>("dropout");
  cfg.train.epochs = p.get<int>("epochs");
  cfg.train.batch_size = p.get<int>("batch");
  cfg.train.learning_rate = p.get<double>("lr");
  cfg.train.weight_decay = p.get<double>("weight-decay");
  cfg.train.seed = p.get<std::uint64_t>("seed");
  cfg.chain_weights = p.flag("chain-weights");
  cfg.threads = p.get<int>("threads");

  const auto result = ensemble::train_ensemble(ds, cfg);
  const fs::path dir = p.str("out");
  ensemble::save_ensemble(result.model, dir);
  std::ostringstream log;
  log.precision(17);
  log << "timestep,epoch,loss,weighted_error\n";
  for (std::size_t k = 0; k < result.logs.size(); ++k) {
    for (const auto& e : result.logs[k]) {
      log << result.model.members[k].timestep << ',' << e.epoch << ',' << e.loss << ',' << e.weighted_error << '\n';
    }
  }
  write_text(dir / "train_log.csv", log.str());
  p.manifest("train").save(dir / "manifest.txt", kManifestHeader);
  for (const auto& m : result.model.members) {
    std::printf("member t=%u alpha=%.6f\n", m.timestep, m.alpha);
  }
}

void run_eval(const cli::Params& p) {
  const auto e = ensemble::load_ensemble(p.str("ensemble"));
  const auto ds = read_esf(p.str("features"));
  std::optional<std::string> tag;
  if (!p.str("tag").empty()) tag = p.str("tag");
  const auto m = ensemble::evaluate(e, ds, tag);
  const fs::path out = p.str("out");
  ensure_parent(out);
  std::ostringstream csv;
  m.write_csv(csv);
  write_text(out, csv.str());
  p.manifest("eval").save(manifest_for_file(out), kManifestHeader);
  std::printf("accuracy %.6f (%zu/%zu)\n", m.overall.accuracy(), m.overall.correct, m.overall.n);
}

void run_predict(const cli::Params& p) {
  const auto e = ensemble::load_ensemble(p.str("ensemble"));
  const auto ds = read_esf(p.str("features"));
  const auto preds = ensemble::predict_dataset(e, ds);
  std::ostringstream csv;
  csv.precision(17);
  csv << "index,tag,score,label\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    csv << i << ',' << ds.tags[i] << ',' << preds[i].score << ',' << int(preds[i].label) << '\n';
  }
  const fs::path out = p.str("out");
  ensure_parent(out);
  write_text(out, csv.str());
  p.manifest("predict").save(manifest_for_file(out), kManifestHeader);
}

void run_spectra(const cli::Params& p) {
  const auto img = to_grayscale(load_raster(p.str("image")));
  const auto sched = schedule_from(p);
  const auto steps = p.list<int>("steps");
  if (steps.empty()) throw InvalidArgument("steps: need at least one timestep");
  const auto seed = p.get<std::uint64_t>("seed");
  const double bandwidth = p.get<double>("bandwidth");
  const int nbins = p.get<int>("nbins");
  const auto mask = spectral::axis_mask(img.width, img.height, bandwidth);
  const auto x0 = signed_pixels(img);
  const fs::path dir = p.str("out");
  fs::create_directories(dir);
  for (int t : steps) {
    sched.check_timestep(t);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<double> eps(x0.size());
    for (double& v : eps) v = rng.normal();
    Grid<double> xt(img.width, img.height);
    xt.data = forward_noise(x0, t, sched, eps);
    const auto power = spectral::power_grid(spectral::fft2(xt));
    const auto logp = spectral::log_power(power);
    const auto stem = "t" + padded(t);
    save_raster(spectral::heatmap(logp), dir / ("spectrum_" + stem + ".pgm"));
    std::ostringstream grid;
    spectral::write_grid_csv(grid, logp);
    write_text(dir / ("logpower_" + stem + ".csv"), grid.str());
    std::ostringstream hist;
    hist.precision(17);
    spectral::energy_histogram(power, mask, nbins).write_csv(hist);
    write_text(dir / ("histogram_" + stem + ".csv"), hist.str());
  }
  p.manifest("spectra").save(dir / "manifest.txt", kManifestHeader);
}

void run_suppress(const cli::Params& p) {
  const auto img = load_raster(p.str("image"));
  spectral::SuppressionKnobs knobs;
  knobs.bandwidth = p.get<double>("bandwidth");
  knobs.ratio = p.get<double>("ratio");
  knobs.percentile = p.get<double>("percentile");
  const auto rep = spectral::suppress_image(img, knobs);
  if (rep.all_protected) std::fprintf(stderr, "warning: every bin is protected by the axis mask; nothing suppressed\n");
  const fs::path out = p.str("out");
  ensure_parent(out);
  save_raster(rep.image, out);
  p.manifest("suppress").save(manifest_for_file(out), kManifestHeader);
  std::printf("suppressed %zu peak bins\n", rep.peak_count);
}

void run_variance(const cli::Params& p) {
  const auto files = expand_glob(p.str("images"));
  const auto sched = schedule_from(p);
  const auto steps = p.list<int>("steps");
  if (steps.empty()) throw InvalidArgument("steps: need at least one timestep");
  const auto seed = p.get<std::uint64_t>("seed");
  std::ostringstream csv;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto x0 = signed_pixels(load_raster(files[i]));
    const auto traj = variance_trajectory(x0, sched, steps, derive_seed(seed, i));
    write_trajectory_csv(csv, fs::path(files[i]).filename().string(), traj, i == 0);
  }
  const fs::path out = p.str("out");
  ensure_parent(out);
  write_text(out, csv.str());
  p.manifest("variance").save(manifest_for_file(out), kManifestHeader);
}

void run_perturb(const cli::Params& p) {
  const auto files = expand_glob(p.str("images"));
  const auto seed = p.get<std::uint64_t>("seed");
  const auto mode = p.str("mode");
  if (mode != "joint" && mode != "blur" && mode != "rotate" && mode != "brightness") {
    throw InvalidArgument("mode must be joint, blur, rotate or brightness");
  }
  const fs::path dir = p.str("out");
  fs::create_directories(dir);
  std::ostringstream listing;
  listing.precision(17);
  listing << "# path\tsigma\ttheta\talpha\tseed (mode " << mode << ")\n";
  std::map<std::string, std::string> used;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto img = load_raster(files[i]);
    const auto params = sample_perturbation(derive_seed(seed, i));
    Raster out;
    if (mode == "joint") out = apply_perturbation(img, params);
    else if (mode == "blur") out = gaussian_blur(img, params.sigma);
    else if (mode == "rotate") out = rotate(img, params.theta);
    else out = brightness(img, params.alpha);
    const auto name = fs::path(files[i]).stem().string() + "_" + mode + ".png";
    if (!used.emplace(name, files[i]).second) {
      throw InvalidArgument("inputs " + used[name] + " and " + files[i] + " map to the same output name");
    }
    save_raster(out, dir / name);
    listing << name << '\t' << params.sigma << '\t' << params.theta << '\t' << params.alpha << '\t' << params.seed << '\n';
  }
  write_text(dir / "perturbations.txt", listing.str());
  p.manifest("perturb").save(dir / "manifest.txt", kManifestHeader);
}

// Phrase file: `id<TAB>text` per line; embeddings are the rows of a parallel
// ERE1 file.
std::vector<explain::Phrase> load_phrases(const fs::path& tsv, const fs::path& embs) {
  std::ifstream in(tsv);
  if (!in) throw FormatError(FormatCode::io, "cannot open " + tsv.string());
  const auto table = explain::read_ere(embs);
  std::vector<explain::Phrase> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(FormatCode::corrupt_header, tsv.string() + ":" + std::to_string(lineno) + ": expected id<TAB>text");
    }
    explain::Phrase ph;
    ph.id = KvFile::parse_value<int>(line.substr(0, tab), "phrase id");
    ph.text = line.substr(tab + 1);
    out.push_back(std::move(ph));
  }
  if (out.size() != table.count()) {
    throw FormatError(FormatCode::length_mismatch, "phrase file has " + std::to_string(out.size()) +
                                                       " lines but embedding file has " + std::to_string(table.count()) +
                                                       " rows");
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].embedding = table.row(i);
  return out;
}

void add_rating_inputs(cli::Params& p) {
  p.add("regions", "", "ERE1 file of region embeddings (full image first)", true);
  p.add("phrases", "", "phrase file, id<TAB>text per line", true);
  p.add("phrase-embs", "", "ERE1 file of phrase embeddings, one row per phrase line", true);
  p.add("lambda", "", "softmax inverse temperature (no default on purpose)", true);
  p.add("k", "10", "phrases kept per round");
  p.add("image-id", "", "image id for the records (default: regions file stem)");
}

std::string image_id_of(const cli::Params& p) {
  return p.str("image-id").empty() ? fs::path(p.str("regions")).stem().string() : p.str("image-id");
}

void run_rate(const cli::Params& p) {
  const auto regions = explain::RegionEmbeddings::from_table(explain::read_ere(p.str("regions")));
  const auto phrases = load_phrases(p.str("phrases"), p.str("phrase-embs"));
  if (phrases.empty()) throw InvalidArgument("no phrases to rate");
  const double lambda = p.get<double>("lambda");
  const auto k = p.get<std::size_t>("k");
  const auto ratings = explain::rate_all(phrases, regions, lambda);
  const auto ranked = explain::rank_topk(ratings, ratings.size());
  const auto sims = explain::sim_summary(ratings);
  const auto id = image_id_of(p);
  std::ostringstream out;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    nlohmann::ordered_json j;
    j["image_id"] = id;
    j["phrase_id"] = ranked[i].id;
    j["text"] = ranked[i].text;
    j["r"] = ranked[i].rating;
    j["rank"] = i + 1;
    j["retained"] = i < k;
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json s;
  s["image_id"] = id;
  s["summary"] = true;
  s["top5"] = sims.top5;
  s["top10"] = sims.top10;
  s["overall"] = sims.overall;
  out << s.dump() << '\n';
  const fs::path path = p.str("out");
  ensure_parent(path);
  write_text(path, out.str());
  p.manifest("rate").save(manifest_for_file(path), kManifestHeader);
}

// Rewriter protocol, one JSON object per line:
//   request  {image_id, flaw_category, text, retained_phrases}
//   response {image_id, text}   (or {error} on failure)
explain::Rewriter external_rewriter(cli::LineProcess& proc) {
  return [&proc](const explain::RewriteRequest& req) {
    nlohmann::ordered_json j;
    j["image_id"] = req.image_id;
    j["flaw_category"] = req.flaw_categories;
    j["text"] = req.text;
    j["retained_phrases"] = req.retained_phrases;
    const auto reply = proc.exchange(j.dump());
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::exception&) {
      throw FormatError(FormatCode::corrupt_header, "rewriter: reply is not JSON");
    }
    if (r.contains("error")) throw Error("rewriter reported: " + r["error"].dump());
    if (!r.contains("text") || !r["text"].is_string()) throw FormatError(FormatCode::corrupt_header, "rewriter: reply lacks text");
    if (r.contains("image_id") && r["image_id"] != req.image_id) {
      throw FormatError(FormatCode::corrupt_header, "rewriter: reply is for a different image");
    }
    return r["text"].get<std::string>();
  };
}

void run_refine(const cli::Params& p) {
  const auto regions = explain::RegionEmbeddings::from_table(explain::read_ere(p.str("regions")));
  explain::RefineInput input;
  input.image_id = image_id_of(p);
  input.flaw_categories = p.list<int>("flaw-category");
  input.phrases = load_phrases(p.str("phrases"), p.str("phrase-embs"));
  {
    std::ifstream in(p.str("text"));
    if (!in) throw FormatError(FormatCode::io, "cannot open " + p.str("text"));
    std::stringstream ss;
    ss << in.rdbuf();
    input.text = KvFile::trim(ss.str());
  }
  // Revised texts are re-encoded by looking their chunks up in the phrase
  // table; a chunk the table does not know ends the loop.
  std::map<std::string, explain::Embedding> known;
  for (const auto& ph : input.phrases) known.emplace(KvFile::trim(ph.text), ph.embedding);
  const explain::PhraseEncoder encoder = [&known](const std::string& chunk) {
    const auto it = known.find(KvFile::trim(chunk));
    if (it == known.end()) throw InvalidArgument("no embedding for phrase '" + chunk + "'");
    return it->second;
  };

  explain::RefineOptions opts;
  opts.lambda = p.get<double>("lambda");
  opts.iterations = p.get<int>("iterations");
  opts.k = p.get<std::size_t>("k");

  std::optional<cli::LineProcess> proc;
  explain::Rewriter rewriter = explain::identity_rewriter();
  if (!p.str("rewriter").empty()) {
    proc.emplace(p.str("rewriter"));
    rewriter = external_rewriter(*proc);
  }
  const auto outcome = explain::refine_loop(regions, input, rewriter, encoder, opts);
  if (proc) proc->finish();

  std::ostringstream out;
  for (const auto& rec : outcome.records) out << rec.to_json().dump() << '\n';
  const fs::path path = p.str("out");
  ensure_parent(path);
  write_text(path, out.str());
  p.manifest("refine").save(manifest_for_file(path), kManifestHeader);
  if (!outcome.ok) throw Error("refine stopped after " + std::to_string(outcome.records.size()) + " records: " + outcome.failure);
}

std::vector<Command> commands() {
  std::vector<Command> c;
  c.push_back({"synth-features", "write a synthetic two-class ESF1 feature file",
               [](cli::Params& p) {
                 p.add("out", "", "output ESF1 path", true);
                 p.add("n", "100", "images per class");
                 p.add("dim", "768", "feature dimension");
                 p.add("gap", "3", "distance between class means");
                 p.add("overlap", "0", "fraction of each class drawn from the other class at some timesteps");
                 p.add("T", "24", "last timestep");
                 p.add("stride", "3", "timestep spacing");
                 p.add("seed", "42", "generator seed");
               },
               run_synth});
  c.push_back({"split", "stratified train/test split of an ESF1 file",
               [](cli::Params& p) {
                 p.add("features", "", "input ESF1", true);
                 p.add("train-out", "", "training subset ESF1", true);
                 p.add("test-out", "", "held-out subset ESF1", true);
                 p.add("frac", "0.8", "training fraction per class");
                 p.add("seed", "42", "shuffle seed");
               },
               run_split});
  c.push_back({"train", "train the timestep ensemble",
               [](cli::Params& p) {
                 p.add("features", "", "training ESF1", true);
                 p.add("out", "", "output directory", true);
                 p.add("T", "24", "last timestep");
                 p.add("stride", "3", "timestep spacing between members");
                 p.add("eta", "0.25", "sample reweighting rate");
                 p.add("eps-lo", "0.001", "lower clamp of the weighted error");
                 p.add("eps-hi", "0.5", "upper clamp of the weighted error");
                 p.add("hidden", "1024,512,256,128", "hidden layer widths");
                 p.add("dropout", "0.5", "dropout rate");
                 p.add("epochs", "10", "epochs (one reweighting round each)");
                 p.add("batch", "256", "mini-batch size");
                 p.add("lr", "0.0001", "AdamW learning rate");
                 p.add("weight-decay", "0.0005", "AdamW decoupled weight decay");
                 p.add("seed", "42", "training seed");
                 p.add("chain-weights", "false", "carry sample weights from member to member");
                 p.add("threads", "1", "members trained in parallel");
               },
               run_train});
  c.push_back({"eval", "accuracy of an ensemble on an ESF1 file",
               [](cli::Params& p) {
                 p.add("ensemble", "", "ensemble directory", true);
                 p.add("features", "", "ESF1 to score", true);
                 p.add("tag", "", "only score images with this tag (hard, original)");
                 p.add("out", "", "metrics CSV", true);
               },
               run_eval});
  c.push_back({"predict", "per-image ensemble scores",
               [](cli::Params& p) {
                 p.add("ensemble", "", "ensemble directory", true);
                 p.add("features", "", "ESF1 to score", true);
                 p.add("out", "", "predictions CSV", true);
               },
               run_predict});
  c.push_back({"spectra", "log-power spectra and energy histograms of a noised image",
               [](cli::Params& p) {
                 p.add("image", "", "input PNG/PNM", true);
                 add_schedule(p);
                 p.add("steps", "0,6,12", "timesteps to analyse");
                 p.add("seed", "42", "noise seed");
                 p.add("bandwidth", "0.06", "axis mask bandwidth for the histograms");
                 p.add("nbins", "50", "histogram bins");
                 p.add("out", "", "output directory", true);
               },
               run_spectra});
  c.push_back({"suppress", "suppress high-frequency spectral peaks and reconstruct",
               [](cli::Params& p) {
                 p.add("image", "", "input PNG/PNM", true);
                 p.add("bandwidth", "0.06", "axis mask bandwidth");
                 p.add("ratio", "0.1", "fraction of peak energy kept");
                 p.add("percentile", "0.15", "fraction of unprotected bins treated as peaks");
                 p.add("out", "", "output PNG/PNM", true);
               },
               run_suppress});
  c.push_back({"variance", "inter-pixel variance trajectories",
               [](cli::Params& p) {
                 p.add("images", "", "glob of input images", true);
                 add_schedule(p);
                 p.add("steps", "0,3,6,9,12,15,18,21,24", "timesteps");
                 p.add("seed", "42", "noise seed");
                 p.add("out", "", "output CSV", true);
               },
               run_variance});
  c.push_back({"perturb", "seeded blur/rotation/brightness perturbations",
               [](cli::Params& p) {
                 p.add("images", "", "glob of input images", true);
                 p.add("seed", "42", "parameter seed");
                 p.add("mode", "joint", "joint, blur, rotate or brightness");
                 p.add("out", "", "output directory", true);
               },
               run_perturb});
  c.push_back({"rate", "rate explanation phrases against image regions",
               [](cli::Params& p) {
                 add_rating_inputs(p);
                 p.add("out", "", "output JSONL", true);
               },
               run_rate});
  c.push_back({"refine", "iteratively rewrite an explanation, keeping the best-rated phrases",
               [](cli::Params& p) {
                 add_rating_inputs(p);
                 p.add("text", "", "file holding the explanation text", true);
                 p.add("flaw-category", "", "flaw category ids (1..14), comma separated");
                 p.add("iterations", "3", "rewrite rounds");
                 p.add("rewriter", "", "shell command speaking the JSONL rewriter protocol (default: identity)");
                 p.add("out", "", "output JSONL", true);
               },
               run_refine});
  return c;
}

// Single line on stderr: `eside: error kind=<kind> [code=<code>] message="..."`.
void report(const std::string& kind, const std::string& code, const std::string& message) {
  std::string m;
  for (char ch : message) {
    if (ch == '\n' || ch == '\r') m += ' ';
    else if (ch == '"' || ch == '\\') m += std::string("\\") + ch;
    else m += ch;
  }
  std::fprintf(stderr, "eside: error kind=%s%s message=\"%s\"\n", kind.c_str(),
               code.empty() ? "" : (" code=" + code).c_str(), m.c_str());
}

int run(int argc, char** argv) {
  CLI::App app{"eside: timestep ensemble detector and forensics tools"};
  app.require_subcommand(1);
  auto cmds = commands();
  std::vector<std::unique_ptr<cli::Params>> params;
  std::vector<CLI::App*> subs;
  for (auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    params.push_back(std::make_unique<cli::Params>(sub));
    c.declare(*params.back());
    subs.push_back(sub);
  }
  std::string manifest_path;
  std::vector<std::string> sets;
  auto* replay = app.add_subcommand("replay", "rerun a command from its manifest");
  replay->add_option("--manifest", manifest_path, "manifest written by an earlier run")->required();
  replay->add_option("--set", sets, "key=value override (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("usage", "", e.what());
    return 2;
  }

  try {
    if (replay->parsed()) {
      auto kv = KvFile::load(manifest_path);
      const auto command = kv.get("command");
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw InvalidArgument("--set expects key=value");
        kv.set(KvFile::trim(s.substr(0, eq)), KvFile::trim(s.substr(eq + 1)));
      }
      for (std::size_t i = 0; i < cmds.size(); ++i) {
        if (cmds[i].name != command) continue;
        params[i]->resolve(&kv);
        cmds[i].run(*params[i]);
        return 0;
      }
      throw InvalidArgument("manifest names unknown command '" + command + "'");
    }
    for (std::size_t i = 0; i < cmds.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      params[i]->resolve();
      cmds[i].run(*params[i]);
      return 0;
    }
    report("usage", "", "no command given");
    return 2;
  } catch (const InvalidArgument& e) {
    report("usage", "", e.what());
    return 2;
  } catch (const FormatError& e) {
    report("format", to_string(e.code()), e.what());
    return 3;
  } catch (const NumericError& e) {
    report("numeric", "", e.what());
    return 4;
  } catch (const std::exception& e) {
    report("failure", "", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
