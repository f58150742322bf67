#pragma once

// Drives the eside binary as a subprocess: builds a small input corpus, runs
// every subcommand once and replays each run from its manifest.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "eside/eside.hpp"

namespace test {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CliResult run_cli(const std::string& exe, const std::vector<std::string>& args, const fs::path& scratch) {
  std::string cmd = shell_quote(exe);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  const auto out_path = scratch / "cli_stdout.txt";
  const auto err_path = scratch / "cli_stderr.txt";
  cmd += " >" + shell_quote(out_path.string()) + " 2>" + shell_quote(err_path.string());
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

// Every regular file under the given paths, keyed by path.
inline std::map<std::string, std::string> snapshot(const std::vector<fs::path>& paths) {
  std::map<std::string, std::string> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file()) out[e.path().string()] = slurp(e.path());
    } else if (fs::exists(p)) {
      out[p.string()] = slurp(p);
    }
  }
  return out;
}

struct Step {
  std::string name;
  std::vector<std::string> args;
  std::vector<fs::path> outputs;  // files or directories, manifests included
  fs::path manifest;
};

struct Corpus {
  fs::path root;
  fs::path images_glob;
  fs::path gray_image;
  fs::path regions;
  fs::path phrases;
  fs::path phrase_embs;
  fs::path text;
};

inline const std::vector<std::string>& corpus_phrases() {
  static const std::vector<std::string> p{
      "the left hand has six fingers", "shadows fall in two directions", "the sign text is garbled",
      "the fence melts into the grass", "window reflections do not match", "the dog has no tail"};
  return p;
}

inline Corpus make_corpus(const fs::path& root) {
  using namespace eside;
  fs::remove_all(root);
  fs::create_directories(root / "imgs");
  Corpus c;
  c.root = root;
  Rng rng(2024);
  // Smooth fields plus noise, one gray and one color.
  for (int k = 0; k < 2; ++k) {
    const int ch = k == 0 ? 1 : 3;
    Raster r(40, 32, ch);
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x)
        for (int cc = 0; cc < ch; ++cc)
          r.at(x, y, cc) = std::clamp(0.5 + 0.3 * std::sin(0.2 * x + cc) * std::cos(0.15 * y) + 0.05 * rng.normal(), 0.0, 1.0);
    save_raster(r, root / "imgs" / ("img" + std::to_string(k) + ".png"));
  }
  c.images_glob = root / "imgs" / "*.png";
  c.gray_image = root / "imgs" / "img0.png";

  const std::uint32_t dim = 8;
  auto table = [&](std::size_t rows) {
    explain::EmbeddingTable t{dim, {}};
    for (std::size_t i = 0; i < rows * dim; ++i) t.values.push_back(static_cast<float>(rng.normal()));
    return t;
  };
  c.regions = root / "regions.ere";
  explain::write_ere(table(4), c.regions);
  c.phrase_embs = root / "phrase_embs.ere";
  explain::write_ere(table(corpus_phrases().size()), c.phrase_embs);
  c.phrases = root / "phrases.tsv";
  c.text = root / "text.txt";
  std::ofstream tsv(c.phrases);
  std::string text;
  for (std::size_t i = 0; i < corpus_phrases().size(); ++i) {
    tsv << i << '\t' << corpus_phrases()[i] << '\n';
    text += corpus_phrases()[i] + ". ";
  }
  std::ofstream(c.text) << text << '\n';
  return c;
}

inline fs::path file_manifest(const fs::path& out) { return fs::path(out.string() + ".manifest.txt"); }

// One run of every subcommand on the corpus, small enough to finish in seconds.
inline std::vector<Step> all_steps(const Corpus& c, const std::string& rewriter_cmd) {
  const auto r = c.root;
  auto s = [](const fs::path& p) { return p.string(); };
  std::vector<Step> steps;
  steps.push_back({"synth-features",
                   {"synth-features", "--out", s(r / "f.esf"), "--n", "80", "--dim", "8", "--overlap", "0.2", "--seed", "7"},
                   {r / "f.esf", file_manifest(r / "f.esf")},
                   file_manifest(r / "f.esf")});
  steps.push_back({"split",
                   {"split", "--features", s(r / "f.esf"), "--train-out", s(r / "tr.esf"), "--test-out", s(r / "te.esf"),
                    "--frac", "0.75", "--seed", "3"},
                   {r / "tr.esf", r / "te.esf", file_manifest(r / "tr.esf")},
                   file_manifest(r / "tr.esf")});
  steps.push_back({"train",
                   {"train", "--features", s(r / "tr.esf"), "--out", s(r / "ens"), "--stride", "12", "--hidden", "16,8",
                    "--epochs", "3", "--batch", "32", "--lr", "0.01", "--dropout", "0.1"},
                   {r / "ens"},
                   r / "ens" / "manifest.txt"});
  steps.push_back({"eval",
                   {"eval", "--ensemble", s(r / "ens"), "--features", s(r / "te.esf"), "--out", s(r / "metrics.csv")},
                   {r / "metrics.csv", file_manifest(r / "metrics.csv")},
                   file_manifest(r / "metrics.csv")});
  steps.push_back({"predict",
                   {"predict", "--ensemble", s(r / "ens"), "--features", s(r / "te.esf"), "--out", s(r / "preds.csv")},
                   {r / "preds.csv", file_manifest(r / "preds.csv")},
                   file_manifest(r / "preds.csv")});
  steps.push_back({"spectra",
                   {"spectra", "--image", s(c.gray_image), "--steps", "0,6,12", "--out", s(r / "spectra")},
                   {r / "spectra"},
                   r / "spectra" / "manifest.txt"});
  steps.push_back({"suppress",
                   {"suppress", "--image", s(r / "imgs" / "img1.png"), "--ratio", "0.1", "--out", s(r / "sup.png")},
                   {r / "sup.png", file_manifest(r / "sup.png")},
                   file_manifest(r / "sup.png")});
  steps.push_back({"variance",
                   {"variance", "--images", s(c.images_glob), "--out", s(r / "var.csv")},
                   {r / "var.csv", file_manifest(r / "var.csv")},
                   file_manifest(r / "var.csv")});
  steps.push_back({"perturb",
                   {"perturb", "--images", s(c.images_glob), "--seed", "5", "--out", s(r / "pert")},
                   {r / "pert"},
                   r / "pert" / "manifest.txt"});
  steps.push_back({"rate",
                   {"rate", "--regions", s(c.regions), "--phrases", s(c.phrases), "--phrase-embs", s(c.phrase_embs),
                    "--lambda", "9", "--k", "3", "--out", s(r / "rate.jsonl")},
                   {r / "rate.jsonl", file_manifest(r / "rate.jsonl")},
                   file_manifest(r / "rate.jsonl")});
  std::vector<std::string> refine{"refine", "--regions", s(c.regions), "--phrases", s(c.phrases), "--phrase-embs",
                                  s(c.phrase_embs), "--lambda", "9", "--k", "4", "--text", s(c.text),
                                  "--flaw-category", "2,5", "--iterations", "2", "--out", s(r / "refine.jsonl")};
  if (!rewriter_cmd.empty()) {
    refine.push_back("--rewriter");
    refine.push_back(rewriter_cmd);
  }
  steps.push_back({"refine", refine, {r / "refine.jsonl", file_manifest(r / "refine.jsonl")}, file_manifest(r / "refine.jsonl")});
  return steps;
}

// Runs the step, stashes its outputs, deletes them, replays the manifest and
// compares every byte. Returns an empty string on success.
inline std::string check_replay(const std::string& exe, const Step& step, const fs::path& scratch) {
  const auto first = run_cli(exe, step.args, scratch);
  if (first.code != 0) return step.name + ": exit " + std::to_string(first.code) + ": " + first.err;
  const auto before = snapshot(step.outputs);
  if (before.empty()) return step.name + ": no outputs written";
  if (!before.count(step.manifest.string())) return step.name + ": manifest missing";
  const auto kept = scratch / (step.name + ".manifest.kept");
  fs::copy_file(step.manifest, kept, fs::copy_options::overwrite_existing);
  for (const auto& p : step.outputs) fs::remove_all(p);
  const auto again = run_cli(exe, {"replay", "--manifest", kept.string()}, scratch);
  if (again.code != 0) return step.name + ": replay exit " + std::to_string(again.code) + ": " + again.err;
  const auto after = snapshot(step.outputs);
  if (after.size() != before.size()) return step.name + ": replay wrote a different set of files";
  for (const auto& [path, bytes] : before) {
    const auto it = after.find(path);
    if (it == after.end()) return step.name + ": replay did not write " + path;
    if (it->second != bytes) return step.name + ": replay differs in " + path;
  }
  return {};
}

}  // namespace test
