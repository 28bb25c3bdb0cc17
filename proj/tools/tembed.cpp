// tembed: train, align and analyze diachronic word embeddings, and run the
// BiLSTM metaphor detectors on top of them.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tembed/align.hpp"
#include "tembed/analysis.hpp"
#include "tembed/corpus.hpp"
#include "tembed/detector.hpp"
#include "tembed/errors.hpp"
#include "tembed/eval.hpp"
#include "tembed/sgns.hpp"
#include "tembed/store.hpp"

namespace fs = std::filesystem;
using namespace tembed;

namespace {

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

// Dataset kind from the header line when not given explicitly.
eval::MetaphorDataset load_dataset(const std::string& path,
                                   std::string kind) {
  if (kind == "auto") {
    std::ifstream in(path);
    if (!in) throw InvalidArgError("cannot open dataset: " + path);
    std::string header;
    std::getline(in, header);
    if (header.rfind("sentence,", 0) == 0) kind = "mohx";
    else if (header.rfind("verb,", 0) == 0) kind = "trofi";
    else if (header.rfind("fragment_id,", 0) == 0) kind = "vua";
    else
      throw FormatError("cannot infer dataset kind from header: " + header);
  }
  if (kind == "mohx") return eval::load_mohx(path);
  if (kind == "trofi") return eval::load_trofi(path);
  if (kind == "vua") return eval::load_vua(path);
  throw InvalidArgError("unknown dataset kind: " + kind);
}

void save_space(const store::EmbeddingSpace& space, const std::string& path,
                bool binary) {
  if (binary) store::save_binary(space, path);
  else store::save_text(space, path);
}

std::vector<std::string> split_list(const std::string& csv_list) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv_list) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

const eval::EvalReport& pick_report(const std::vector<eval::EvalReport>& rs,
                                    int fold) {
  for (const auto& r : rs)
    if (r.fold == fold) return r;
  throw InvalidArgError("no report with fold " + std::to_string(fold) +
                        " in file");
}

struct SgnsCliOptions {
  sgns::SgnsConfig cfg;
  bool binary = true;

  void attach(CLI::App* cmd) {
    cmd->add_option("--dim", cfg.dim, "vector length");
    cmd->add_option("--window", cfg.window, "max context offset");
    cmd->add_option("--negatives", cfg.negatives, "negative samples per pair");
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--lr", cfg.initial_lr, "initial learning rate");
    cmd->add_option("--min-count", cfg.min_count, "vocabulary cutoff");
    cmd->add_option("--subsample", cfg.subsample_t,
                    "frequent-word subsampling threshold (0 = off)");
    cmd->add_option("--seed", cfg.seed, "rng seed");
    cmd->add_option("--workers", cfg.workers,
                    "training threads (>1 is nondeterministic)");
    cmd->add_flag("--text,!--binary", [this](std::int64_t v) { binary = v == 0; },
                  "embedding output format (default binary)");
  }
};

struct DetectorCliOptions {
  detector::DetectorConfig cfg;
  std::string model = "rnn-hg";
  std::string oov = "hashed";

  void attach(CLI::App* cmd) {
    cmd->add_option("--model", model, "rnn-hg or rnn-mhca");
    cmd->add_option("--hidden", cfg.hidden, "BiLSTM hidden size per direction");
    cmd->add_option("--heads", cfg.n_heads, "attention heads (rnn-mhca)");
    cmd->add_option("--dropout-in", cfg.dropout_in, "input dropout");
    cmd->add_option("--dropout-out", cfg.dropout_out, "hidden dropout");
    cmd->add_option("--lr", cfg.lr, "Adam learning rate");
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--batch-size", cfg.batch_size, "0 = full batch");
    cmd->add_option("--pos-weight", cfg.pos_weight,
                    "metaphor class weight (<=0: #literal/#metaphor)");
    cmd->add_option("--clip", cfg.clip_norm, "gradient norm clip");
    cmd->add_option("--threshold", cfg.threshold, "decision threshold");
    cmd->add_option("--seed", cfg.seed, "rng seed");
    cmd->add_option("--oov", oov, "OOV policy: error|zero|mean|hashed");
  }
};

int run(int argc, char** argv) {
  CLI::App app{"diachronic word embeddings and metaphor detection toolkit"};
  app.require_subcommand(1);

  // ---- slice-corpus ----
  auto* slice_cmd = app.add_subcommand(
      "slice-corpus", "clean a timestamped corpus and slice it by decade");
  std::string manifest, out_dir;
  std::string stopwords_path, contractions_path;
  bool with_compass = false;
  corpus::PreprocessConfig pre;
  slice_cmd->add_option("--manifest", manifest, "CSV with doc_id,year,path")
      ->required();
  slice_cmd->add_option("--out", out_dir, "output directory")->required();
  slice_cmd->add_option("--stopwords", stopwords_path, "stopword list file");
  slice_cmd->add_option("--contractions", contractions_path,
                        "contraction table file");
  slice_cmd->add_flag("--compass", with_compass,
                      "also write the concatenated compass corpus");
  slice_cmd->add_flag("!--no-strip-html", pre.strip_html, "");
  slice_cmd->add_flag("!--no-brackets", pre.remove_bracketed, "");
  slice_cmd->add_flag("!--no-contractions", pre.expand_contractions, "");
  slice_cmd->add_flag("!--no-stopwords", pre.remove_stopwords, "");
  slice_cmd->add_flag("!--no-lowercase", pre.lowercase, "");
  slice_cmd->add_flag("!--no-regex", pre.regex_cleanup, "");
  slice_cmd->callback([&]() {
    if (!stopwords_path.empty())
      pre.stopword_list = corpus::load_stopwords(stopwords_path);
    else if (pre.remove_stopwords)
      throw InvalidArgError("--stopwords required when stopword removal is on");
    if (!contractions_path.empty())
      pre.contraction_table = corpus::load_contractions(contractions_path);
    else if (pre.expand_contractions)
      throw InvalidArgError(
          "--contractions required when contraction expansion is on");
    auto docs = corpus::read_manifest(manifest);
    auto slices = corpus::slice_by_decade(docs, pre);
    fs::create_directories(out_dir);
    for (const auto& slice : slices) {
      auto path = fs::path(out_dir) / (slice.decade_label + ".txt");
      corpus::write_slice(slice, path.string());
      std::cout << path.string() << ": " << slice.sentences.size()
                << " sentences\n";
    }
    if (with_compass) {
      auto compass = corpus::concat_slices(slices);
      auto path = fs::path(out_dir) / "compass.txt";
      corpus::write_slice(compass, path.string());
      std::cout << path.string() << ": " << compass.sentences.size()
                << " sentences\n";
    }
  });

  // ---- train-sgns ----
  auto* sgns_cmd = app.add_subcommand(
      "train-sgns", "train one SGNS space, optionally against a frozen "
                    "context matrix");
  std::string slice_path, frozen_path, sgns_out;
  SgnsCliOptions sgns_opt;
  sgns_cmd->add_option("--slice", slice_path, "slice file (one sentence per line)")
      ->required();
  sgns_cmd->add_option("--out", sgns_out, "output embedding file")->required();
  sgns_cmd->add_option("--frozen-context", frozen_path,
                       "context-matrix embedding file from a compass run");
  sgns_opt.attach(sgns_cmd);
  sgns_cmd->callback([&]() {
    auto slice = corpus::read_slice_file(slice_path);
    sgns::SgnsModel model;
    if (!frozen_path.empty()) {
      auto ctx_space = store::load_auto(frozen_path);
      if (sgns_cmd->count("--dim") && sgns_opt.cfg.dim != ctx_space.dim())
        throw DimMismatchError("--dim disagrees with frozen context dim " +
                               std::to_string(ctx_space.dim()));
      sgns_opt.cfg.dim = ctx_space.dim();
      sgns::Vocab shared = sgns::vocab_from_words(ctx_space.words());
      sgns::FrozenContext frozen{&shared, &ctx_space.data(), ctx_space.dim()};
      model = sgns::train(slice, sgns_opt.cfg, &frozen);
    } else {
      model = sgns::train(slice, sgns_opt.cfg);
    }
    auto space = sgns::to_embedding_space(model, slice.decade_label);
    save_space(space, sgns_out, sgns_opt.binary);
    std::cout << sgns_out << ": " << space.size() << " words, dim "
              << space.dim() << '\n';
  });

  // ---- train-compass ----
  auto* compass_cmd = app.add_subcommand(
      "train-compass",
      "train the compass on all slices, then each slice against its frozen "
      "context matrix");
  std::string slices_dir, compass_out;
  SgnsCliOptions compass_opt;
  compass_cmd->add_option("--slices", slices_dir, "directory of slice files")
      ->required();
  compass_cmd->add_option("--out", compass_out, "output directory")->required();
  compass_opt.attach(compass_cmd);
  compass_cmd->callback([&]() {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(slices_dir)) {
      if (!entry.is_regular_file()) continue;
      if (entry.path().extension() != ".txt") continue;
      if (entry.path().stem() == "compass") continue;
      files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2)
      throw InvalidArgError("need at least 2 slice files in " + slices_dir);
    std::vector<corpus::TimeSlice> slices;
    for (const auto& f : files) slices.push_back(corpus::read_slice_file(f));

    auto result = sgns::train_compass(slices, compass_opt.cfg);
    fs::create_directories(compass_out);
    const std::string ext = compass_opt.binary ? ".emb" : ".txt.emb";
    auto emit = [&](const store::EmbeddingSpace& space, const std::string& stem) {
      auto path = (fs::path(compass_out) / (stem + ext)).string();
      save_space(space, path, compass_opt.binary);
      std::cout << path << ": " << space.size() << " words, dim "
                << space.dim() << '\n';
    };
    emit(sgns::to_embedding_space(result.compass, "compass"), "compass");
    emit(sgns::to_embedding_space(result.compass, "compass", true),
         "compass.context");
    for (std::size_t i = 0; i < slices.size(); ++i)
      emit(sgns::to_embedding_space(result.slices[i], slices[i].decade_label),
           slices[i].decade_label);
  });

  // ---- align-procrustes ----
  auto* align_cmd = app.add_subcommand(
      "align-procrustes",
      "rotate a source space onto a target space over their shared "
      "vocabulary");
  std::string align_src, align_dst, align_out;
  std::size_t top_n = 0;
  bool align_binary = true;
  align_cmd->add_option("--source", align_src, "source embedding file")
      ->required();
  align_cmd->add_option("--target", align_dst, "target embedding file")
      ->required();
  align_cmd->add_option("--out", align_out, "aligned source output")
      ->required();
  align_cmd->add_option("--top-n", top_n,
                        "restrict shared vocab to the first N shared words");
  align_cmd->add_flag("--text,!--binary",
                      [&](std::int64_t v) { align_binary = v == 0; },
                      "output format (default binary)");
  align_cmd->callback([&]() {
    std::vector<std::string> warnings;
    auto src = store::load_auto(align_src, &warnings);
    auto dst = store::load_auto(align_dst, &warnings);
    auto res = align::procrustes_align(src, dst, top_n, &warnings);
    print_warnings(warnings);
    auto aligned = align::apply_rotation(src, res.rotation);
    save_space(aligned, align_out, align_binary);
    std::cout << align_out << ": shared vocab " << res.shared_vocab.size()
              << ", residual " << res.residual << '\n';
  });

  // ---- neighbors ----
  auto* nn_cmd =
      app.add_subcommand("neighbors", "cosine nearest neighbors of a word");
  std::string nn_space_path, nn_word;
  std::size_t nn_k = 10;
  nn_cmd->add_option("--space", nn_space_path, "embedding file")->required();
  nn_cmd->add_option("--word", nn_word, "query word")->required();
  nn_cmd->add_option("--k", nn_k, "neighbor count");
  nn_cmd->callback([&]() {
    auto space = store::load_auto(nn_space_path);
    for (const auto& [word, cos] : store::nearest_neighbors(space, nn_word, nn_k)) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", cos);
      std::cout << word << ' ' << buf << '\n';
    }
  });

  // ---- train-detector ----
  auto* det_cmd = app.add_subcommand(
      "train-detector", "train RNN_HG or RNN_MHCA on a metaphor dataset");
  std::string det_emb, det_dataset, det_ctx, det_out, det_kind = "auto";
  DetectorCliOptions det_opt;
  det_cmd->add_option("--embeddings", det_emb, "literal embedding file")
      ->required();
  det_cmd->add_option("--dataset", det_dataset, "dataset CSV")->required();
  det_cmd->add_option("--out", det_out, "checkpoint output")->required();
  det_cmd->add_option("--contextual", det_ctx, "contextual-vector sidecar");
  det_cmd->add_option("--dataset-kind", det_kind, "mohx|trofi|vua|auto");
  det_opt.attach(det_cmd);
  det_cmd->callback([&]() {
    auto ds = load_dataset(det_dataset, det_kind);
    auto space = store::load_auto(det_emb);
    detector::ContextualVectors ctx;
    const detector::ContextualVectors* ctx_ptr = nullptr;
    if (!det_ctx.empty()) {
      ctx = detector::load_contextual(det_ctx);
      ctx_ptr = &ctx;
    }
    det_opt.cfg.kind = detector::model_kind_from_string(det_opt.model);
    det_opt.cfg.d_g = space.dim();
    det_opt.cfg.d_e = ctx_ptr ? ctx.dim : 0;
    auto embedded = eval::attach_embeddings(
        ds, space, store::OovPolicy::parse(det_opt.oov, det_opt.cfg.seed),
        ctx_ptr);

    // honor a split column when present: train on train, model-select on dev
    std::vector<detector::LabeledSequence> train, dev;
    for (std::size_t i = 0; i < embedded.size(); ++i) {
      if (ds.meta[i].split == "dev") dev.push_back(embedded[i]);
      else if (ds.meta[i].split.empty() || ds.meta[i].split == "train")
        train.push_back(embedded[i]);
    }
    auto result = detector::train_detector(train, dev.empty() ? nullptr : &dev,
                                           det_opt.cfg);
    detector::save_checkpoint(result.params, det_out);
    const auto& last = result.log.back();
    std::cout << det_out << ": " << train.size() << " train instances, "
              << result.log.size() << " epochs, final loss "
              << last.train_loss;
    if (result.best_epoch >= 0)
      std::cout << ", best dev F1 "
                << result.log[static_cast<std::size_t>(result.best_epoch)].dev_f1
                << " at epoch " << result.best_epoch;
    std::cout << '\n';
  });

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand(
      "evaluate", "run the experimental protocol over one or more embedding "
                  "spaces");
  std::string eval_dataset, eval_embeddings, eval_out, eval_kind = "auto",
              eval_ctx;
  int eval_folds = 10;
  DetectorCliOptions eval_opt;
  eval_cmd->add_option("--dataset", eval_dataset, "dataset CSV")->required();
  eval_cmd
      ->add_option("--embeddings", eval_embeddings,
                   "comma-separated embedding files")
      ->required();
  eval_cmd->add_option("--folds", eval_folds, "cross-validation folds");
  eval_cmd->add_option("--out", eval_out, "JSONL report output");
  eval_cmd->add_option("--dataset-kind", eval_kind, "mohx|trofi|vua|auto");
  eval_cmd->add_option("--contextual", eval_ctx, "contextual-vector sidecar");
  eval_opt.attach(eval_cmd);
  eval_cmd->callback([&]() {
    auto ds = load_dataset(eval_dataset, eval_kind);
    detector::ContextualVectors ctx;
    const detector::ContextualVectors* ctx_ptr = nullptr;
    if (!eval_ctx.empty()) {
      ctx = detector::load_contextual(eval_ctx);
      ctx_ptr = &ctx;
    }
    std::vector<eval::EvalReport> all;
    for (const auto& emb_path : split_list(eval_embeddings)) {
      auto space = store::load_auto(emb_path);
      eval::RunConfig run;
      run.det = eval_opt.cfg;
      run.det.kind = detector::model_kind_from_string(eval_opt.model);
      run.folds = eval_folds;
      run.seed = eval_opt.cfg.seed;
      run.oov = store::OovPolicy::parse(eval_opt.oov, eval_opt.cfg.seed);
      run.contextual = ctx_ptr;
      auto reports = eval::run_experiment(ds, space, emb_path, run);
      all.insert(all.end(), reports.begin(), reports.end());
    }
    std::cout << eval::summary_table(all);
    if (!eval_out.empty()) {
      eval::write_reports_jsonl(all, eval_out);
      std::cout << "wrote " << all.size() << " reports to " << eval_out << '\n';
    }
  });

  // ---- drift ----
  auto* drift_cmd = app.add_subcommand(
      "drift", "nearest-neighbor comparison of one word across spaces");
  std::string drift_word, drift_spaces, drift_names, drift_csv, drift_json;
  std::size_t drift_k = 10;
  drift_cmd->add_option("--word", drift_word, "query word")->required();
  drift_cmd
      ->add_option("--spaces", drift_spaces, "comma-separated embedding files")
      ->required();
  drift_cmd->add_option("--names", drift_names,
                        "comma-separated space names (default: file stems)");
  drift_cmd->add_option("--k", drift_k, "neighbors per space");
  drift_cmd->add_option("--out-csv", drift_csv, "CSV output file");
  drift_cmd->add_option("--out-json", drift_json, "JSON output file");
  drift_cmd->callback([&]() {
    auto paths = split_list(drift_spaces);
    auto names = split_list(drift_names);
    if (!names.empty() && names.size() != paths.size())
      throw InvalidArgError("--names count must match --spaces count");
    std::vector<store::EmbeddingSpace> spaces;
    spaces.reserve(paths.size());
    for (const auto& p : paths) spaces.push_back(store::load_auto(p));
    std::vector<std::pair<std::string, const store::EmbeddingSpace*>> named;
    for (std::size_t i = 0; i < paths.size(); ++i)
      named.emplace_back(
          names.empty() ? fs::path(paths[i]).stem().string() : names[i],
          &spaces[i]);
    auto rec = analysis::neighbor_drift(drift_word, named, drift_k);

    for (const auto& sn : rec.per_space) {
      std::cout << sn.space_name << ":";
      if (sn.absent) {
        std::cout << " (absent)\n";
        continue;
      }
      for (const auto& [w, _] : sn.neighbors) std::cout << ' ' << w;
      std::cout << '\n';
    }
    for (std::size_t i = 0; i < named.size(); ++i)
      for (std::size_t j = i + 1; j < named.size(); ++j)
        std::cout << "jaccard(" << named[i].first << ", " << named[j].first
                  << ") = " << rec.jaccard[i][j] << '\n';

    if (!drift_csv.empty()) {
      std::ofstream out(drift_csv);
      out << analysis::drift_to_csv(rec);
    }
    if (!drift_json.empty()) {
      nlohmann::json j;
      j["word"] = rec.word;
      j["k"] = rec.k;
      for (const auto& sn : rec.per_space) {
        nlohmann::json js;
        js["space"] = sn.space_name;
        js["absent"] = sn.absent;
        for (const auto& [w, c] : sn.neighbors)
          js["neighbors"].push_back({{"word", w}, {"cosine", c}});
        j["spaces"].push_back(js);
      }
      j["jaccard"] = rec.jaccard;
      std::ofstream out(drift_json);
      out << j.dump(2) << '\n';
    }
  });

  // ---- diff-runs ----
  auto* diff_cmd = app.add_subcommand(
      "diff-runs", "instances one run got right and the other did not");
  std::string diff_a, diff_b, diff_out;
  int diff_fold = -1;
  diff_cmd->add_option("--a", diff_a, "JSONL report file A")->required();
  diff_cmd->add_option("--b", diff_b, "JSONL report file B")->required();
  diff_cmd->add_option("--fold", diff_fold,
                       "fold to compare (default: pooled report)");
  diff_cmd->add_option("--out-json", diff_out, "JSON output file");
  diff_cmd->callback([&]() {
    auto ra = pick_report(eval::load_reports_jsonl(diff_a), diff_fold);
    auto rb = pick_report(eval::load_reports_jsonl(diff_b), diff_fold);
    auto diff = analysis::diff_runs(ra, rb);
    std::cout << "agreement rate: " << diff.agreement_rate << '\n';
    std::cout << "only A correct (" << diff.only_a_correct.size() << "):";
    for (const auto& id : diff.only_a_correct) std::cout << ' ' << id;
    std::cout << "\nonly B correct (" << diff.only_b_correct.size() << "):";
    for (const auto& id : diff.only_b_correct) std::cout << ' ' << id;
    std::cout << '\n';
    for (const auto& [genre, counts] : diff.per_genre)
      std::cout << "genre " << genre << ": only-A " << counts.first
                << ", only-B " << counts.second << '\n';
    if (!diff_out.empty()) {
      nlohmann::json j;
      j["agreement_rate"] = diff.agreement_rate;
      j["only_a_correct"] = diff.only_a_correct;
      j["only_b_correct"] = diff.only_b_correct;
      for (const auto& [genre, counts] : diff.per_genre)
        j["per_genre"][genre] = {{"only_a", counts.first},
                                 {"only_b", counts.second}};
      std::ofstream out(diff_out);
      out << j.dump(2) << '\n';
    }
  });

  // ---- genre-breakdown ----
  auto* genre_cmd = app.add_subcommand(
      "genre-breakdown", "per-genre metrics of a report against its dataset");
  std::string genre_report, genre_dataset, genre_kind = "auto", genre_csv;
  int genre_fold = -1;
  genre_cmd->add_option("--report", genre_report, "JSONL report file")
      ->required();
  genre_cmd->add_option("--dataset", genre_dataset, "dataset CSV")->required();
  genre_cmd->add_option("--dataset-kind", genre_kind, "mohx|trofi|vua|auto");
  genre_cmd->add_option("--fold", genre_fold,
                        "fold to break down (default: pooled report)");
  genre_cmd->add_option("--out-csv", genre_csv, "CSV output file");
  genre_cmd->callback([&]() {
    auto ds = load_dataset(genre_dataset, genre_kind);
    auto report = pick_report(eval::load_reports_jsonl(genre_report),
                              genre_fold);
    auto breakdown = analysis::genre_breakdown(report, ds);
    std::ostringstream csv_out;
    csv_out << "genre,precision,recall,f1,accuracy,tp,fp,tn,fn\n";
    for (const auto& [genre, sub] : breakdown) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f,%.4f,%ld,%ld,%ld,%ld",
                    genre.c_str(), sub.precision, sub.recall, sub.f1,
                    sub.accuracy, sub.tp, sub.fp, sub.tn, sub.fn);
      csv_out << buf << '\n';
      std::cout << buf << '\n';
    }
    if (!genre_csv.empty()) {
      std::ofstream out(genre_csv);
      out << csv_out.str();
    }
    auto patterns = analysis::pos_position_patterns(report, ds);
    if (!patterns) {
      std::cout << "(no POS column in dataset; skipping POS position "
                   "patterns)\n";
    } else {
      std::cout << "top POS@position patterns among correct metaphors:\n";
      for (const auto& [pattern, count] : *patterns)
        std::cout << "  " << pattern << " x" << count << '\n';
    }
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
