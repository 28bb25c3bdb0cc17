#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "../common/fixtures.hpp"
#include "tembed/eval.hpp"
#include "tembed/rng.hpp"

using namespace tembed;
using eval::MetaphorDataset;

namespace {

namespace fs = std::filesystem;

std::string write_temp(const std::string& name, const std::string& content) {
  auto path = (fs::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

store::EmbeddingSpace fixture_space(int dim, std::uint64_t seed) {
  std::vector<std::string> words = {"the",  "man",   "kicked", "ball",
                                    "idea", "burned", "bright", "storm",
                                    "swept", "nation", "dog",   "sat"};
  std::vector<float> data;
  Rng rng(seed);
  for (std::size_t i = 0; i < words.size(); ++i)
    for (int j = 0; j < dim; ++j)
      data.push_back(static_cast<float>(rng.uniform(-1, 1)));
  return store::EmbeddingSpace(std::move(words), std::move(data), dim);
}

// 20-row MOH-X-schema fixture; label depends on the verb
std::string mohx_fixture_csv() {
  std::ostringstream os;
  os << "sentence,verb,verb_idx,label\n";
  const char* metaphor_sents[] = {
      "the idea burned bright", "the storm swept nation",
      "the man burned idea", "the storm kicked nation",
      "the idea swept man"};
  const char* literal_sents[] = {
      "the man kicked ball", "the dog sat the", "the man sat ball",
      "the dog kicked ball", "the man kicked dog"};
  for (int rep = 0; rep < 2; ++rep) {
    for (const char* s : metaphor_sents) {
      std::istringstream is(s);
      std::vector<std::string> toks{std::istream_iterator<std::string>(is),
                                    std::istream_iterator<std::string>()};
      os << '"' << s << "\"," << toks[2] << ",2,1\n";
    }
    for (const char* s : literal_sents) {
      std::istringstream is(s);
      std::vector<std::string> toks{std::istream_iterator<std::string>(is),
                                    std::istream_iterator<std::string>()};
      os << '"' << s << "\"," << toks[2] << ",2,0\n";
    }
  }
  return os.str();
}

}  // namespace

TEST_CASE("mohx loader masks only the target verb", "[eval]") {
  auto path = write_temp("tembed_mohx.csv", mohx_fixture_csv());
  auto ds = eval::load_mohx(path);
  CHECK(ds.name == "MOH-X");
  REQUIRE(ds.instances.size() == 20);
  for (std::size_t i = 0; i < ds.instances.size(); ++i) {
    const auto& inst = ds.instances[i];
    int masked = 0;
    for (std::size_t t = 0; t < inst.weight_mask.size(); ++t) {
      masked += inst.weight_mask[t];
      if (!inst.weight_mask[t]) CHECK(inst.labels[t] == 0);
    }
    CHECK(masked == 1);
    CHECK(inst.weight_mask[2] == 1);
    CHECK(ds.meta[i].verb_idx == 2);
    CHECK(ds.meta[i].verb == inst.tokens[2].token);
  }
  fs::remove(path);
}

TEST_CASE("mohx loader rejects out-of-range verb_idx", "[eval]") {
  auto path = write_temp("tembed_mohx_bad.csv",
                         "sentence,verb,verb_idx,label\n"
                         "\"the man kicked ball\",kicked,9,1\n");
  CHECK_THROWS_AS(eval::load_mohx(path), DatasetError);
  fs::remove(path);
}

TEST_CASE("mohx loader rejects malformed rows", "[eval]") {
  auto path = write_temp("tembed_mohx_bad2.csv",
                         "sentence,verb,verb_idx,label\n"
                         "\"the man kicked ball\",kicked,two,1\n");
  CHECK_THROWS_AS(eval::load_mohx(path), DatasetError);
  fs::remove(path);
  path = write_temp("tembed_mohx_bad3.csv",
                    "sentence,verb,verb_idx,label\n"
                    "\"the man kicked ball\",kicked,2,5\n");
  CHECK_THROWS_AS(eval::load_mohx(path), DatasetError);
  fs::remove(path);
}

TEST_CASE("trofi loader keeps duplicates and single targets", "[eval]") {
  auto path = write_temp("tembed_trofi.csv",
                         "verb,sentence,verb_idx,label\n"
                         "kicked,\"the man kicked ball\",2,0\n"
                         "kicked,\"the man kicked ball\",2,0\n"
                         "swept,\"the storm swept nation\",2,1\n");
  auto ds = eval::load_trofi(path);
  CHECK(ds.name == "TroFi");
  REQUIRE(ds.instances.size() == 3);
  for (const auto& inst : ds.instances) {
    int masked = 0;
    for (int m : inst.weight_mask) masked += m;
    CHECK(masked == 1);
  }
  CHECK(ds.meta[0].id != ds.meta[1].id);  // duplicates stay distinct instances
  fs::remove(path);
}

TEST_CASE("vua loader honors genres, splits and pos", "[eval]") {
  auto path = write_temp(
      "tembed_vua.csv",
      "fragment_id,sentence_id,genre,tokens,labels,split,pos\n"
      "f1,1,news,the storm swept nation,0 1 1 0,train,DT NN VBD NN\n"
      "f1,2,academic,the idea burned bright,0 0 1 0,dev,DT NN VBD JJ\n"
      "f2,1,conversation,the dog sat,0 0 0,test,DT NN VBD\n"
      "f2,2,fiction,the man kicked ball,0 0 0 0,test,DT NN VBD NN\n");
  auto ds = eval::load_vua(path);
  REQUIRE(ds.instances.size() == 4);
  CHECK(ds.meta[0].genre == "news");
  CHECK(ds.meta[0].split == "train");
  CHECK(ds.meta[0].id == "f1:1");
  CHECK(ds.meta[3].pos.size() == 4);
  for (const auto& inst : ds.instances)
    for (int m : inst.weight_mask) CHECK(m == 1);
  fs::remove(path);
}

TEST_CASE("vua loader rejects bad rows", "[eval]") {
  auto path = write_temp("tembed_vua_bad.csv",
                         "fragment_id,sentence_id,genre,tokens,labels\n"
                         "f1,1,news,the storm,0 1 1\n");
  CHECK_THROWS_AS(eval::load_vua(path), DatasetError);
  fs::remove(path);
  path = write_temp("tembed_vua_bad2.csv",
                    "fragment_id,sentence_id,genre,tokens,labels\n"
                    "f1,1,poetry,the storm,0 1\n");
  CHECK_THROWS_AS(eval::load_vua(path), DatasetError);
  fs::remove(path);
}

TEST_CASE("fold plans are disjoint, exhaustive and balanced", "[eval]") {
  Rng rng(2024);
  for (int iter = 0; iter < 40; ++iter) {
    const std::size_t n = 5 + rng.bounded(96);
    MetaphorDataset ds;
    ds.instances.resize(n);
    ds.meta.resize(n);
    const int k = 1 + static_cast<int>(rng.bounded(n));
    const std::uint64_t seed = rng.next();
    auto plan = eval::make_folds(ds, k, seed);
    REQUIRE(plan.assignments.size() == n);
    std::vector<long> sizes(static_cast<std::size_t>(k), 0);
    for (int a : plan.assignments) {
      REQUIRE(a >= 0);
      REQUIRE(a < k);
      ++sizes[static_cast<std::size_t>(a)];
    }
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*hi - *lo <= 1);
    auto again = eval::make_folds(ds, k, seed);
    CHECK(plan.assignments == again.assignments);
  }
}

TEST_CASE("fold edge cases", "[eval]") {
  MetaphorDataset ds;
  ds.instances.resize(6);
  ds.meta.resize(6);
  auto one = eval::make_folds(ds, 1, 5);
  for (int a : one.assignments) CHECK(a == 0);
  CHECK_THROWS_AS(eval::make_folds(ds, 7, 5), InvalidArgError);
}

TEST_CASE("646 instances split 10 ways gives sizes 65 and 64", "[eval]") {
  MetaphorDataset ds;
  ds.instances.resize(646);
  ds.meta.resize(646);
  auto plan = eval::make_folds(ds, 10, 99);
  std::vector<int> sizes(10, 0);
  for (int a : plan.assignments) ++sizes[static_cast<std::size_t>(a)];
  int n65 = 0, n64 = 0;
  for (int s : sizes) {
    if (s == 65) ++n65;
    if (s == 64) ++n64;
  }
  CHECK(n65 == 6);
  CHECK(n64 == 4);
}

TEST_CASE("metrics on fully correct predictions", "[eval]") {
  std::vector<int> gold = {1, 0, 1, 0};
  std::vector<int> mask = {1, 1, 1, 1};
  auto r = eval::compute_metrics(gold, gold, mask);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);
  CHECK(r.accuracy == 1.0);
}

TEST_CASE("metrics on the documented confusion counts", "[eval]") {
  // TP=1, FP=1, FN=1, TN=0
  std::vector<int> gold = {1, 0, 1};
  std::vector<int> pred = {1, 1, 0};
  std::vector<int> mask = {1, 1, 1};
  auto r = eval::compute_metrics(pred, gold, mask);
  CHECK(r.tp == 1);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.tn == 0);
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.5);
}

TEST_CASE("metrics match a brute-force recount", "[eval]") {
  Rng rng(606);
  std::vector<int> gold(500), pred(500), mask(500);
  for (int i = 0; i < 500; ++i) {
    gold[i] = rng.uniform() < 0.4 ? 1 : 0;
    pred[i] = rng.uniform() < 0.5 ? 1 : 0;
    mask[i] = rng.uniform() < 0.8 ? 1 : 0;
  }
  auto r = eval::compute_metrics(pred, gold, mask);
  long tp = 0, fp = 0, tn = 0, fn = 0, total = 0;
  for (int i = 0; i < 500; ++i) {
    if (!mask[i]) continue;
    ++total;
    tp += (gold[i] == 1 && pred[i] == 1) ? 1 : 0;
    fp += (gold[i] == 0 && pred[i] == 1) ? 1 : 0;
    fn += (gold[i] == 1 && pred[i] == 0) ? 1 : 0;
    tn += (gold[i] == 0 && pred[i] == 0) ? 1 : 0;
  }
  CHECK(r.tp == tp);
  CHECK(r.fp == fp);
  CHECK(r.fn == fn);
  CHECK(r.tn == tn);
  CHECK(r.tp + r.fp + r.tn + r.fn == total);
  CHECK(r.precision == (tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0));
  CHECK(r.recall == (tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0));
  CHECK(r.accuracy == static_cast<double>(tp + tn) / total);
}

TEST_CASE("metrics length mismatch raises", "[eval]") {
  CHECK_THROWS_AS(eval::compute_metrics({1}, {1, 0}, {1, 1}), InvalidArgError);
}

TEST_CASE("cross-validation yields ten fold reports plus pooled", "[eval]") {
  auto path = write_temp("tembed_mohx_run.csv", mohx_fixture_csv());
  auto ds = eval::load_mohx(path);
  auto space = fixture_space(6, 8);

  eval::RunConfig cfg;
  cfg.folds = 10;
  cfg.seed = 5;
  cfg.det.hidden = 4;
  cfg.det.epochs = 3;
  cfg.det.dropout_in = 0;
  cfg.det.dropout_out = 0;
  cfg.det.batch_size = 0;
  auto reports = eval::run_experiment(ds, space, "fixture-space", cfg);
  REQUIRE(reports.size() == 11);

  long tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t covered = 0;
  for (int f = 0; f < 10; ++f) {
    CHECK(reports[f].fold == f);
    CHECK(reports[f].embedding_id == "fixture-space");
    tp += reports[f].tp;
    fp += reports[f].fp;
    tn += reports[f].tn;
    fn += reports[f].fn;
    covered += reports[f].instances.size();
  }
  const auto& pooled = reports[10];
  CHECK(pooled.fold == -1);
  CHECK(pooled.tp == tp);
  CHECK(pooled.fp == fp);
  CHECK(pooled.tn == tn);
  CHECK(pooled.fn == fn);
  CHECK(covered == ds.instances.size());
  CHECK(pooled.instances.size() == ds.instances.size());
  CHECK(pooled.tp + pooled.fp + pooled.tn + pooled.fn ==
        static_cast<long>(ds.instances.size()));  // one masked token each

  // deterministic given (dataset, seed, config, embedding)
  auto again = eval::run_experiment(ds, space, "fixture-space", cfg);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    CHECK(reports[i].tp == again[i].tp);
    CHECK(reports[i].f1 == again[i].f1);
  }
  fs::remove(path);
}

TEST_CASE("split datasets produce a single test report", "[eval]") {
  std::ostringstream os;
  os << "fragment_id,sentence_id,genre,tokens,labels,split\n";
  for (int i = 0; i < 8; ++i)
    os << "f1," << i << ",news,the storm swept nation,0 1 1 0,train\n";
  os << "f2,1,fiction,the man kicked ball,0 0 0 0,dev\n";
  os << "f2,2,fiction,the dog sat the,0 0 0 0,test\n";
  os << "f2,3,news,the idea burned bright,0 1 1 0,test\n";
  auto path = write_temp("tembed_vua_run.csv", os.str());
  auto ds = eval::load_vua(path);
  auto space = fixture_space(6, 9);

  eval::RunConfig cfg;
  cfg.seed = 6;
  cfg.det.hidden = 4;
  cfg.det.epochs = 3;
  cfg.det.dropout_in = 0;
  cfg.det.dropout_out = 0;
  auto reports = eval::run_experiment(ds, space, "fixture-space", cfg);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].instances.size() == 2);
  CHECK(reports[0].fold == -1);
  fs::remove(path);
}

TEST_CASE("sweeping several spaces keeps reports separate", "[eval]") {
  auto path = write_temp("tembed_mohx_sweep.csv", mohx_fixture_csv());
  auto ds = eval::load_mohx(path);
  eval::RunConfig cfg;
  cfg.folds = 5;
  cfg.seed = 5;
  cfg.det.hidden = 3;
  cfg.det.epochs = 2;
  cfg.det.dropout_in = 0;
  cfg.det.dropout_out = 0;
  std::vector<eval::EvalReport> all;
  for (std::uint64_t s : {11ull, 12ull, 13ull}) {
    auto space = fixture_space(5, s);
    auto reports =
        eval::run_experiment(ds, space, "space-" + std::to_string(s), cfg);
    all.insert(all.end(), reports.begin(), reports.end());
  }
  CHECK(all.size() == 18);
  std::set<std::string> ids;
  for (const auto& r : all) ids.insert(r.embedding_id);
  CHECK(ids.size() == 3);
  fs::remove(path);
}

TEST_CASE("report jsonl round trip", "[eval]") {
  namespace fsys = std::filesystem;
  eval::InstanceResult inst;
  inst.id = "3";
  inst.genre = "news";
  inst.gold = {0, 1};
  inst.mask = {1, 1};
  inst.pred = {0, 0};
  inst.prob = {0.25, 0.375};
  auto report = eval::report_from_instances({inst});
  report.dataset = "FIX";
  report.embedding_id = "emb";
  report.model_kind = "rnn-hg";
  report.seed = 55;
  report.fold = 2;

  auto path = (fsys::temp_directory_path() / "tembed_reports.jsonl").string();
  eval::write_reports_jsonl({report}, path);
  auto loaded = eval::load_reports_jsonl(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].dataset == "FIX");
  CHECK(loaded[0].fold == 2);
  CHECK(loaded[0].tp == report.tp);
  CHECK(loaded[0].fn == report.fn);
  REQUIRE(loaded[0].instances.size() == 1);
  CHECK(loaded[0].instances[0].id == "3");
  CHECK(loaded[0].instances[0].prob == inst.prob);
  fsys::remove(path);
}

TEST_CASE("attach_embeddings fills vectors and sidecar blocks", "[eval]") {
  auto path = write_temp("tembed_mohx_attach.csv", mohx_fixture_csv());
  auto ds = eval::load_mohx(path);
  auto space = fixture_space(4, 10);

  detector::ContextualVectors ctx;
  ctx.dim = 2;
  for (const auto& m : ds.meta)
    ctx.by_id[m.id] = std::vector<float>(
        ds.instances[std::stoul(m.id)].tokens.size() * 2, 0.5f);

  auto embedded =
      eval::attach_embeddings(ds, space, {store::OovPolicy::Mode::hashed_random,
                                          3},
                              &ctx);
  REQUIRE(embedded.size() == ds.instances.size());
  for (const auto& seq : embedded)
    for (const auto& tok : seq.tokens) {
      CHECK(tok.literal_vec.size() == 4);
      CHECK(tok.contextual_vec.size() == 2);
    }
  fs::remove(path);
}
