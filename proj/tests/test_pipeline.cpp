#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "retro3d/pipeline.hpp"

using namespace retro3d;
using namespace retro3d::pipeline;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content = "") const {
    auto p = path / name;
    if (!content.empty()) std::ofstream(p) << content;
    return p.string();
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ConformerIndex synthetic_index(const std::vector<std::string>& products) {
  ConformerIndex index;
  for (const auto& p : products) {
    auto g = chem::parse(p);
    index.emplace(p, conformer::make_record(p, g, conformer::synthetic_conformer(g, 3)));
  }
  return index;
}

RunConfig tiny_run(const std::string& train_file, const std::string& out) {
  RunConfig c;
  c.train = train_file;
  c.conformers = corpus::path("sample_conformers.jsonl");
  c.out_dir = out;
  c.model = fixtures::micro(0);
  c.batch_size = 4;
  c.keep_best = 2;
  c.eval_beam = 1;
  c.ks = {1};
  return c;
}

std::string first_lines(const TempDir& dir, std::size_t n) {
  auto lines = corpus::lines("sample_reactions.txt");
  std::string text;
  for (std::size_t i = 0; i < n; ++i) text += lines[i] + "\n";
  return dir.file("train.txt", text);
}

}  // namespace

TEST_CASE("vocabulary") {
  TempDir dir("retro3d_test_vocab");
  auto v = build_vocab({dir.file("cco.txt", "CCO>>CCO\n")});
  CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "C", "O"});
  CHECK(v.id("O") == 5);
  CHECK(v.id("N") == model::kUnk);

  auto sample = corpus::path("sample_reactions.txt");
  auto a = build_vocab({sample});
  a.save(dir.file("a.txt"));
  build_vocab({sample}).save(dir.file("b.txt"));
  CHECK(slurp(dir.file("a.txt")) == slurp(dir.file("b.txt")));
  CHECK(Vocab::load(dir.file("a.txt")).tokens() == a.tokens());
  // a few dozen tokens, the same order of magnitude as a full reaction corpus
  CHECK(a.size() >= 20);
  CHECK(a.size() <= 200);
  for (const auto& t : a.tokens()) CHECK(t.find(':') == std::string::npos);

  auto ids = a.encode(chem::tokenize("c1ccccc1Cl"));
  ids.push_back(model::kEos);
  CHECK(a.decode(ids) == std::optional<std::string>("c1ccccc1Cl"));
  CHECK_FALSE(a.decode({a.id("C"), model::kPad}).has_value());
  CHECK_THROWS(Vocab::from_tokens({"C", "O"}));
}

TEST_CASE("reaction files and class tokens") {
  TempDir dir("retro3d_test_read");
  auto path = dir.file("r.txt", "CCO>>CCO\t3\n\nCCN>>CCN\n");
  auto lines = read_reactions(path);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].klass == 3);
  CHECK(lines[0].line == 1);
  CHECK_FALSE(lines[1].klass.has_value());
  CHECK(lines[1].line == 3);
  auto v = build_vocab({path}, true);
  CHECK(v.id(class_token(3)) != model::kUnk);
  CHECK_THROWS(read_reactions(dir.file("missing.txt")));
}

TEST_CASE("assemble an identity reaction") {
  const std::string mol = "[CH3:1][CH2:2][CH2:3][CH2:4][CH2:5][OH:6]";
  auto index = synthetic_index({mol});
  auto vocab = Vocab::build({"C", "O"});
  auto r = assemble({mol + ">>" + mol, std::nullopt, 1}, &index, vocab, {});
  REQUIRE(r.example);
  const auto& in = r.example->input;
  CHECK(in.has_3d);
  REQUIRE(in.sam.rows == 6);
  REQUIRE(in.sam.cols == 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(in.sam.at(i, j) == (i == j ? 1 : 0));
  const std::size_t m = in.pairs.tokens;
  CHECK(m == 8);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) CHECK(in.pairs.distance[i * m + j] == in.pairs.distance[j * m + i]);
  CHECK(in.tgt == in.src);
  CHECK(r.example->product_tokens.size() == 6);
}

TEST_CASE("assemble rejections and modes") {
  auto vocab = fixtures::vocab();
  auto small = assemble({"[CH3:1][CH2:2][OH:3]>>[CH3:1][CH2:2][OH:3]", std::nullopt, 1}, nullptr, vocab, {});
  CHECK_FALSE(small.example);
  CHECK(small.reason == "product<5 atoms");

  const std::string mol = "[CH3:1][CH2:2][CH2:3][CH2:4][CH2:5][OH:6]";
  ConformerIndex empty;
  auto skipped = assemble({mol + ">>" + mol, std::nullopt, 1}, &empty, vocab, {});
  CHECK_FALSE(skipped.example);
  CHECK(skipped.reason == "missing conformer");
  AssembleOptions zero;
  zero.on_missing_conformer = MissingConformer::Zero;
  auto zeroed = assemble({mol + ">>" + mol, std::nullopt, 1}, &empty, vocab, zero);
  REQUIRE(zeroed.example);
  CHECK_FALSE(zeroed.example->input.has_3d);
  CHECK(missing_conformer_from_string("zero") == MissingConformer::Zero);
  CHECK_THROWS(missing_conformer_from_string("drop"));

  AssembleOptions shortish;
  shortish.max_length = 6;
  shortish.on_missing_conformer = MissingConformer::Zero;
  auto too_long = assemble({mol + ">>" + mol, std::nullopt, 1}, nullptr, vocab, shortish);
  CHECK_FALSE(too_long.example);

  auto malformed = assemble({"CC(>>CC", std::nullopt, 1}, nullptr, vocab, zero);
  CHECK_FALSE(malformed.example);
  CHECK_FALSE(malformed.reason.empty());
}

TEST_CASE("class token shifts the product side") {
  const std::string mol = "[CH3:1][CH2:2][CH2:3][CH2:4][CH2:5][OH:6]";
  auto index = synthetic_index({mol});
  auto vocab = Vocab::build({"C", "O", class_token(2)});
  AssembleOptions opts;
  opts.class_tokens = true;
  auto r = assemble({mol + ">>" + mol, 2, 1}, &index, vocab, opts);
  REQUIRE(r.example);
  const auto& in = r.example->input;
  CHECK(in.src.front() == vocab.id(class_token(2)));
  CHECK(in.src_atom.front() == -1);
  CHECK(in.sam.cols == 7);
  for (std::size_t i = 0; i < 6; ++i) CHECK(in.sam.at(i, i + 1) == 1);
  CHECK(in.pairs.tokens == 9);
}

TEST_CASE("sample examples are consistent") {
  auto examples = fixtures::examples(200);
  REQUIRE(examples.size() == 200);
  for (const auto& ex : examples) {
    const auto& in = ex.input;
    std::size_t atoms = 0;
    for (int a : in.src_atom) atoms += a >= 0 ? 1 : 0;
    CHECK(atoms == in.graph.size());
    CHECK(in.graph.size() <= in.src.size());
    CHECK(in.sam.rows == in.tgt.size());
    CHECK(in.sam.cols == in.src.size());
    CHECK(in.pairs.tokens == in.src.size() + 2);
    CHECK(in.src.size() + 2 <= 256);
    CHECK(in.has_3d);
  }
}

TEST_CASE("re-rooting preserves molecules") {
  auto lines = read_reactions(corpus::path("sample_reactions.txt"));
  const auto& vocab = fixtures::vocab();
  for (std::size_t i = 0; i < 30; ++i) {
    auto base = assemble(lines[i], &fixtures::conformers(), vocab, {});
    REQUIRE(base.example);
    const std::string product_key = chem::canonical_key(base.example->product);
    const std::string reactant_key = chem::canonical_key(base.example->reactants);
    const int n = static_cast<int>(base.example->input.graph.size());
    for (int root = 0; root < n; root += 3) {
      AssembleOptions opts;
      opts.product_root = root;
      auto moved = assemble(lines[i], &fixtures::conformers(), vocab, opts);
      REQUIRE(moved.example);
      CHECK(chem::canonical_key(moved.example->product) == product_key);
      CHECK(chem::canonical_key(moved.example->reactants) == reactant_key);
      // distances follow the atoms they belong to
      const auto& a = base.example->input.geo;
      const auto& b = moved.example->input.geo;
      CHECK(a.edges.size() == b.edges.size());
    }
  }
}

TEST_CASE("deterministic splits") {
  auto path = corpus::path("sample_reactions.txt");
  auto a = split_reactions(path, {0.8, 0.1, 0.1}, 5);
  auto b = split_reactions(path, {0.8, 0.1, 0.1}, 5);
  REQUIRE(a.size() == 3);
  CHECK(a[0].size() == 800);
  CHECK(a[1].size() == 100);
  CHECK(a[2].size() == 100);
  std::set<std::size_t> seen;
  for (std::size_t s = 0; s < 3; ++s) {
    REQUIRE(a[s].size() == b[s].size());
    for (std::size_t i = 0; i < a[s].size(); ++i) {
      CHECK(a[s][i].line == b[s][i].line);
      seen.insert(a[s][i].line);
    }
  }
  CHECK(seen.size() == 1000);
  auto c = split_reactions(path, {0.8, 0.1, 0.1}, 6);
  CHECK(c[1].front().line != a[1].front().line);
}

TEST_CASE("run config") {
  RunConfig c;
  c.train = "t.txt";
  CHECK_NOTHROW(c.validate());
  auto j = to_json(c);
  auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  auto rel = run_config_from_json(nlohmann::json{{"train", "x/t.txt"}}, "/base");
  CHECK(rel.train == "/base/x/t.txt");
  CHECK_THROWS(run_config_from_json(nlohmann::json{{"batch", 3}}));
  auto bad = c;
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.patience = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.eval_beam = 5;
  CHECK_THROWS(bad.validate());
  CHECK(RunConfig{}.max_epochs == 1000);
  CHECK(RunConfig{}.batch_size == 16);
  CHECK(RunConfig{}.patience == 7);
  CHECK(RunConfig{}.keep_best == 7);

  TempDir dir("retro3d_test_runcfg");
  auto file = dir.file("c.json", R"({"train": "t.txt", "seed": 9, "model": {"dim": 32}})");
  auto loaded = load_run_config(file);
  CHECK(loaded.seed == 9);
  CHECK(loaded.model.dim == 32);
  CHECK(loaded.train == (dir.path / "t.txt").string());
}

TEST_CASE("early stop with a frozen learning rate") {
  TempDir dir("retro3d_test_patience");
  auto c = tiny_run(first_lines(dir, 8), (dir.path / "run").string());
  c.optim.fixed_lr = 0.0;
  c.patience = 1;
  c.augment = false;
  auto r = train(c);
  CHECK(r.stop_reason == "early stop");
  CHECK(r.epochs == 2);
  CHECK(r.steps == 4);
  CHECK(fs::exists(r.averaged));
  CHECK(fs::exists(dir.path / "run" / "vocab.txt"));
  auto ck = model::load_checkpoint(r.averaged);
  CHECK(vocab_of(ck).size() == Vocab::load((dir.path / "run" / "vocab.txt").string()).size());
  CHECK(r.kept.size() <= 2);

  std::ifstream log(dir.path / "run" / "metrics.jsonl");
  std::string line;
  std::size_t steps = 0, validations = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    if (!j.contains("event")) {
      ++steps;
      for (const char* key : {"step", "epoch", "loss", "ce", "kl", "sa", "lr", "tokens"}) CHECK(j.contains(key));
      CHECK(j.at("lr").get<double>() == 0.0);
    } else if (j.at("event") == "validate") {
      ++validations;
      CHECK(j.contains("val_top1"));
    }
  }
  CHECK(steps == 4);
  CHECK(validations == 2);
}

TEST_CASE("identical seeds give identical logs") {
  TempDir dir("retro3d_test_determinism");
  auto train_file = first_lines(dir, 12);
  auto run = [&](const std::string& name, std::uint64_t seed) {
    auto c = tiny_run(train_file, (dir.path / name).string());
    c.model.dropout_ffn = c.model.dropout_attn = c.model.dropout_emb = 0.1;
    c.seed = seed;
    c.max_steps = 9;
    train(c);
    return slurp((dir.path / name / "metrics.jsonl").string());
  };
  auto a = run("a", 4), b = run("b", 4), c = run("c", 5);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(slurp((dir.path / "a" / "last.r3d").string()) == slurp((dir.path / "b" / "last.r3d").string()));
}

TEST_CASE("evaluation report") {
  TempDir dir("retro3d_test_eval");
  auto c = tiny_run(first_lines(dir, 6), (dir.path / "run").string());
  c.max_steps = 2;
  auto r = train(c);
  auto ck = model::load_checkpoint(r.averaged);
  auto vocab = vocab_of(ck);
  auto lines = read_reactions(c.train);
  auto ds = load_dataset(lines, &fixtures::conformers(), vocab, {});
  REQUIRE(ds.examples.size() == 6);
  ds.examples.resize(3);
  auto report = evaluate(ck, ds.examples, 10, {1, 3, 5, 10}, 2);
  CHECK(report.ks == std::vector<std::size_t>{1, 3, 5, 10});
  CHECK(report.accuracy.size() == 4);
  CHECK(report.validity.size() == 4);
  CHECK(report.examples == 3);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(report.accuracy[k] >= 0.0);
    CHECK(report.accuracy[k] <= 100.0);
    if (k) CHECK(report.accuracy[k] >= report.accuracy[k - 1]);
  }
  for (const auto& preds : report.predictions) {
    CHECK(preds.size() <= 10);
    for (const auto& p : preds)
      if (!p.valid) CHECK_FALSE(p.hit);
  }
  CHECK_THROWS(evaluate(ck, ds.examples, 3, {1, 5}));
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<int> hits(37, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS(parallel_for(5, 2, [](std::size_t i) {
    if (i == 3) throw std::runtime_error("boom");
  }));
}
