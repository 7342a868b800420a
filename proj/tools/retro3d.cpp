#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "retro3d/pipeline.hpp"

using namespace retro3d;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string device = "none";
};

pipeline::RunConfig run_config(const Globals& g) {
  pipeline::RunConfig c;
  if (!g.config.empty()) c = pipeline::load_run_config(g.config);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::optional<conformer::Conformer> find_conformer(const std::string& file, const std::string& smiles,
                                                   const chem::MolGraph& graph) {
  if (file.empty()) return std::nullopt;
  auto index = conformer::load_jsonl(file);
  auto it = index.find(smiles);
  if (it == index.end() && index.size() == 1) it = index.begin();
  if (it == index.end()) throw std::runtime_error("no conformer for " + smiles + " in " + file);
  return conformer::load_conformer(it->second, graph);
}

void print_report(const pipeline::EvalReport& r) {
  std::cout << "examples " << r.examples << '\n';
  std::cout << std::left << std::setw(10) << "metric";
  for (auto k : r.ks) std::cout << std::right << std::setw(8) << ("k=" + std::to_string(k));
  std::cout << '\n' << std::fixed << std::setprecision(1);
  std::cout << std::left << std::setw(10) << "top-k acc";
  for (double a : r.accuracy) std::cout << std::right << std::setw(8) << a;
  std::cout << '\n' << std::left << std::setw(10) << "validity";
  for (double v : r.validity) std::cout << std::right << std::setw(8) << v;
  std::cout << '\n';
}

void write_matrix(const fs::path& path, const Tensor& t) {
  std::ofstream out(path);
  out << std::setprecision(9);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) out << (c ? "," : "") << t.at(r, c);
    out << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retro3d: template-free retrosynthesis with 3D-aware attention"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Overrides the configured seed");
  app.add_option("--device", g.device, "Compute device; only 'none' (CPU) is supported");

  // prep
  auto* prep = app.add_subcommand("prep", "Filter and assemble reactions, report rejections");
  std::string prep_in, prep_out, prep_conf, prep_vocab;
  std::string prep_missing = "skip";
  bool prep_classes = false;
  prep->add_option("reactions", prep_in, "Reaction file")->required();
  prep->add_option("-o,--out", prep_out, "Output directory")->required();
  prep->add_option("--conformers", prep_conf, "Conformer JSONL");
  prep->add_option("--vocab", prep_vocab, "Existing vocabulary (built when absent)");
  prep->add_option("--on-missing-conformer", prep_missing, "skip or zero");
  prep->add_flag("--class-tokens", prep_classes, "Prepend the reaction class token");

  // vocab
  auto* vocab_cmd = app.add_subcommand("vocab", "Build a vocabulary");
  std::vector<std::string> vocab_files;
  std::string vocab_out;
  bool vocab_classes = false;
  vocab_cmd->add_option("files", vocab_files, "Reaction files")->required();
  vocab_cmd->add_option("-o,--out", vocab_out, "Vocabulary file")->required();
  vocab_cmd->add_flag("--class-tokens", vocab_classes, "Include reaction class tokens");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string train_out;
  std::size_t train_steps = 0;
  bool quiet = false;
  train_cmd->add_option("--out-dir", train_out, "Overrides the configured output directory");
  train_cmd->add_option("--max-steps", train_steps, "Overrides the configured step limit");
  train_cmd->add_flag("-q,--quiet", quiet, "No progress output");

  // average
  auto* avg_cmd = app.add_subcommand("average", "Average checkpoints parameter-wise");
  std::vector<std::string> avg_in;
  std::string avg_out;
  avg_cmd->add_option("checkpoints", avg_in, "Checkpoints")->required();
  avg_cmd->add_option("-o,--out", avg_out, "Output checkpoint")->required();

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "Top-k reactants for one product");
  std::string pred_ckpt, pred_smiles, pred_conf;
  std::size_t pred_beam = 10, pred_k = 10;
  std::optional<int> pred_class;
  pred_cmd->add_option("--checkpoint", pred_ckpt, "Checkpoint")->required();
  pred_cmd->add_option("--smiles", pred_smiles, "Product SMILES")->required();
  pred_cmd->add_option("--conformers", pred_conf, "Conformer JSONL holding the product");
  pred_cmd->add_option("--beam", pred_beam, "Beam width");
  pred_cmd->add_option("-k", pred_k, "Candidates to print");
  pred_cmd->add_option("--class", pred_class, "Reaction class");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Top-k accuracy and validity on a reaction file");
  std::string eval_ckpt, eval_file, eval_conf, eval_dump, eval_ks;
  std::optional<std::size_t> eval_beam;
  std::size_t eval_limit = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--test", eval_file, "Reaction file (default: configured test set)");
  eval_cmd->add_option("--conformers", eval_conf, "Conformer JSONL (default: configured)");
  eval_cmd->add_option("--beam", eval_beam, "Beam width");
  eval_cmd->add_option("--ks", eval_ks, "Comma-separated k values");
  eval_cmd->add_option("--limit", eval_limit, "Evaluate only the first N examples");
  eval_cmd->add_option("--dump", eval_dump, "Per-example predictions (TSV)");

  // dump-attention
  auto* dump_cmd = app.add_subcommand("dump-attention", "Write attention maps as CSV, one file per layer and head");
  std::string dump_ckpt, dump_smiles, dump_conf, dump_out;
  dump_cmd->add_option("--checkpoint", dump_ckpt, "Checkpoint")->required();
  dump_cmd->add_option("--smiles", dump_smiles, "Product SMILES")->required();
  dump_cmd->add_option("--conformers", dump_conf, "Conformer JSONL holding the product");
  dump_cmd->add_option("-o,--out", dump_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (g.device != "none" && g.device != "cpu") throw UsageError("unsupported device '" + g.device + "'");

    if (*prep) {
      pipeline::RunConfig cfg = run_config(g);
      auto lines = pipeline::read_reactions(prep_in);
      pipeline::Vocab vocab = prep_vocab.empty() ? pipeline::build_vocab({prep_in}, prep_classes)
                                                 : pipeline::Vocab::load(prep_vocab);
      pipeline::ConformerIndex index;
      if (!prep_conf.empty()) index = conformer::load_jsonl(prep_conf);
      pipeline::AssembleOptions opts;
      opts.on_missing_conformer = pipeline::missing_conformer_from_string(prep_missing);
      opts.class_tokens = prep_classes;
      opts.max_length = cfg.model.max_length;
      auto ds = pipeline::load_dataset(lines, prep_conf.empty() ? nullptr : &index, vocab, opts);
      fs::create_directories(prep_out);
      vocab.save((fs::path(prep_out) / "vocab.txt").string());
      std::ofstream kept(fs::path(prep_out) / "kept.txt"), rejected(fs::path(prep_out) / "rejected.tsv"),
          cache(fs::path(prep_out) / "examples.jsonl");
      for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const auto& ex = ds.examples[i];
        kept << ds.lines[i].text << (ds.lines[i].klass ? "\t" + std::to_string(*ds.lines[i].klass) : "") << '\n';
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t r = 0; r < ex.input.sam.rows; ++r)
          for (std::size_t c = 0; c < ex.input.sam.cols; ++c)
            if (ex.input.sam.at(r, c)) pairs.emplace_back(r, c);
        cache << json{{"line", ex.line}, {"product", ex.product},     {"reactants", ex.reactants},
                      {"src", ex.input.src}, {"tgt", ex.input.tgt}, {"has_3d", ex.input.has_3d},
                      {"sam", pairs}}
                     .dump()
              << '\n';
      }
      for (const auto& [line, reason] : ds.rejected) rejected << line << '\t' << reason << '\n';
      std::cout << "kept " << ds.examples.size() << ", rejected " << ds.rejected.size() << ", vocabulary "
                << vocab.size() << '\n';
    } else if (*vocab_cmd) {
      auto v = pipeline::build_vocab(vocab_files, vocab_classes);
      v.save(vocab_out);
      std::cout << "vocabulary " << v.size() << " tokens\n";
    } else if (*train_cmd) {
      if (g.config.empty()) throw UsageError("train needs --config");
      pipeline::RunConfig cfg = run_config(g);
      if (!train_out.empty()) cfg.out_dir = train_out;
      if (train_steps) cfg.max_steps = train_steps;
      pipeline::TrainHooks hooks;
      if (!quiet) {
        hooks.on_log = [](const json& j) {
          if (j.contains("event")) {
            std::cerr << j.dump() << '\n';
          } else if (j.at("step").get<std::size_t>() % 50 == 0) {
            std::cerr << "step " << j.at("step") << " epoch " << j.at("epoch") << " loss " << j.at("loss").get<double>()
                      << " ce " << j.at("ce").get<double>() << '\n';
          }
        };
      }
      auto r = pipeline::train(cfg, hooks);
      std::cout << "steps " << r.steps << ", epochs " << r.epochs << ", best validation top-1 " << r.best_top1
                << ", stop: " << r.stop_reason << "\naveraged checkpoint " << r.averaged << '\n';
    } else if (*avg_cmd) {
      std::vector<model::Checkpoint> cks;
      for (const auto& p : avg_in) cks.push_back(model::load_checkpoint(p));
      auto avg = model::average_checkpoints(cks);
      avg.meta = cks.front().meta;
      avg.meta["averaged"] = avg_in;
      model::save_checkpoint(avg_out, avg);
      std::cout << "averaged " << cks.size() << " checkpoints into " << avg_out << '\n';
    } else if (*pred_cmd) {
      auto ck = model::load_checkpoint(pred_ckpt);
      auto vocab = pipeline::vocab_of(ck);
      auto graph = chem::parse(pred_smiles);
      auto conf = find_conformer(pred_conf, pred_smiles, graph);
      bool classes = ck.meta.value("class_tokens", false);
      auto input = pipeline::product_input(pred_smiles, conf ? &*conf : nullptr, vocab, pred_class, classes);
      auto preds = pipeline::predict(ck, input, pred_beam);
      std::cout << "rank\tscore\tvalid\tsmiles\n";
      for (std::size_t i = 0; i < std::min(pred_k, preds.size()); ++i)
        std::cout << i + 1 << '\t' << preds[i].score << '\t' << (preds[i].valid ? 1 : 0) << '\t' << preds[i].smiles
                  << '\n';
    } else if (*eval_cmd) {
      pipeline::RunConfig cfg = run_config(g);
      if (eval_file.empty()) eval_file = cfg.test;
      if (eval_conf.empty()) eval_conf = cfg.conformers;
      if (eval_file.empty()) throw UsageError("evaluate needs --test or a configured test set");
      std::vector<std::size_t> ks = cfg.ks;
      if (!eval_ks.empty()) {
        ks.clear();
        for (const auto& s : split_csv(eval_ks)) ks.push_back(std::stoul(s));
      }
      const std::size_t beam = eval_beam.value_or(std::max(cfg.eval_beam, *std::max_element(ks.begin(), ks.end())));
      if (beam < *std::max_element(ks.begin(), ks.end())) throw UsageError("beam must be at least max(k)");
      auto ck = model::load_checkpoint(eval_ckpt);
      auto vocab = pipeline::vocab_of(ck);
      pipeline::ConformerIndex index;
      if (!eval_conf.empty()) index = conformer::load_jsonl(eval_conf);
      pipeline::AssembleOptions opts;
      opts.on_missing_conformer = eval_conf.empty() ? pipeline::MissingConformer::Zero : cfg.on_missing_conformer;
      opts.class_tokens = ck.meta.value("class_tokens", false);
      opts.max_length = ck.config.max_length;
      auto lines = pipeline::read_reactions(eval_file);
      auto ds = pipeline::load_dataset(lines, eval_conf.empty() ? nullptr : &index, vocab, opts);
      if (eval_limit && ds.examples.size() > eval_limit) ds.examples.resize(eval_limit);
      auto report = pipeline::evaluate(ck, ds.examples, beam, ks);
      print_report(report);
      if (!eval_dump.empty()) {
        std::ofstream out(eval_dump);
        out << "example\trank\tsmiles\tscore\tvalid\thit\n";
        for (std::size_t e = 0; e < report.predictions.size(); ++e)
          for (std::size_t r = 0; r < report.predictions[e].size(); ++r) {
            const auto& p = report.predictions[e][r];
            out << e << '\t' << r + 1 << '\t' << p.smiles << '\t' << p.score << '\t' << p.valid << '\t' << p.hit
                << '\n';
          }
      }
    } else if (*dump_cmd) {
      auto ck = model::load_checkpoint(dump_ckpt);
      auto vocab = pipeline::vocab_of(ck);
      auto graph = chem::parse(dump_smiles);
      auto conf = find_conformer(dump_conf, dump_smiles, graph);
      auto input = pipeline::product_input(dump_smiles, conf ? &*conf : nullptr, vocab);
      model::ModelScorer scorer(ck.params, ck.config, input);
      auto best = model::greedy(scorer, ck.config.max_length - 1);
      std::vector<int> prefix{model::kBos};
      prefix.insert(prefix.end(), best.tokens.begin(), best.tokens.end());
      if (prefix.back() == model::kEos) prefix.pop_back();
      Tape tape(false);
      nn::Bound b(tape, ck.params);
      model::DropoutStream off(0, false);
      model::AttentionTrace trace;
      auto enc = model::encode(b, ck.config, input, off, &trace);
      model::decode(b, ck.config, prefix, enc.memory, off, &trace);
      fs::create_directories(dump_out);
      for (std::size_t l = 0; l < trace.encoder.size(); ++l)
        for (std::size_t h = 0; h < trace.encoder[l].size(); ++h)
          write_matrix(fs::path(dump_out) / ("encoder_l" + std::to_string(l) + "_h" + std::to_string(h) + ".csv"),
                       trace.encoder[l][h]);
      for (std::size_t l = 0; l < trace.cross.size(); ++l)
        for (std::size_t h = 0; h < trace.cross[l].size(); ++h)
          write_matrix(fs::path(dump_out) / ("cross_l" + std::to_string(l) + "_h" + std::to_string(h) + ".csv"),
                       trace.cross[l][h]);
      auto text = vocab.decode(best.tokens);
      std::cout << "decoded " << (text ? *text : std::string("<invalid>")) << "\nwrote " << dump_out << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
