#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "genrelens/analysis.hpp"
#include "genrelens/checkpoint.hpp"
#include "genrelens/dataset.hpp"
#include "genrelens/errors.hpp"
#include "genrelens/model.hpp"
#include "genrelens/synth.hpp"
#include "genrelens/training.hpp"

namespace fs = std::filesystem;
using namespace genrelens;
using nlohmann::json;

namespace {

std::uint64_t seed_fallback() {
  if (const char* env = std::getenv("GENRELENS_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

model::ModelConfig load_model_config(const std::string& config_path,
                                     std::size_t dim) {
  model::ModelConfig config;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw DataError("cannot open config " + config_path);
    config = model::ModelConfig::from_json(json::parse(in));
  } else {
    config.dim = dim;
    config.classifier_hidden = dim;
    config.dropout = 0.0;
  }
  return config;
}

features::EmbeddingTable make_table(const std::string& path, std::size_t dim,
                                    std::uint64_t seed) {
  if (path.empty())
    return features::EmbeddingTable::deterministic_stub(dim, seed);
  return features::EmbeddingTable::load_file(path, dim);
}

struct CacheBundle {
  std::vector<training::ExtractedBook> train, test;
};

CacheBundle load_caches(const std::string& base) {
  CacheBundle c;
  c.train = training::load_feature_cache(base + ".train");
  c.test = training::load_feature_cache(base + ".test");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genrelens: text-design driven book genre classification"};
  app.require_subcommand(1);

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  struct {
    std::uint64_t seed = seed_fallback();
    int genres = 30, books_per_genre = 10, min_words = 4, max_words = 10;
    double test_fraction = 0.2;
    std::string out = "corpus.jsonl";
    std::string design_kinds = "char_color,bg_color,position";
  } sy;
  synth->add_option("--seed", sy.seed);
  synth->add_option("--genres", sy.genres);
  synth->add_option("--books-per-genre", sy.books_per_genre);
  synth->add_option("--min-words", sy.min_words);
  synth->add_option("--max-words", sy.max_words);
  synth->add_option("--test-fraction", sy.test_fraction);
  synth->add_option("--design-kinds", sy.design_kinds,
                    "comma-separated design kinds to plant");
  synth->add_option("--out", sy.out, "output JSONL path");

  // --- extract -------------------------------------------------------------
  auto* extract = app.add_subcommand("extract", "dataset -> feature cache");
  struct {
    std::uint64_t seed = seed_fallback();
    std::string data, out = "features";
    std::string embeddings, font_embeddings;
    std::size_t dim = 300, jobs = 1;
  } ex;
  extract->add_option("--data", ex.data)->required();
  extract->add_option("--out", ex.out, "cache prefix (writes .train/.test)");
  extract->add_option("--dim", ex.dim);
  extract->add_option("--seed", ex.seed);
  extract->add_option("--jobs", ex.jobs);
  extract->add_option("--embeddings", ex.embeddings,
                      "word embedding table file (default: deterministic stub)");
  extract->add_option("--font-embeddings", ex.font_embeddings,
                      "precomputed font embeddings keyed by record id");

  // --- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train the full model");
  struct {
    std::uint64_t seed = seed_fallback();
    std::string cache = "features", out = "model", config;
    std::size_t epochs = 30, batch = 64, dim = 300;
    double lr = 1e-5;
    bool verbose = false;
  } tr;
  train_cmd->add_option("--cache", tr.cache);
  train_cmd->add_option("--out", tr.out, "checkpoint prefix");
  train_cmd->add_option("--config", tr.config, "ModelConfig JSON file");
  train_cmd->add_option("--dim", tr.dim);
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch", tr.batch);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_flag("--verbose", tr.verbose);

  // --- eval ----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "top-N accuracy of a checkpoint");
  struct {
    std::string cache = "features", model = "model";
    std::string topn = "1,3";
  } ev;
  eval_cmd->add_option("--cache", ev.cache);
  eval_cmd->add_option("--model", ev.model);
  eval_cmd->add_option("--topn", ev.topn);

  // --- ablate --------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "run the ablation suite");
  struct {
    std::uint64_t seed = seed_fallback();
    std::string cache = "features", out = "ablation", config;
    std::string rows;
    std::size_t epochs = 30, batch = 64, dim = 300, jobs = 1;
    double lr = 1e-5;
  } ab;
  ablate->add_option("--cache", ab.cache);
  ablate->add_option("--out", ab.out, "output directory");
  ablate->add_option("--config", ab.config);
  ablate->add_option("--rows", ab.rows,
                     "comma-separated row names (default: the full table)");
  ablate->add_option("--dim", ab.dim);
  ablate->add_option("--epochs", ab.epochs);
  ablate->add_option("--batch", ab.batch);
  ablate->add_option("--lr", ab.lr);
  ablate->add_option("--seed", ab.seed);
  ablate->add_option("--jobs", ab.jobs);

  // --- rollout -------------------------------------------------------------
  auto* rollout = app.add_subcommand("rollout", "per-book attention rollout JSON");
  struct {
    std::string cache = "features", model = "model", out = "rollout";
    std::size_t limit = 0;
  } ro;
  rollout->add_option("--cache", ro.cache);
  rollout->add_option("--model", ro.model);
  rollout->add_option("--out", ro.out, "output directory");
  rollout->add_option("--limit", ro.limit, "max books (0 = all test books)");

  // --- analyze -------------------------------------------------------------
  auto* analyze = app.add_subcommand(
      "analyze", "confusion diff + per-genre feature variance");
  struct {
    std::string full, ablated, cache = "features", out = "analysis";
  } an;
  analyze->add_option("--full", an.full, "full-model confusion CSV")->required();
  analyze->add_option("--ablated", an.ablated, "ablated confusion CSV")->required();
  analyze->add_option("--cache", an.cache);
  analyze->add_option("--out", an.out, "output directory");

  // --- cluster -------------------------------------------------------------
  auto* cluster = app.add_subcommand("cluster", "k-means / elbow / report");
  struct {
    std::uint64_t seed = seed_fallback();
    std::string cache = "features", kind = "char_color", diff, out = "clusters.json";
    std::size_t k = 0;  // 0 = elbow
  } cl;
  cluster->add_option("--cache", cl.cache);
  cluster->add_option("--kind", cl.kind);
  cluster->add_option("--k", cl.k, "manual override (0 = elbow method)");
  cluster->add_option("--diff", cl.diff, "confusion-diff CSV for the report");
  cluster->add_option("--out", cl.out);
  cluster->add_option("--seed", cl.seed);

  // --- gradcheck -----------------------------------------------------------
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check");
  struct {
    std::uint64_t seed = seed_fallback();
    std::size_t dim = 12, heads = 2, words = 2;
    double tolerance = 1e-4;
  } gc;
  gradcheck->add_option("--dim", gc.dim);
  gradcheck->add_option("--heads", gc.heads);
  gradcheck->add_option("--words", gc.words);
  gradcheck->add_option("--tolerance", gc.tolerance);
  gradcheck->add_option("--seed", gc.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      data::SynthConfig config;
      config.seed = sy.seed;
      config.genres = sy.genres;
      config.books_per_genre = sy.books_per_genre;
      config.min_words = sy.min_words;
      config.max_words = sy.max_words;
      config.test_fraction = sy.test_fraction;
      config.design_kinds.clear();
      std::stringstream ss(sy.design_kinds);
      std::string kind;
      while (std::getline(ss, kind, ','))
        config.design_kinds.push_back(features::kind_from_name(kind));
      data::SynthResult result = data::synth_generate(config);
      std::string crop_dir = sy.out + "_crops";
      data::save_dataset(result.split, sy.out, crop_dir);
      std::ofstream mf(sy.out + ".manifest.json");
      mf << result.manifest.to_json().dump(2) << "\n";
      std::cout << "wrote " << result.split.train.size() << " train / "
                << result.split.test.size() << " test books to " << sy.out
                << "\n";
    } else if (*extract) {
      data::LoadReport report;
      data::DatasetSplit split = data::load_dataset(ex.data, &report);
      for (const auto& err : report.errors)
        std::cerr << ex.data << ":" << err.line << ": " << err.message << "\n";
      if (split.train.empty() && split.test.empty() && !report.errors.empty())
        throw DataError("no valid books in " + ex.data);
      auto table = make_table(ex.embeddings, ex.dim, ex.seed);
      auto config = features::ExtractorConfig::for_dim(ex.dim);
      features::PrecomputedEmbeddings fonts;
      if (!ex.font_embeddings.empty()) {
        fonts = features::PrecomputedEmbeddings::load_file(ex.font_embeddings,
                                                           ex.dim);
        config.font_provider = &fonts;
      }
      auto train_books =
          training::extract_books(split.train, table, config, ex.seed, ex.jobs);
      auto test_books =
          training::extract_books(split.test, table, config, ex.seed, ex.jobs);
      training::save_feature_cache(train_books, ex.out + ".train");
      training::save_feature_cache(test_books, ex.out + ".test");
      std::cout << "cached " << train_books.size() << " train / "
                << test_books.size() << " test books under " << ex.out << "\n";
    } else if (*train_cmd) {
      CacheBundle cache = load_caches(tr.cache);
      model::ModelConfig config = load_model_config(tr.config, tr.dim);
      model::HierModel net(config, tr.seed);
      training::TrainConfig tc{tr.batch, tr.lr, tr.epochs, tr.seed, tr.verbose};
      training::TrainResult result = training::train(net, cache.train,
                                                     cache.test, tc);
      model::save_model(net, tr.out);
      std::ofstream curve(tr.out + ".loss.csv");
      curve << "epoch,train_loss,test_top1\n";
      for (std::size_t i = 0; i < result.history.size(); ++i)
        curve << i << "," << result.history[i].train_loss << ","
              << result.history[i].test_top1 << "\n";
      std::cout << "best epoch " << result.best_epoch << ", test top-1 "
                << result.history[result.best_epoch].test_top1 << "\n";
    } else if (*eval_cmd) {
      CacheBundle cache = load_caches(ev.cache);
      auto net = model::load_model(ev.model);
      std::vector<std::size_t> ns;
      std::stringstream ss(ev.topn);
      std::string tok;
      while (std::getline(ss, tok, ',')) ns.push_back(std::stoul(tok));
      auto acc = training::evaluate_topn(*net, cache.test, ns);
      for (auto [n, a] : acc)
        std::cout << "top-" << n << " " << a * 100.0 << "%\n";
    } else if (*ablate) {
      CacheBundle cache = load_caches(ab.cache);
      model::ModelConfig config = load_model_config(ab.config, ab.dim);
      std::vector<training::AblationRow> rows;
      if (ab.rows.empty()) {
        rows = training::standard_rows();
      } else {
        std::stringstream ss(ab.rows);
        std::string name;
        while (std::getline(ss, name, ','))
          rows.push_back(training::row_from_name(name));
      }
      training::TrainConfig tc{ab.batch, ab.lr, ab.epochs, ab.seed, false};
      fs::create_directories(ab.out);
      auto results = training::run_ablation_suite(config, cache.train,
                                                  cache.test, tc, rows, ab.jobs);
      training::write_suite_csv(results, ab.out + "/suite.csv");
      for (const auto& r : results) {
        if (!r.ok) {
          std::cerr << "row " << r.name << " failed: " << r.error << "\n";
          continue;
        }
        analysis::write_confusion_csv(r.confusion,
                                      ab.out + "/confusion_" + r.name + ".csv");
      }
      std::cout << "wrote " << results.size() << " rows to " << ab.out << "\n";
    } else if (*rollout) {
      CacheBundle cache = load_caches(ro.cache);
      auto net = model::load_model(ro.model);
      fs::create_directories(ro.out);
      std::size_t limit = ro.limit ? ro.limit : cache.test.size();
      for (std::size_t i = 0; i < std::min(limit, cache.test.size()); ++i) {
        const auto& book = cache.test[i];
        model::AttentionTrace trace;
        net->classify(book.bundles, &trace);
        auto result = analysis::attention_rollout(trace);
        std::ofstream out(ro.out + "/" + book.book_id + ".json");
        out << analysis::rollout_to_json(result, book.word_ids).dump(2) << "\n";
      }
      std::cout << "wrote rollouts to " << ro.out << "\n";
    } else if (*analyze) {
      auto full = analysis::read_confusion_csv(an.full);
      auto ablated = analysis::read_confusion_csv(an.ablated);
      auto diff = analysis::confusion_diff(ablated, full);
      fs::create_directories(an.out);
      analysis::write_signed_csv(diff, an.out + "/confusion_diff.csv");
      CacheBundle cache = load_caches(an.cache);
      bool first = true;
      for (features::FeatureKind kind : features::kAllKinds) {
        if (kind == features::FeatureKind::height ||
            kind == features::FeatureKind::position ||
            kind == features::FeatureKind::semantic)
          continue;
        std::vector<std::vector<double>> feats;
        std::vector<int> genres;
        for (const auto& b : cache.test)
          for (const auto& bundle : b.bundles)
            if (bundle.has(kind)) {
              feats.push_back(bundle.vectors.at(kind));
              genres.push_back(b.genre);
            }
        if (feats.empty()) continue;
        auto rows = analysis::genre_feature_variance(feats, genres);
        analysis::write_variance_csv(rows, kind, an.out + "/variance.csv",
                                     !first);
        first = false;
      }
      std::cout << "wrote analysis to " << an.out << "\n";
    } else if (*cluster) {
      CacheBundle cache = load_caches(cl.cache);
      features::FeatureKind kind = features::kind_from_name(cl.kind);
      std::vector<std::vector<double>> points;
      std::vector<int> genres;
      std::vector<std::string> ids;
      for (const auto& b : cache.test)
        for (std::size_t w = 0; w < b.bundles.size(); ++w)
          if (b.bundles[w].has(kind)) {
            points.push_back(b.bundles[w].vectors.at(kind));
            genres.push_back(b.genre);
            ids.push_back(b.word_ids[w]);
          }
      if (points.empty()) throw DataError("no features of kind " + cl.kind);
      std::size_t k = cl.k ? cl.k
                           : analysis::elbow_select_k(points, cl.seed, 1, 10);
      auto clusters = analysis::kmeans_fit(points, k, cl.seed);
      json out;
      out["kind"] = cl.kind;
      out["k"] = k;
      out["inertia"] = clusters.inertia;
      if (!cl.diff.empty()) {
        analysis::SignedMatrix diff;
        auto full = analysis::read_confusion_csv(cl.diff);
        // The diff CSV is already signed; reuse the reader's cell parser.
        diff.classes = full.classes;
        diff.delta = full.counts;
        out["report"] = analysis::cluster_report_to_json(
            analysis::cluster_report(clusters, genres, ids, diff), kind);
      }
      std::ofstream f(cl.out);
      f << out.dump(2) << "\n";
      std::cout << "k=" << k << " inertia=" << clusters.inertia << "\n";
    } else if (*gradcheck) {
      model::ModelConfig config;
      config.dim = gc.dim;
      config.heads = gc.heads;
      config.classifier_hidden = gc.dim;
      config.dropout = 0.0;
      config.max_words = std::max<std::size_t>(gc.words, 2);
      model::HierModel net(config, gc.seed);

      std::mt19937_64 rng(gc.seed + 1);
      auto table = features::EmbeddingTable::deterministic_stub(gc.dim, gc.seed);
      std::vector<features::FeatureBundle> bundles;
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (std::size_t w = 0; w < gc.words; ++w) {
        features::FeatureBundle b;
        for (features::FeatureKind kind :
             {features::FeatureKind::semantic, features::FeatureKind::font_style,
              features::FeatureKind::char_color, features::FeatureKind::bg_color}) {
          std::vector<double> vec(gc.dim);
          for (auto& v : vec) v = unit(rng);
          b.vectors[kind] = vec;
          b.present.insert(kind);
        }
        b.height_raw = unit(rng);
        b.position_raw = {unit(rng), unit(rng)};
        b.present.insert(features::FeatureKind::height);
        b.present.insert(features::FeatureKind::position);
        bundles.push_back(std::move(b));
      }
      auto loss_fn = [&]() {
        return nn::cross_entropy(net.classify(bundles), {3});
      };
      auto report =
          nn::finite_difference_check(loss_fn, net.params().all(), 1e-5);
      std::cout << "max relative error " << report.max_rel_error << " over "
                << report.entries.size() << " parameter tensors\n";
      if (!report.passed(gc.tolerance)) {
        std::cerr << "gradient check FAILED (tolerance " << gc.tolerance << ")\n";
        return 2;
      }
    }
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
