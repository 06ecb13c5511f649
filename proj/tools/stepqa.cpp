// Operator surface: prepare supervision/context caches, train the reader
// (optionally with the exposure-bias mitigation pipeline), run stepwise
// prediction, evaluate prediction files, and pretrain the single-hop
// generator and answerer on a simple-question corpus.
//
// Every command is driven by one JSON config file plus flag overrides, and
// is idempotent over unchanged inputs via content-hash cache keys.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stepqa/datamodel.hpp"
#include "stepqa/decomposer.hpp"
#include "stepqa/encoding.hpp"
#include "stepqa/filter.hpp"
#include "stepqa/filter_model.hpp"
#include "stepqa/metrics.hpp"
#include "stepqa/objective.hpp"
#include "stepqa/pipeline.hpp"
#include "stepqa/reader.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stepqa;

namespace {

struct RunConfig {
    std::string train_path;
    std::string dev_path;
    std::string format = "hotpot";
    std::string hyperlinks_path;

    objective::TrainingConfig training;
    pipeline::PipelineConfig pipe;

    std::string backend = "toy";  // toy | pretrained
    std::string backend_checkpoint;
    std::string generator = "stub";  // stub | pretrained
    std::string generator_checkpoint;
    std::string answerer = "stub";  // stub | pretrained
    std::string answerer_checkpoint;
    std::string filter_scorer = "overlap";  // overlap | neural
    std::string filter_checkpoint;
    int topk = 5;

    std::string out_dir = "out";
    bool bias_mitigation = false;
    int backend_max_len = 512;
    std::uint64_t backend_seed = 7;
};

RunConfig load_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError("config " + path.string() + ": " + e.what());
    }
    RunConfig cfg;
    if (doc.contains("dataset")) {
        const auto& d = doc["dataset"];
        cfg.train_path = d.value("train", "");
        cfg.dev_path = d.value("dev", "");
        cfg.format = d.value("format", "hotpot");
        cfg.hyperlinks_path = d.value("hyperlinks", "");
    }
    cfg.training = cfg.format == "twowiki" ? objective::twowiki_defaults()
                                           : objective::hotpot_defaults();
    if (doc.contains("training")) {
        const auto& t = doc["training"];
        cfg.training.max_hops = t.value("max_hops", cfg.training.max_hops);
        cfg.training.lambda1 = t.value("lambda1", cfg.training.lambda1);
        cfg.training.lambda2 = t.value("lambda2", cfg.training.lambda2);
        cfg.training.lambda3 = t.value("lambda3", cfg.training.lambda3);
        cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
        cfg.training.epochs = t.value("epochs", cfg.training.epochs);
        cfg.training.learning_rate = t.value("learning_rate", cfg.training.learning_rate);
        cfg.training.warmup_fraction = t.value("warmup_fraction", cfg.training.warmup_fraction);
        cfg.training.max_seq_len = t.value("max_seq_len", cfg.training.max_seq_len);
        cfg.training.seed = t.value("seed", cfg.training.seed);
    }
    if (doc.contains("pipeline")) {
        const auto& p = doc["pipeline"];
        cfg.pipe.support_threshold = p.value("support_threshold", cfg.pipe.support_threshold);
        cfg.pipe.end_threshold = p.value("end_threshold", cfg.pipe.end_threshold);
        cfg.pipe.max_answer_tokens = p.value("max_answer_tokens", cfg.pipe.max_answer_tokens);
        cfg.pipe.min_final_supports = p.value("min_final_supports", cfg.pipe.min_final_supports);
        cfg.pipe.ablate_intermediate = p.value("ablate_intermediate", false);
    }
    cfg.backend = doc.value("backend", cfg.backend);
    cfg.backend_checkpoint = doc.value("backend_checkpoint", "");
    cfg.generator = doc.value("generator", cfg.generator);
    cfg.generator_checkpoint = doc.value("generator_checkpoint", "");
    cfg.answerer = doc.value("answerer", cfg.answerer);
    cfg.answerer_checkpoint = doc.value("answerer_checkpoint", "");
    if (doc.contains("filter")) {
        cfg.filter_scorer = doc["filter"].value("scorer", cfg.filter_scorer);
        cfg.filter_checkpoint = doc["filter"].value("checkpoint", "");
        cfg.topk = doc["filter"].value("topk", cfg.topk);
    }
    cfg.out_dir = doc.value("out_dir", cfg.out_dir);
    cfg.bias_mitigation = doc.value("bias_mitigation", false);
    cfg.backend_max_len = doc.value("backend_max_len", cfg.backend_max_len);
    cfg.backend_seed = doc.value("backend_seed", cfg.backend_seed);
    return cfg;
}

// ---- cache layout ----

fs::path cache_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "cache"; }

std::string dataset_cache_key(const RunConfig& cfg, const std::string& split_path) {
    std::string material = read_file(split_path);
    material += "|format=" + cfg.format;
    material += "|K=" + std::to_string(cfg.training.max_hops);
    material += "|scorer=" + cfg.filter_scorer;
    material += "|topk=" + std::to_string(cfg.topk);
    if (!cfg.hyperlinks_path.empty()) {
        material += "|links=" + read_file(cfg.hyperlinks_path);
    }
    return to_hex(fnv1a64(material));
}

json supervision_to_json(const datamodel::HopSupervision& sup) {
    json per_hop = json::array();
    for (const auto& hop : sup.per_hop_sentence_labels) {
        json facts = json::array();
        for (const auto& [title, idx] : hop) {
            facts.push_back(json::array({title, idx}));
        }
        per_hop.push_back(std::move(facts));
    }
    json final_facts = json::array();
    for (const auto& [title, idx] : sup.final_labels) {
        final_facts.push_back(json::array({title, idx}));
    }
    return {{"max_hops", sup.max_hops},
            {"end_hop", sup.end_hop},
            {"end_labels", sup.end_labels},
            {"per_hop", std::move(per_hop)},
            {"final", std::move(final_facts)}};
}

datamodel::HopSupervision supervision_from_json(const json& j) {
    datamodel::HopSupervision sup;
    sup.max_hops = j.at("max_hops").get<int>();
    sup.end_hop = j.at("end_hop").get<int>();
    sup.end_labels = j.at("end_labels").get<std::vector<int>>();
    for (const auto& hop : j.at("per_hop")) {
        std::set<datamodel::SupportFact> facts;
        for (const auto& pair : hop) {
            facts.emplace(pair[0].get<std::string>(), pair[1].get<int>());
        }
        sup.per_hop_sentence_labels.push_back(std::move(facts));
    }
    for (const auto& pair : j.at("final")) {
        sup.final_labels.emplace(pair[0].get<std::string>(), pair[1].get<int>());
    }
    return sup;
}

std::unique_ptr<filter::RelevanceScorer> make_scorer(const RunConfig& cfg) {
    if (cfg.filter_scorer == "overlap") {
        return std::make_unique<filter::WordOverlapScorer>();
    }
    if (cfg.filter_scorer == "neural") {
        if (cfg.filter_checkpoint.empty()) {
            throw ContractError("filter.scorer=neural requires filter.checkpoint");
        }
        return std::make_unique<filter::NeuralParagraphScorer>(
            filter::NeuralParagraphScorer::load(cfg.filter_checkpoint));
    }
    throw ContractError("unknown filter scorer '" + cfg.filter_scorer + "'");
}

std::unique_ptr<decomposer::SubQuestionGenerator> make_generator(const RunConfig& cfg) {
    if (cfg.generator == "stub") {
        return std::make_unique<decomposer::StubGenerator>();
    }
    if (cfg.generator == "pretrained") {
        if (cfg.generator_checkpoint.empty()) {
            throw ContractError("generator=pretrained requires generator_checkpoint");
        }
        return std::make_unique<decomposer::NeuralGenerator>(
            decomposer::NeuralGenerator::load(cfg.generator_checkpoint));
    }
    throw ContractError("unknown generator '" + cfg.generator + "'");
}

std::unique_ptr<decomposer::SubAnswerer> make_answerer(const RunConfig& cfg) {
    if (cfg.answerer == "stub") {
        return std::make_unique<decomposer::StubAnswerer>();
    }
    if (cfg.answerer == "pretrained") {
        if (cfg.answerer_checkpoint.empty()) {
            throw ContractError("answerer=pretrained requires answerer_checkpoint");
        }
        return std::make_unique<decomposer::NeuralAnswerer>(
            decomposer::NeuralAnswerer::load(cfg.answerer_checkpoint));
    }
    throw ContractError("unknown answerer '" + cfg.answerer + "'");
}

struct SplitCache {
    std::vector<datamodel::MultiHopExample> examples;
    std::vector<datamodel::HopSupervision> supervision;
    std::vector<filter::RelevantContext> contexts;
};

// ---- prepare ----

int prepare_split(const RunConfig& cfg, const std::string& split, const std::string& path,
                  bool force) {
    const fs::path cache_file = cache_dir(cfg) / (split + ".json");
    const fs::path manifest_file = cache_dir(cfg) / "manifest.json";
    const std::string key = dataset_cache_key(cfg, path);
    json manifest = json::object();
    if (fs::exists(manifest_file)) {
        manifest = json::parse(read_file(manifest_file));
    }
    if (!force && fs::exists(cache_file) && manifest.value(split, "") == key) {
        std::cout << "prepare: " << split << " cache up to date (" << key << ")\n";
        return 0;
    }

    auto examples = datamodel::load_dataset(path, datamodel::parse_format(cfg.format));
    auto scorer = make_scorer(cfg);
    std::optional<filter::HyperlinkMap> links;
    if (!cfg.hyperlinks_path.empty()) {
        links = filter::load_hyperlinks(cfg.hyperlinks_path);
    }

    json records = json::array();
    std::vector<filter::RelevantContext> contexts;
    for (const auto& ex : examples) {
        auto sup = datamodel::derive_hop_labels(ex, cfg.training.max_hops);
        auto scores = filter::score_paragraphs(ex.question, ex.paragraphs, *scorer);
        filter::RelevantContext ctx =
            cfg.format == "twowiki"
                ? filter::select_topk(scores, ex.paragraphs, cfg.topk)
                : filter::select_hotpot(ex.question, ex.paragraphs, scores, links);
        json picked = json::array();
        for (const auto& p : ctx.paragraphs) {
            picked.push_back(p.source_index);
        }
        records.push_back(
            {{"id", ex.id}, {"picked", std::move(picked)}, {"supervision", supervision_to_json(sup)}});
        contexts.push_back(std::move(ctx));
    }
    const double recall = filter::gold_recall(examples, contexts);
    write_file(cache_file, records.dump(1) + "\n");
    manifest[split] = key;
    write_file(manifest_file, manifest.dump(1) + "\n");
    std::cout << "prepare: " << split << " -> " << examples.size()
              << " examples, filter gold recall " << recall << "\n";
    return 0;
}

SplitCache load_split(const RunConfig& cfg, const std::string& split, const std::string& path) {
    const fs::path cache_file = cache_dir(cfg) / (split + ".json");
    if (!fs::exists(cache_file)) {
        throw Error("missing cache for split '" + split + "': run `stepqa prepare` first");
    }
    SplitCache out;
    auto examples = datamodel::load_dataset(path, datamodel::parse_format(cfg.format));
    std::map<std::string, const datamodel::MultiHopExample*> by_id;
    for (const auto& ex : examples) {
        by_id[ex.id] = &ex;
    }
    json records = json::parse(read_file(cache_file));
    for (const auto& rec : records) {
        const std::string id = rec.at("id").get<std::string>();
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw ValidationError("cache names unknown example " + id + "; re-run prepare");
        }
        const auto& ex = *it->second;
        std::vector<datamodel::Paragraph> picked;
        for (const auto& source_index : rec.at("picked")) {
            const int want = source_index.get<int>();
            for (const auto& p : ex.paragraphs) {
                if (p.source_index == want) {
                    picked.push_back(p);
                    break;
                }
            }
        }
        out.examples.push_back(ex);
        out.supervision.push_back(supervision_from_json(rec.at("supervision")));
        out.contexts.push_back(filter::RelevantContext::from_paragraphs(std::move(picked)));
    }
    return out;
}

// ---- train ----

std::vector<objective::PreparedExample> assemble_records(
    const SplitCache& split, const decomposer::SubQuestionGenerator& generator,
    const decomposer::SubAnswerer& answerer,
    const std::map<std::string, std::vector<std::set<datamodel::SupportFact>>>* repredicted) {
    std::vector<objective::PreparedExample> records;
    for (std::size_t i = 0; i < split.examples.size(); ++i) {
        objective::PreparedExample rec;
        rec.example = split.examples[i];
        rec.supervision = split.supervision[i];
        rec.context = split.contexts[i];
        const std::vector<std::set<datamodel::SupportFact>>* hop_supports =
            &rec.supervision.per_hop_sentence_labels;
        if (repredicted != nullptr) {
            auto it = repredicted->find(rec.example.id);
            if (it != repredicted->end()) {
                hop_supports = &it->second;
            }
        }
        rec.teacher_qa =
            objective::build_teacher_qa(rec.example, rec.context, *hop_supports,
                                        rec.supervision.end_hop, generator, answerer);
        records.push_back(std::move(rec));
    }
    return records;
}

nn::Vocabulary build_reader_vocab(const std::vector<objective::PreparedExample>& records,
                                  int max_hops) {
    nn::Vocabulary vocab;
    vocab.add(encoding::kCls);
    vocab.add(encoding::kSep);
    vocab.add(encoding::kSent);
    vocab.add(encoding::kSub);
    vocab.add(encoding::kBdg);
    for (int k = 1; k <= max_hops; ++k) {
        vocab.add(encoding::hop_token(k));
    }
    vocab.add(encoding::kYes);
    vocab.add(encoding::kNo);
    for (const auto& rec : records) {
        for (const auto& t : text::tokenize(rec.example.question)) {
            vocab.add(t);
        }
        for (const auto& p : rec.context.paragraphs) {
            for (const auto& s : p.sentences) {
                for (const auto& t : text::tokenize(s)) {
                    vocab.add(t);
                }
            }
        }
        for (const auto& sub : rec.teacher_qa) {
            for (const auto& t : text::tokenize(sub.question)) {
                vocab.add(t);
            }
            for (const auto& t : text::tokenize(sub.answer)) {
                vocab.add(t);
            }
        }
    }
    return vocab;
}

reader::Reader make_reader(const RunConfig& cfg, nn::Vocabulary vocab, std::uint64_t seed_shift) {
    const std::string hash = encoding::manifest_hash(cfg.training.max_hops);
    if (cfg.backend == "pretrained") {
        if (cfg.backend_checkpoint.empty()) {
            throw ContractError("backend=pretrained requires backend_checkpoint");
        }
        return reader::Reader::load(cfg.backend_checkpoint);
    }
    nn::TransformerConfig backbone = reader::TinyEncoderBackend::make_config(
        vocab.size(), cfg.backend_max_len, cfg.backend_seed + seed_shift);
    return reader::Reader(std::make_unique<reader::TinyEncoderBackend>(backbone),
                          std::move(vocab), hash);
}

int cmd_train(const RunConfig& cfg, bool resume) {
    SplitCache split = load_split(cfg, "train", cfg.train_path);
    auto generator = make_generator(cfg);
    auto answerer = make_answerer(cfg);
    const fs::path out(cfg.out_dir);

    std::map<std::string, std::vector<std::set<datamodel::SupportFact>>> repredicted;
    bool use_repredicted = false;
    if (cfg.bias_mitigation) {
        std::cout << "train: bias mitigation phase 1 (separate intermediate reader)\n";
        auto gold_records = assemble_records(split, *generator, *answerer, nullptr);
        nn::Vocabulary sep_vocab = build_reader_vocab(gold_records, cfg.training.max_hops);
        reader::Reader separate = make_reader(cfg, std::move(sep_vocab), /*seed_shift=*/101);
        objective::train(gold_records, cfg.training, separate,
                         objective::TrainMode::intermediate_only);
        separate.save(out / "separate_reader");
        repredicted = objective::repredict_supports(gold_records, separate, *generator, *answerer,
                                                    cfg.training, cfg.pipe.support_threshold);
        json rep = json::object();
        for (const auto& [id, hops] : repredicted) {
            json hop_arr = json::array();
            for (const auto& hop : hops) {
                json facts = json::array();
                for (const auto& [title, idx] : hop) {
                    facts.push_back(json::array({title, idx}));
                }
                hop_arr.push_back(std::move(facts));
            }
            rep[id] = std::move(hop_arr);
        }
        write_file(cache_dir(cfg) / "repredicted.json", rep.dump(1) + "\n");

        auto pairs = objective::build_qg_augmentation(repredicted, gold_records, *generator);
        json pair_doc = json::array();
        for (const auto& [input, target] : pairs) {
            pair_doc.push_back({{"input", input}, {"target", target}});
        }
        write_file(cache_dir(cfg) / "qg_augmentation.json", pair_doc.dump(1) + "\n");
        std::cout << "train: wrote " << pairs.size() << " generator-repair pairs\n";
        if (cfg.generator == "pretrained") {
            auto tuned = decomposer::NeuralGenerator::load(cfg.generator_checkpoint);
            nn::Seq2SeqFitOptions opt;
            opt.epochs = 5;
            tuned.fit(pairs, opt);
            tuned.save(out / "generator_tuned");
            generator = std::make_unique<decomposer::NeuralGenerator>(std::move(tuned));
            std::cout << "train: generator fine-tuned on repair pairs\n";
        }
        use_repredicted = true;
    }

    auto records = assemble_records(split, *generator, *answerer,
                                    use_repredicted ? &repredicted : nullptr);
    objective::TrainingConfig train_cfg = cfg.training;
    if (cfg.pipe.ablate_intermediate) {
        // Single-shot ablation: no message history, no intermediate losses.
        for (auto& rec : records) {
            rec.teacher_qa.clear();
        }
        train_cfg.lambda1 = 0.0;
        train_cfg.lambda2 = 0.0;
        std::cout << "train: intermediate hops ablated (single-shot reader)\n";
    }
    // Persist the per-hop (supports, sub-question, sub-answer) triples
    // actually used to build the training inputs.
    json qa_cache = json::object();
    for (const auto& rec : records) {
        const auto* hop_supports = &rec.supervision.per_hop_sentence_labels;
        if (use_repredicted) {
            auto it = repredicted.find(rec.example.id);
            if (it != repredicted.end()) {
                hop_supports = &it->second;
            }
        }
        json chain = json::array();
        for (const auto& sub : rec.teacher_qa) {
            json facts = json::array();
            const auto hop_index = static_cast<std::size_t>(sub.hop - 1);
            if (hop_index < hop_supports->size()) {
                for (const auto& [title, idx] : (*hop_supports)[hop_index]) {
                    facts.push_back(json::array({title, idx}));
                }
            }
            chain.push_back({{"hop", sub.hop},
                             {"supports", std::move(facts)},
                             {"q", sub.question},
                             {"a", sub.answer}});
        }
        qa_cache[rec.example.id] = std::move(chain);
    }
    write_file(cache_dir(cfg) / "train_qa.json", qa_cache.dump(1) + "\n");

    const fs::path ckpt = out / "checkpoint";
    std::optional<reader::Reader> rdr;
    if (resume && fs::exists(ckpt / "config.json")) {
        rdr.emplace(reader::Reader::load(ckpt));
        std::cout << "train: resuming from step " << reader::Reader::saved_step(ckpt) << "\n";
    } else {
        nn::Vocabulary vocab = build_reader_vocab(records, cfg.training.max_hops);
        rdr.emplace(make_reader(cfg, std::move(vocab), 0));
    }
    nn::Adam adam(rdr->parameters());
    if (resume && fs::exists(ckpt / "optim.bin")) {
        std::ifstream in(ckpt / "optim.bin", std::ios::binary);
        adam.load(in);
        adam.set_step_count(reader::Reader::saved_step(ckpt));
    }
    std::ofstream loss_log(out / "loss_log.jsonl", resume ? std::ios::app : std::ios::trunc);
    auto stats = objective::train(records, train_cfg, *rdr, objective::TrainMode::full,
                                  &loss_log, &adam);
    rdr->save(ckpt, stats.steps, &adam);
    std::cout << "train: " << stats.steps << " steps, final loss " << stats.final_loss
              << ", checkpoint at " << ckpt.string() << "\n";
    if (stats.skipped_span_labels > 0) {
        std::cout << "train: span label not locatable for " << stats.skipped_span_labels
                  << " example(s); span loss skipped there\n";
    }
    return 0;
}

// ---- predict ----

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint, const std::string& split) {
    const std::string path = split == "train" ? cfg.train_path : cfg.dev_path;
    if (path.empty()) {
        throw ContractError("predict: dataset path for split '" + split + "' is not configured");
    }
    SplitCache data = load_split(cfg, split, path);
    reader::Reader rdr = reader::Reader::load(checkpoint);
    auto generator = make_generator(cfg);
    auto answerer = make_answerer(cfg);

    std::vector<pipeline::Prediction> predictions;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        try {
            predictions.push_back(pipeline::run_stepwise(data.examples[i], data.contexts[i], rdr,
                                                         *generator, *answerer, cfg.training,
                                                         cfg.pipe));
        } catch (const Error& e) {
            ++failures;
            std::cerr << "predict: " << e.what() << "\n";
        }
    }
    const fs::path out(cfg.out_dir);
    pipeline::write_predictions(out / "predictions.json", predictions);
    pipeline::write_traces(out / "traces.json", predictions);
    std::cout << "predict: wrote " << predictions.size() << " predictions ("
              << failures << " failures) to " << (out / "predictions.json").string() << "\n";
    return failures == 0 ? 0 : 2;
}

// ---- eval ----

int cmd_eval(const std::string& pred_path, const std::string& gold_path,
             const std::string& buckets_path, bool bucket_by_type,
             const std::string& report_path) {
    auto predictions = pipeline::read_predictions(pred_path);
    auto gold = datamodel::load_dataset(gold_path);
    std::map<std::string, std::string> buckets;
    if (!buckets_path.empty()) {
        json doc = json::parse(read_file(buckets_path));
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            buckets[it.key()] = it.value().get<std::string>();
        }
    } else if (bucket_by_type) {
        for (const auto& ex : gold) {
            if (ex.qtype) {
                buckets[ex.id] = *ex.qtype;
            }
        }
    }
    auto report = metrics::evaluate(predictions, gold, buckets);
    std::cout << metrics::render_report(report);
    if (!report_path.empty()) {
        write_file(report_path, report.to_json().dump(1) + "\n");
    }
    return 0;
}

// ---- pretraining ----

int cmd_pretrain_qg(const std::string& corpus_path, const std::string& out_dir, int epochs,
                    double lr, std::uint64_t seed) {
    auto corpus = decomposer::load_simple_corpus(corpus_path);
    auto pairs = decomposer::build_qg_pretraining(corpus);
    nn::TransformerConfig cfg;
    cfg.width = 64;
    cfg.heads = 4;
    cfg.ffn = 256;
    cfg.layers = 2;
    cfg.max_len = 128;
    cfg.seed = seed;
    auto generator = decomposer::NeuralGenerator::for_corpus(pairs, cfg);
    nn::Seq2SeqFitOptions opt;
    opt.epochs = epochs;
    opt.learning_rate = lr;
    opt.seed = seed;
    const double loss = generator.fit(pairs, opt);
    generator.save(out_dir);
    std::cout << "pretrain-qg: " << pairs.size() << " pairs, final loss " << loss
              << ", saved to " << out_dir << "\n";
    return 0;
}

int cmd_pretrain_qa(const std::string& corpus_path, const std::string& out_dir, int epochs,
                    double lr, std::uint64_t seed) {
    auto corpus = decomposer::load_simple_corpus(corpus_path);
    nn::TransformerConfig cfg;
    cfg.width = 64;
    cfg.heads = 4;
    cfg.ffn = 256;
    cfg.layers = 2;
    cfg.max_len = 128;
    cfg.seed = seed;
    decomposer::NeuralAnswerer answerer(decomposer::NeuralAnswerer::build_vocab(corpus), cfg);
    const double loss = answerer.fit(corpus, epochs, lr, 8, seed);
    answerer.save(out_dir);
    std::cout << "pretrain-qa: " << corpus.size() << " records, final loss " << loss
              << ", saved to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stepwise multi-hop question answering"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool have_seed = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration")->required();
        cmd->add_option("--out", out_override, "override the configured output directory");
        cmd->add_option("--seed", seed_override, "override the training seed")
            ->each([&](const std::string&) { have_seed = true; });
    };

    auto* prepare = app.add_subcommand("prepare", "derive supervision and context caches");
    bool force = false;
    add_common(prepare);
    prepare->add_flag("--force", force, "rebuild caches even when up to date");

    auto* train = app.add_subcommand("train", "train the unified reader");
    bool resume = false;
    bool bias_flag = false;
    std::string backend_flag;
    add_common(train);
    train->add_flag("--resume", resume, "continue from the saved checkpoint");
    train->add_flag("--bias-mitigation", bias_flag, "enable the exposure-bias pipeline");
    train->add_option("--backend", backend_flag, "override backend selector (toy|pretrained)");

    auto* predict = app.add_subcommand("predict", "run stepwise inference");
    std::string checkpoint;
    std::string split = "dev";
    add_common(predict);
    predict->add_option("--checkpoint", checkpoint, "checkpoint directory (default <out>/checkpoint)");
    predict->add_option("--split", split, "dataset split to predict (train|dev)");

    auto* eval = app.add_subcommand("eval", "score a prediction file");
    std::string pred_path;
    std::string gold_path;
    std::string buckets_path;
    std::string report_path;
    bool bucket_by_type = false;
    eval->add_option("--pred", pred_path, "prediction file")->required();
    eval->add_option("--gold", gold_path, "gold dataset file")->required();
    eval->add_option("--buckets", buckets_path, "JSON map from example id to bucket label");
    eval->add_flag("--bucket-by-type", bucket_by_type, "bucket by the dataset's type field");
    eval->add_option("--report", report_path, "also write the report as JSON");

    auto* pretrain_qg = app.add_subcommand("pretrain-qg", "train the single-hop question generator");
    auto* pretrain_qa = app.add_subcommand("pretrain-qa", "train the single-hop answerer");
    std::string corpus_path;
    std::string model_out;
    int pt_epochs = 30;
    double pt_lr = 3e-3;
    std::uint64_t pt_seed = 13;
    for (auto* cmd : {pretrain_qg, pretrain_qa}) {
        cmd->add_option("--corpus", corpus_path, "simple-question corpus (JSON)")->required();
        cmd->add_option("--out", model_out, "output model directory")->required();
        cmd->add_option("--epochs", pt_epochs, "training epochs");
        cmd->add_option("--lr", pt_lr, "learning rate");
        cmd->add_option("--seed", pt_seed, "init/shuffle seed");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain_qg->parsed()) {
            return cmd_pretrain_qg(corpus_path, model_out, pt_epochs, pt_lr, pt_seed);
        }
        if (pretrain_qa->parsed()) {
            return cmd_pretrain_qa(corpus_path, model_out, pt_epochs, pt_lr, pt_seed);
        }
        if (eval->parsed()) {
            return cmd_eval(pred_path, gold_path, buckets_path, bucket_by_type, report_path);
        }

        RunConfig cfg = load_config(config_path);
        if (!out_override.empty()) {
            cfg.out_dir = out_override;
        }
        if (have_seed) {
            cfg.training.seed = seed_override;
        }
        if (prepare->parsed()) {
            fs::create_directories(cache_dir(cfg));
            encoding::write_token_manifest(fs::path(cfg.out_dir) / "tokens.json",
                                           cfg.training.max_hops);
            int rc = 0;
            if (!cfg.train_path.empty()) {
                rc |= prepare_split(cfg, "train", cfg.train_path, force);
            }
            if (!cfg.dev_path.empty()) {
                rc |= prepare_split(cfg, "dev", cfg.dev_path, force);
            }
            if (cfg.train_path.empty() && cfg.dev_path.empty()) {
                throw ContractError("prepare: no dataset paths configured");
            }
            return rc;
        }
        if (train->parsed()) {
            if (bias_flag) {
                cfg.bias_mitigation = true;
            }
            if (!backend_flag.empty()) {
                cfg.backend = backend_flag;
            }
            return cmd_train(cfg, resume);
        }
        if (predict->parsed()) {
            if (checkpoint.empty()) {
                checkpoint = (fs::path(cfg.out_dir) / "checkpoint").string();
            }
            return cmd_predict(cfg, checkpoint, split);
        }
    } catch (const std::exception& e) {
        std::cerr << "stepqa: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
