#include "clem/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "clem/error.hpp"
#include "clem/rng.hpp"

namespace clem {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kCbowTag = 0xC0B0;
constexpr std::uint64_t kSplitTag = 0x5713;
constexpr std::uint64_t kSvmTag = 0x53F1;
constexpr std::uint64_t kGbmTag = 0x6B31;
constexpr std::uint64_t kMlmTag = 0x313A;
constexpr std::uint64_t kStabTag = 0x57AB;
constexpr std::uint64_t kSanityTag = 0x5A11;
constexpr std::uint64_t kTokenizeTag = 0x70C0;
constexpr std::uint64_t kExplainTag = 0xE891;

void require_file(const std::string& path, const char* hint) {
    if (!fs::exists(path))
        throw Error("missing artifact: " + path + " (" + hint + ")");
}

void ensure_parent_dir(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void log_line(const std::string& msg) { std::cerr << "[clem] " << msg << "\n"; }

void write_text(const std::string& path, const std::string& text) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

void write_json(const std::string& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

} // namespace

// --- config (de)serialization ---

namespace {

json profile_to_json(const ConditionProfile& p) {
    auto codes = [](const std::vector<MedicalCode>& v) {
        json a = json::array();
        for (const auto& c : v) a.push_back(c.value);
        return a;
    };
    return json{{"name", p.name},
                {"dx_pool", codes(p.dx_pool)},
                {"px_pool", codes(p.px_pool)},
                {"rx_pool", codes(p.rx_pool)},
                {"base_prevalence", p.base_prevalence},
                {"log_odds", p.log_odds}};
}

ConditionProfile profile_from_json(const json& j) {
    ConditionProfile p;
    p.name = j.at("name").get<std::string>();
    auto codes = [&](const char* key, CodeSystem system) {
        std::vector<MedicalCode> out;
        for (const auto& v : j.at(key)) out.push_back(parse_code(system, v.get<std::string>()));
        return out;
    };
    p.dx_pool = codes("dx_pool", CodeSystem::Diagnosis);
    p.px_pool = codes("px_pool", CodeSystem::Procedure);
    p.rx_pool = codes("rx_pool", CodeSystem::Medication);
    p.base_prevalence = j.at("base_prevalence").get<double>();
    p.log_odds = j.at("log_odds").get<double>();
    if (!(p.base_prevalence > 0.0 && p.base_prevalence < 1.0))
        throw ConfigError("profile '" + p.name + "': base_prevalence must lie in (0,1)");
    if (p.dx_pool.empty() && p.px_pool.empty() && p.rx_pool.empty())
        throw ConfigError("profile '" + p.name + "': empty code pools");
    return p;
}

template <typename T>
void get_if(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

} // namespace

PipelineConfig PipelineConfig::defaults() {
    PipelineConfig cfg;
    cfg.generator = GeneratorConfig::defaults();
    return cfg;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    PipelineConfig cfg = defaults();
    try {
        get_if(j, "seed", cfg.seed);
        get_if(j, "threads", cfg.threads);
        get_if(j, "deterministic", cfg.deterministic);
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            get_if(p, "pretrain_corpus", cfg.paths.pretrain_corpus);
            get_if(p, "cohort", cfg.paths.cohort);
            get_if(p, "vocab", cfg.paths.vocab);
            get_if(p, "embeddings", cfg.paths.embeddings);
            get_if(p, "risk_map", cfg.paths.risk_map);
            get_if(p, "models_dir", cfg.paths.models_dir);
            get_if(p, "reports_dir", cfg.paths.reports_dir);
        }
        if (j.contains("covid_codes")) {
            cfg.covid_codes.clear();
            for (const auto& c : j.at("covid_codes"))
                cfg.covid_codes.insert(parse_code(CodeSystem::Diagnosis, c.get<std::string>()).value);
        }
        get_if(j, "age_bucket_upper_bounds", cfg.age_bucket_upper_bounds);
        if (j.contains("generator")) {
            const auto& g = j.at("generator");
            get_if(g, "n_patients", cfg.generator.n_patients);
            get_if(g, "n_pretrain_claims", cfg.generator.n_pretrain_claims);
            get_if(g, "intercept", cfg.generator.intercept);
            get_if(g, "age_coeff", cfg.generator.age_coeff);
            get_if(g, "sex_coeff", cfg.generator.sex_coeff);
            get_if(g, "noise_code_rate", cfg.generator.noise_code_rate);
            get_if(g, "min_claims", cfg.generator.min_claims);
            get_if(g, "max_claims", cfg.generator.max_claims);
            get_if(g, "covid_dx", cfg.generator.covid_dx);
            if (g.contains("profiles")) {
                cfg.generator.profiles.clear();
                for (const auto& pj : g.at("profiles"))
                    cfg.generator.profiles.push_back(profile_from_json(pj));
            }
        }
        get_if(j, "vocab_min_count", cfg.vocab_min_count);
        if (j.contains("cbow")) {
            const auto& c = j.at("cbow");
            get_if(c, "dim", cfg.cbow.dim);
            get_if(c, "window", cfg.cbow.window);
            get_if(c, "negatives", cfg.cbow.negatives);
            get_if(c, "learning_rate", cfg.cbow.learning_rate);
            get_if(c, "epochs", cfg.cbow.epochs);
        }
        if (j.contains("split")) {
            get_if(j.at("split"), "train_fraction", cfg.split.train_fraction);
            get_if(j.at("split"), "stratify_by_label", cfg.split.stratify_by_label);
        }
        if (j.contains("risk_logit")) {
            get_if(j.at("risk_logit"), "l2", cfg.logit.l2);
            get_if(j.at("risk_logit"), "max_iter", cfg.logit.max_iter);
            get_if(j.at("risk_logit"), "tol", cfg.logit.tol);
        }
        if (j.contains("bow_svm")) {
            get_if(j.at("bow_svm"), "lambda", cfg.svm.lambda);
            get_if(j.at("bow_svm"), "epochs", cfg.svm.epochs);
            get_if(j.at("bow_svm"), "lr0", cfg.svm.lr0);
            get_if(j.at("bow_svm"), "calibration_fraction", cfg.svm.calibration_fraction);
        }
        if (j.contains("embed_gbm")) {
            const auto& g = j.at("embed_gbm");
            get_if(g, "n_trees", cfg.gbm.n_trees);
            get_if(g, "max_depth", cfg.gbm.max_depth);
            get_if(g, "learning_rate", cfg.gbm.learning_rate);
            get_if(g, "min_samples_leaf", cfg.gbm.min_samples_leaf);
            get_if(g, "subsample", cfg.gbm.subsample);
        }
        if (j.contains("transformer")) {
            const auto& t = j.at("transformer");
            get_if(t, "layers", cfg.transformer.layers);
            get_if(t, "heads", cfg.transformer.heads);
            get_if(t, "dim", cfg.transformer.dim);
            get_if(t, "ffn", cfg.transformer.ffn);
            get_if(t, "max_len", cfg.transformer.max_len);
            get_if(t, "mask_rate", cfg.transformer.mask_rate);
            get_if(t, "pretrain_lr", cfg.transformer.pretrain_lr);
            get_if(t, "finetune_lr", cfg.transformer.finetune_lr);
            get_if(t, "pretrain_epochs", cfg.transformer.pretrain_epochs);
            get_if(t, "finetune_epochs", cfg.transformer.finetune_epochs);
            get_if(t, "batch_size", cfg.transformer.batch_size);
            get_if(t, "val_fraction", cfg.transformer.val_fraction);
            get_if(t, "pretrain_max_sequences", cfg.transformer.pretrain_max_sequences);
            get_if(t, "finetune_max_examples", cfg.transformer.finetune_max_examples);
        }
        if (j.contains("lime")) {
            const auto& l = j.at("lime");
            get_if(l, "n_samples", cfg.lime.n_samples);
            get_if(l, "kernel_width_scale", cfg.lime.kernel_width_scale);
            get_if(l, "ridge_lambda", cfg.lime.ridge_lambda);
            get_if(l, "drop_probability", cfg.lime.drop_probability);
        }
        if (j.contains("stability")) get_if(j.at("stability"), "n_samples", cfg.stability.n_samples);
        if (j.contains("sanity")) get_if(j.at("sanity"), "n_variations", cfg.sanity.n_variations);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    cfg.finalize();
    return cfg;
}

void PipelineConfig::save(const std::string& path) const {
    json j;
    j["seed"] = seed;
    j["threads"] = threads;
    j["deterministic"] = deterministic;
    j["paths"] = {{"pretrain_corpus", paths.pretrain_corpus}, {"cohort", paths.cohort},
                  {"vocab", paths.vocab},                     {"embeddings", paths.embeddings},
                  {"risk_map", paths.risk_map},               {"models_dir", paths.models_dir},
                  {"reports_dir", paths.reports_dir}};
    j["covid_codes"] = covid_codes;
    j["age_bucket_upper_bounds"] = age_bucket_upper_bounds;
    json profiles = json::array();
    for (const auto& p : generator.profiles) profiles.push_back(profile_to_json(p));
    j["generator"] = {{"n_patients", generator.n_patients},
                      {"n_pretrain_claims", generator.n_pretrain_claims},
                      {"intercept", generator.intercept},
                      {"age_coeff", generator.age_coeff},
                      {"sex_coeff", generator.sex_coeff},
                      {"noise_code_rate", generator.noise_code_rate},
                      {"min_claims", generator.min_claims},
                      {"max_claims", generator.max_claims},
                      {"covid_dx", generator.covid_dx},
                      {"profiles", profiles}};
    j["vocab_min_count"] = vocab_min_count;
    j["cbow"] = {{"dim", cbow.dim},
                 {"window", cbow.window},
                 {"negatives", cbow.negatives},
                 {"learning_rate", cbow.learning_rate},
                 {"epochs", cbow.epochs}};
    j["split"] = {{"train_fraction", split.train_fraction},
                  {"stratify_by_label", split.stratify_by_label}};
    j["risk_logit"] = {{"l2", logit.l2}, {"max_iter", logit.max_iter}, {"tol", logit.tol}};
    j["bow_svm"] = {{"lambda", svm.lambda},
                    {"epochs", svm.epochs},
                    {"lr0", svm.lr0},
                    {"calibration_fraction", svm.calibration_fraction}};
    j["embed_gbm"] = {{"n_trees", gbm.n_trees},
                      {"max_depth", gbm.max_depth},
                      {"learning_rate", gbm.learning_rate},
                      {"min_samples_leaf", gbm.min_samples_leaf},
                      {"subsample", gbm.subsample}};
    j["transformer"] = {{"layers", transformer.layers},
                        {"heads", transformer.heads},
                        {"dim", transformer.dim},
                        {"ffn", transformer.ffn},
                        {"max_len", transformer.max_len},
                        {"mask_rate", transformer.mask_rate},
                        {"pretrain_lr", transformer.pretrain_lr},
                        {"finetune_lr", transformer.finetune_lr},
                        {"pretrain_epochs", transformer.pretrain_epochs},
                        {"finetune_epochs", transformer.finetune_epochs},
                        {"batch_size", transformer.batch_size},
                        {"val_fraction", transformer.val_fraction},
                        {"pretrain_max_sequences", transformer.pretrain_max_sequences},
                        {"finetune_max_examples", transformer.finetune_max_examples}};
    j["lime"] = {{"n_samples", lime.n_samples},
                 {"kernel_width_scale", lime.kernel_width_scale},
                 {"ridge_lambda", lime.ridge_lambda},
                 {"drop_probability", lime.drop_probability}};
    j["stability"] = {{"n_samples", stability.n_samples}};
    j["sanity"] = {{"n_variations", sanity.n_variations}};
    write_json(path, j);
}

void PipelineConfig::finalize() {
    generator.seed = seed;
    cbow.seed = mix_seed(seed, kCbowTag);
    cbow.threads = deterministic ? 1 : threads;
    split.seed = mix_seed(seed, kSplitTag);
    svm.seed = mix_seed(seed, kSvmTag);
    gbm.seed = mix_seed(seed, kGbmTag);
    gbm.threads = threads;
    transformer.seed = mix_seed(seed, kMlmTag);
    transformer.threads = threads;
    stability.seed = mix_seed(seed, kStabTag);
    stability.threads = threads;
    stability.lime = lime;
    sanity.seed = mix_seed(seed, kSanityTag);
    AgeBucketTable check(age_bucket_upper_bounds); // validates bounds
    (void)check;
}

// --- shared artifact loading ---

std::shared_ptr<const RiskFactorMap> load_risk_map(const PipelineConfig& cfg) {
    if (cfg.paths.risk_map.empty())
        return std::shared_ptr<const RiskFactorMap>(&default_risk_map(), [](const RiskFactorMap*) {});
    require_file(cfg.paths.risk_map, "risk factor map");
    return std::make_shared<RiskFactorMap>(RiskFactorMap::load(cfg.paths.risk_map));
}

ModelArtifacts load_artifacts(const PipelineConfig& cfg, bool need_vocab, bool need_table) {
    ModelArtifacts art;
    art.buckets = cfg.buckets();
    art.risk_map = load_risk_map(cfg);
    if (need_vocab) {
        require_file(cfg.paths.vocab, "run build-vocab first");
        art.vocab = std::make_shared<Vocabulary>(Vocabulary::load(cfg.paths.vocab));
    }
    if (need_table) {
        require_file(cfg.paths.embeddings, "run train-embeddings first");
        art.table = std::make_shared<EmbeddingTable>(EmbeddingTable::load(cfg.paths.embeddings));
        if (art.vocab && art.table->rows() != art.vocab->size())
            throw VersionError("embedding table rows do not match the vocabulary size");
    }
    return art;
}

std::string model_base_path(const PipelineConfig& cfg, ModelKind kind) {
    const char* name = "";
    switch (kind) {
        case ModelKind::RiskLogit: name = "risk_logit"; break;
        case ModelKind::BowSvm: name = "bow_svm"; break;
        case ModelKind::EmbedGbm: name = "embed_gbm"; break;
        case ModelKind::MlmTransformer: name = "mlm_classifier"; break;
    }
    return cfg.paths.models_dir + "/" + name;
}

CohortData load_cohort_split(const PipelineConfig& cfg) {
    require_file(cfg.paths.cohort, "run gen-data first");
    CohortData data;
    data.examples = load_labeled_cohort(cfg.paths.cohort, cfg.covid_codes, &data.stats);
    data.split = split_train_test(data.examples, cfg.split);
    if (data.stats.n_indeterminate > 0)
        log_line("cohort: " + std::to_string(data.stats.n_indeterminate) +
                 " indeterminate records excluded");
    return data;
}

std::vector<ClaimSequence> pretrain_sequences(const PipelineConfig& cfg, const Vocabulary& vocab) {
    require_file(cfg.paths.pretrain_corpus, "run gen-data first");
    const auto corpus = load_claims_corpus(cfg.paths.pretrain_corpus);
    const AgeBucketTable buckets = cfg.buckets();
    std::vector<ClaimSequence> seqs;
    std::uint64_t claim_counter = 0;
    for (const auto& h : corpus) {
        for (const auto& claim : h.claims) {
            seqs.push_back(tokenize_claim(claim, h.age_years, h.sex, vocab,
                                          mix_seed(cfg.seed, kTokenizeTag + claim_counter),
                                          buckets));
            ++claim_counter;
        }
    }
    return seqs;
}

// --- stages ---

void run_gen_data(const PipelineConfig& cfg) {
    log_line("generating pretraining corpus (" + std::to_string(cfg.generator.n_pretrain_claims) +
             " claims target)");
    ensure_parent_dir(cfg.paths.pretrain_corpus);
    save_claims_corpus(generate_pretrain_corpus(cfg.generator), cfg.paths.pretrain_corpus);
    log_line("generating labeled cohort (" + std::to_string(cfg.generator.n_patients) +
             " patients)");
    ensure_parent_dir(cfg.paths.cohort);
    save_claims_corpus(generate_labeled_cohort(cfg.generator), cfg.paths.cohort);
}

void run_build_vocab(const PipelineConfig& cfg) {
    require_file(cfg.paths.pretrain_corpus, "run gen-data first");
    const auto corpus = load_claims_corpus(cfg.paths.pretrain_corpus);
    const auto vocab = Vocabulary::build(corpus, cfg.vocab_min_count, cfg.buckets());
    ensure_parent_dir(cfg.paths.vocab);
    vocab.save(cfg.paths.vocab);
    log_line("vocabulary: " + std::to_string(vocab.size()) + " tokens");
}

void run_train_embeddings(const PipelineConfig& cfg) {
    require_file(cfg.paths.vocab, "run build-vocab first");
    const auto vocab = Vocabulary::load(cfg.paths.vocab);
    const auto seqs = pretrain_sequences(cfg, vocab);
    CbowTrainStats stats;
    const auto table = train_cbow(seqs, vocab, cfg.cbow, &stats);
    ensure_parent_dir(cfg.paths.embeddings);
    table.save(cfg.paths.embeddings);
    std::string losses;
    for (double l : stats.epoch_loss) losses += " " + std::to_string(l);
    log_line("cbow epochs done; mean loss per epoch:" + losses);
}

void run_pretrain_mlm(const PipelineConfig& cfg) {
    require_file(cfg.paths.vocab, "run build-vocab first");
    const auto vocab = Vocabulary::load(cfg.paths.vocab);
    const auto seqs = pretrain_sequences(cfg, vocab);
    MlmPretrainStats stats;
    const auto encoder = pretrain_mlm(seqs, vocab, cfg.transformer, &stats);
    fs::create_directories(cfg.paths.models_dir);
    save_encoder(encoder, cfg.paths.models_dir + "/mlm_encoder");
    std::string losses;
    for (double l : stats.epoch_loss) losses += " " + std::to_string(l);
    log_line("mlm pretraining done; mask fraction " + std::to_string(stats.mask_fraction) +
             "; epoch loss:" + losses);
}

void run_train_model(const PipelineConfig& cfg, ModelKind kind) {
    const auto data = load_cohort_split(cfg);
    fs::create_directories(cfg.paths.models_dir);
    const std::string base = model_base_path(cfg, kind);
    switch (kind) {
        case ModelKind::RiskLogit: {
            auto art = load_artifacts(cfg, false, false);
            TrainReport rep;
            auto model = RiskLogitModel::train(data.examples, data.split.train, *art.risk_map,
                                               art.buckets, cfg.logit, &rep);
            if (!rep.converged)
                log_line("risk-logit: gradient descent stopped before tolerance (" +
                         std::to_string(rep.iterations) + " iterations)");
            save_model(model, base);
            break;
        }
        case ModelKind::BowSvm: {
            auto art = load_artifacts(cfg, true, false);
            auto model = BowSvmModel::train(data.examples, data.split.train, art.vocab, cfg.svm);
            save_model(model, base);
            break;
        }
        case ModelKind::EmbedGbm: {
            auto art = load_artifacts(cfg, true, true);
            auto model = EmbedGbmModel::train(data.examples, data.split.train, art.vocab,
                                              art.table, art.buckets, cfg.gbm);
            save_model(model, base);
            break;
        }
        case ModelKind::MlmTransformer: {
            auto art = load_artifacts(cfg, true, false);
            require_file(cfg.paths.models_dir + "/mlm_encoder.json", "run pretrain-mlm first");
            auto encoder = load_encoder(cfg.paths.models_dir + "/mlm_encoder", *art.vocab);
            TransformerConfig tc = cfg.transformer;
            // geometry comes from the pretrained artifact
            tc.layers = encoder.config().layers;
            tc.heads = encoder.config().heads;
            tc.dim = encoder.config().dim;
            tc.ffn = encoder.config().ffn;
            tc.max_len = encoder.config().max_len;
            FinetuneStats stats;
            auto model = finetune_classifier(std::move(encoder), data.examples, data.split.train,
                                             art.vocab, art.buckets, tc, &stats);
            log_line("finetune best epoch: " + std::to_string(stats.best_epoch));
            save_model(model, base);
            break;
        }
    }
    log_line(std::string("trained ") + model_kind_tag(kind) + " -> " + base + ".{json,clmp}");
}

namespace {

std::unique_ptr<Classifier> load_model_for(const PipelineConfig& cfg, ModelKind kind) {
    const std::string base = model_base_path(cfg, kind);
    require_file(base + ".json", "train this model first");
    const bool needs_table = kind == ModelKind::EmbedGbm;
    const bool needs_vocab = kind != ModelKind::RiskLogit;
    auto art = load_artifacts(cfg, needs_vocab, needs_table);
    return load_model(base, art);
}

} // namespace

std::vector<EvaluateResult> run_evaluate(const PipelineConfig& cfg,
                                         const std::vector<ModelKind>& kinds,
                                         const std::string& out_path) {
    const auto data = load_cohort_split(cfg);
    std::vector<int> labels;
    labels.reserve(data.split.test.size());
    for (std::size_t i : data.split.test)
        labels.push_back(data.examples[i].label == Label::Hospitalized ? 1 : 0);

    std::vector<EvaluateResult> results;
    json jmodels = json::array();
    std::string text;
    for (ModelKind kind : kinds) {
        auto model = load_model_for(cfg, kind);
        std::vector<double> probs(data.split.test.size());
        const std::int64_t n = static_cast<std::int64_t>(data.split.test.size());
#pragma omp parallel for schedule(static) num_threads(std::max(1, cfg.threads))
        for (std::int64_t k = 0; k < n; ++k)
            probs[static_cast<std::size_t>(k)] =
                model->predict_proba(data.examples[data.split.test[static_cast<std::size_t>(k)]].history);

        EvaluateResult r;
        r.model = model_kind_tag(kind);
        r.metrics = compute_metrics(probs, labels);
        r.auc = auc_score(probs, labels);
        results.push_back(r);

        json jm;
        jm["model"] = r.model;
        jm["precision"] = r.metrics.precision ? json(*r.metrics.precision) : json(nullptr);
        jm["recall"] = r.metrics.recall ? json(*r.metrics.recall) : json(nullptr);
        jm["f1"] = r.metrics.f1 ? json(*r.metrics.f1) : json(nullptr);
        jm["accuracy"] = r.metrics.accuracy;
        jm["auc"] = r.auc;
        jm["counts"] = {{"tp", r.metrics.tp}, {"fp", r.metrics.fp}, {"tn", r.metrics.tn},
                        {"fn", r.metrics.fn}};
        jmodels.push_back(jm);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "  AUC=%.4f", r.auc);
        text += metrics_to_text(r.metrics, r.model) + buf + "\n";
    }
    json j;
    j["n_test"] = data.split.test.size();
    j["seed"] = cfg.seed;
    j["models"] = jmodels;
    const std::string base = out_path.empty() ? cfg.paths.reports_dir + "/metrics" : out_path;
    write_json(base + ".json", j);
    write_text(base + ".txt", text);
    std::cout << text;
    return results;
}

StabilityReport run_stability(const PipelineConfig& cfg, ModelKind kind,
                              const std::string& out_path) {
    const auto data = load_cohort_split(cfg);
    auto art = load_artifacts(cfg, true, true);
    auto model = load_model_for(cfg, kind);

    std::vector<PatientHistory> test_histories;
    test_histories.reserve(data.split.test.size());
    for (std::size_t i : data.split.test) test_histories.push_back(data.examples[i].history);

    Perturber perturber(art.table, art.vocab, cfg.threads);
    const auto report = stability_eval(*model, test_histories, perturber, cfg.stability);

    json j;
    j["model"] = model_kind_tag(kind);
    j["n_pairs"] = report.n_pairs;
    j["n_lime_pairs"] = report.n_lime_pairs;
    j["predict_prob_diff_mean"] = report.predict_prob_diff_mean;
    j["predict_agreement"] = report.predict_agreement;
    j["var_importance_mse"] = report.var_importance_mse;
    j["used_entire_set"] = report.used_entire_set;
    j["seed"] = cfg.seed;
    j["lime"] = {{"n_samples", cfg.lime.n_samples},
                 {"kernel_width_scale", cfg.lime.kernel_width_scale},
                 {"ridge_lambda", cfg.lime.ridge_lambda},
                 {"drop_probability", cfg.lime.drop_probability}};
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%-12s PredictProbDiffMean=%7.3f  PredictAgreement=%7.2f  VarImportanceMSE=%.3e  (n=%ld)\n",
                  model_kind_tag(kind), report.predict_prob_diff_mean, report.predict_agreement,
                  report.var_importance_mse, report.n_pairs);
    const std::string base = out_path.empty()
                                 ? cfg.paths.reports_dir + "/stability_" + model_kind_tag(kind)
                                 : out_path;
    write_json(base + ".json", j);
    write_text(base + ".txt", buf);
    std::cout << buf;
    return report;
}

SanityResult run_sanity(const PipelineConfig& cfg, const std::vector<ModelKind>& kinds,
                        const std::string& out_path) {
    auto art = load_artifacts(cfg, true, true);
    std::vector<std::unique_ptr<Classifier>> owned;
    std::vector<const Classifier*> models;
    for (ModelKind kind : kinds) {
        owned.push_back(load_model_for(cfg, kind));
        models.push_back(owned.back().get());
    }
    const auto result =
        highrisk_sanity_check(models, *art.risk_map, *art.table, *art.vocab, cfg.sanity, art.buckets);
    json j;
    j["n_variations"] = result.n_variations;
    j["seed"] = cfg.seed;
    json jm = json::array();
    for (const auto& m : result.models)
        jm.push_back({{"model", m.model},
                      {"mean_prob_high_risk", m.mean_prob_high_risk},
                      {"mean_prob_no_risk", m.mean_prob_no_risk},
                      {"fraction_high_predicted_positive", m.fraction_high_predicted_positive}});
    j["models"] = jm;
    j["risks_without_codes"] = result.risks_without_codes;
    const std::string base = out_path.empty() ? cfg.paths.reports_dir + "/sanity" : out_path;
    write_json(base + ".json", j);
    const std::string text = sanity_to_text(result);
    write_text(base + ".txt", text);
    std::cout << text;
    return result;
}

Explanation run_explain(const PipelineConfig& cfg, ModelKind kind, std::size_t test_index) {
    const auto data = load_cohort_split(cfg);
    if (test_index >= data.split.test.size())
        throw Error("explain: test index " + std::to_string(test_index) + " out of range (test set has " +
                    std::to_string(data.split.test.size()) + " examples)");
    auto model = load_model_for(cfg, kind);
    const auto& history = data.examples[data.split.test[test_index]].history;
    return lime_explain(*model, history, cfg.lime, mix_seed(cfg.seed, kExplainTag + test_index));
}

std::vector<std::pair<std::string, double>> run_nearest(const PipelineConfig& cfg,
                                                        const std::string& token, int k) {
    auto art = load_artifacts(cfg, true, true);
    const std::int32_t id = art.vocab->id(token);
    if (id == kUnkId && token != art.vocab->surface(kUnkId))
        throw Error("token not in vocabulary: " + token);
    if (!is_code_kind(art.vocab->kind(id))) throw Error("nearest expects a code token, got: " + token);

    std::vector<std::pair<std::string, double>> out;
    std::vector<std::pair<double, std::int32_t>> scored;
    for (std::int32_t c = 0; c < art.vocab->size(); ++c) {
        if (c == id || art.vocab->kind(c) != art.vocab->kind(id)) continue;
        scored.emplace_back(art.table->cosine(id, c), c);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i)
        out.emplace_back(art.vocab->surface(scored[static_cast<std::size_t>(i)].second),
                         scored[static_cast<std::size_t>(i)].first);
    return out;
}

} // namespace clem
