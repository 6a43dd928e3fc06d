#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "clem/pipeline.hpp"

namespace {

using namespace clem;

PipelineConfig make_config(const std::string& config_path, std::uint64_t* seed_override,
                           int* threads_override, bool deterministic_flag) {
    PipelineConfig cfg =
        config_path.empty() ? PipelineConfig::defaults() : PipelineConfig::load(config_path);
    if (seed_override) cfg.seed = *seed_override;
    if (threads_override) cfg.threads = *threads_override;
    if (deterministic_flag) cfg.deterministic = true;
    cfg.finalize();
    return cfg;
}

std::vector<ModelKind> parse_kinds(const std::vector<std::string>& tags) {
    std::vector<ModelKind> kinds;
    if (tags.empty())
        return {ModelKind::RiskLogit, ModelKind::BowSvm, ModelKind::EmbedGbm,
                ModelKind::MlmTransformer};
    for (const auto& t : tags) kinds.push_back(model_kind_from_tag(t));
    return kinds;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"claims-narrative pretraining and hospitalization-risk toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    bool threads_set = false;
    bool deterministic = false;
    std::string out_path;
    app.add_option("--config", config_path, "pipeline config JSON");
    app.add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--threads", threads, "override the config thread count")
        ->each([&](const std::string&) { threads_set = true; });
    app.add_flag("--deterministic", deterministic, "force deterministic mode");
    app.add_option("--out", out_path, "override the primary output path");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus and cohort");
    auto* vocab_cmd = app.add_subcommand("build-vocab", "build the token vocabulary");
    auto* emb = app.add_subcommand("train-embeddings", "train CBOW code embeddings");
    auto* pre = app.add_subcommand("pretrain-mlm", "pretrain the masked-LM encoder");

    auto* train = app.add_subcommand("train", "train a classifier");
    std::string train_model;
    train->add_option("--model", train_model, "risk-logit | bow-svm | embed-gbm | mlm")->required();

    auto* eval = app.add_subcommand("evaluate", "evaluate trained models on the test split");
    std::vector<std::string> eval_models;
    eval->add_option("--model", eval_models, "models to evaluate (default: all)");

    auto* stab = app.add_subcommand("stability", "perturbation stability protocol");
    std::string stab_model;
    stab->add_option("--model", stab_model, "model to evaluate")->required();

    auto* sanity_cmd = app.add_subcommand("sanity", "high-risk-code sanity check");
    std::vector<std::string> sanity_models;
    sanity_cmd->add_option("--model", sanity_models, "models to score (default: all)");

    auto* explain = app.add_subcommand("explain", "LIME explanation for one test example");
    std::string explain_model;
    std::size_t explain_index = 0;
    int explain_samples = 0;
    explain->add_option("--model", explain_model, "model")->required();
    explain->add_option("--index", explain_index, "test-set example index")->required();
    explain->add_option("--n-samples", explain_samples, "LIME sample count override");

    auto* nearest = app.add_subcommand("nearest", "nearest same-kind tokens by cosine");
    std::string nearest_token;
    int nearest_k = 1;
    nearest->add_option("token", nearest_token, "query token, e.g. DX_R062")->required();
    nearest->add_option("--k", nearest_k, "neighbors to print");

    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig cfg = make_config(config_path, seed_set ? &seed : nullptr,
                                         threads_set ? &threads : nullptr, deterministic);
        if (gen->parsed()) {
            run_gen_data(cfg);
        } else if (vocab_cmd->parsed()) {
            run_build_vocab(cfg);
        } else if (emb->parsed()) {
            run_train_embeddings(cfg);
        } else if (pre->parsed()) {
            run_pretrain_mlm(cfg);
        } else if (train->parsed()) {
            run_train_model(cfg, model_kind_from_tag(train_model));
        } else if (eval->parsed()) {
            run_evaluate(cfg, parse_kinds(eval_models), out_path);
        } else if (stab->parsed()) {
            run_stability(cfg, model_kind_from_tag(stab_model), out_path);
        } else if (sanity_cmd->parsed()) {
            run_sanity(cfg, parse_kinds(sanity_models), out_path);
        } else if (explain->parsed()) {
            if (explain_samples > 0) cfg.lime.n_samples = explain_samples;
            const auto e = run_explain(cfg, model_kind_from_tag(explain_model), explain_index);
            nlohmann::json j;
            j["r2"] = e.r2;
            j["kernel_width"] = e.kernel_width;
            j["n_samples"] = e.n_samples;
            j["seed"] = e.seed;
            nlohmann::json imp = nlohmann::json::object();
            for (const auto& [token, value] : e.importance) imp[token] = value;
            j["importance"] = imp;
            const std::string text = j.dump(2) + "\n";
            if (out_path.empty()) std::cout << text;
            else {
                std::ofstream f(out_path, std::ios::binary);
                f << text;
            }
        } else if (nearest->parsed()) {
            for (const auto& [token, cos] : run_nearest(cfg, nearest_token, nearest_k))
                std::printf("%s\t%.6f\n", token.c_str(), cos);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
