#include <CLI11.hpp>

#include "metor/pipeline.hpp"

// Command-line entry point. Exit codes: 0 success, 1 usage error, 2 data
// error, 3 numeric failure. Log verbosity comes from METOR_LOG
// (debug|info|warn|quiet).

namespace {

using namespace metor;

pipeline::ModelF load_model(const RunConfig& cfg, const std::string& ckpt,
                            const std::string& data_dir) {
    const Vocabulary vocab = corpus::load_vocabulary(data_dir);
    pipeline::ModelF model(cfg.model, vocab, cfg.train.seed);
    load_checkpoint(ckpt, model.params());
    return model;
}

int run(int argc, char** argv) {
    CLI::App app{"query-based video relation detection on synthetic moving-shapes corpora"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, ckpt_path, split_name = "all";
    std::string report_path, preds_dir, dump_preds_dir, out_path;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    gen->add_option("--config", config_path, "run configuration file")->required();
    gen->add_option("--out", out_dir, "output corpus directory")->required();

    auto* train = app.add_subcommand("train", "train a model end to end");
    train->add_option("--config", config_path, "run configuration file")->required();
    train->add_option("--data", data_dir, "corpus directory")->required();
    train->add_option("--out", out_dir, "output directory for checkpoints and logs")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or a prediction dump)");
    eval->add_option("--config", config_path, "run configuration file")->required();
    eval->add_option("--ckpt", ckpt_path, "checkpoint file (omit when scoring --preds)");
    eval->add_option("--data", data_dir, "corpus directory")->required();
    eval->add_option("--split", split_name, "category split: novel or all")
        ->check(CLI::IsMember({"novel", "all"}));
    eval->add_option("--report", report_path, "where to write the JSON report")->required();
    eval->add_option("--dump-preds", dump_preds_dir,
                     "also write per-video prediction dumps to this directory");
    eval->add_option("--preds", preds_dir,
                     "score an existing prediction-dump directory instead of a checkpoint");

    auto* analyze = app.add_subcommand("analyze-errors",
                                       "object/relationship error taxonomy and the "
                                       "relation-accuracy-given-correct-objects diagnostic");
    analyze->add_option("--config", config_path, "run configuration file")->required();
    analyze->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    analyze->add_option("--data", data_dir, "corpus directory")->required();
    analyze->add_option("--report", report_path, "where to write the JSON report")->required();

    auto* dump = app.add_subcommand("dump-features",
                                    "dump pre/post-enhancement pair features as JSONL");
    dump->add_option("--config", config_path, "run configuration file")->required();
    dump->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    dump->add_option("--data", data_dir, "corpus directory")->required();
    dump->add_option("--out", out_path, "output JSONL file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    const RunConfig cfg = load_config(config_path);

    if (gen->parsed()) {
        auto res = pipeline::gen_data(cfg, out_dir);
        log_info("gen-data: %zu train / %zu test videos, %ld relation instances, %s",
                 res.splits.train.size(), res.splits.test.size(), res.total_relations,
                 out_dir.c_str());
    } else if (train->parsed()) {
        auto res = pipeline::train(cfg, data_dir, out_dir);
        log_info("train: %ld steps, total %.4f -> %.4f, checkpoint %s", res.steps,
                 res.first_step_total, res.last_step_total, res.final_checkpoint.c_str());
    } else if (eval->parsed()) {
        const EvalSplit split = parse_split(split_name);
        pipeline::EvalOutputs outputs = [&] {
            if (!preds_dir.empty()) return pipeline::evaluate_dumps(cfg, data_dir, preds_dir, split);
            if (ckpt_path.empty())
                throw UsageError("eval requires --ckpt unless --preds is given");
            pipeline::ModelF model = load_model(cfg, ckpt_path, data_dir);
            return pipeline::evaluate(cfg, model, data_dir, split, dump_preds_dir);
        }();
        write_json_file(report_path, report_to_json(outputs.report));
        const auto& r = outputs.report;
        log_info("eval[%s]: mAP=%s R@50=%s R@100=%s mAP_o=%s (report %s)", r.split.c_str(),
                 r.map ? std::to_string(*r.map).c_str() : "undefined",
                 r.r50 ? std::to_string(*r.r50).c_str() : "undefined",
                 r.r100 ? std::to_string(*r.r100).c_str() : "undefined",
                 r.map_o ? std::to_string(*r.map_o).c_str() : "undefined",
                 report_path.c_str());
    } else if (analyze->parsed()) {
        pipeline::ModelF model = load_model(cfg, ckpt_path, data_dir);
        auto res = pipeline::analyze_errors(cfg, model, data_dir);
        json j;
        j["object_errors"] = res.counts.object_errors;
        j["relationship_errors"] = res.counts.relationship_errors;
        j["examined_false_positives"] = res.counts.examined_false_positives;
        j["oracle_relation_accuracy"] = res.oracle_relation_accuracy;
        j["oracle_pairs"] = res.oracle_pairs;
        write_json_file(report_path, j);
        log_info("analyze-errors: OE=%ld RE=%ld oracle-accuracy=%.4f (report %s)",
                 res.counts.object_errors, res.counts.relationship_errors,
                 res.oracle_relation_accuracy, report_path.c_str());
    } else if (dump->parsed()) {
        pipeline::ModelF model = load_model(cfg, ckpt_path, data_dir);
        const long records = pipeline::dump_features(cfg, model, data_dir, out_path);
        log_info("dump-features: %ld records -> %s", records, out_path.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const metor::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const metor::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const metor::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
