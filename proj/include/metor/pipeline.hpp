#pragma once

#include <filesystem>

#include "metor/config.hpp"
#include "metor/model.hpp"
#include "metor/optim.hpp"

// End-to-end orchestration behind the CLI subcommands: corpus generation,
// training with the milestone schedule, evaluation on the novel/all splits,
// error analysis and feature dumping. Everything here is deterministic in
// the configured seed.

namespace metor::pipeline {

namespace fs = std::filesystem;
using ModelF = Model<float>;

// --- corpus generation --------------------------------------------------------

struct GenResult {
    Vocabulary vocab;
    CorpusSplits splits;
    long total_relations = 0;
};

inline GenResult gen_data(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir + "/videos");
    const auto& gcfg = cfg.data.gen;
    Vocabulary vocab = synth::build_vocabulary(gcfg);
    std::vector<VideoSample> corpus =
        synth::generate_corpus(cfg.train.seed, gcfg, vocab, /*with_frames=*/true);
    const InstanceCounts counts = count_instances(vocab, corpus);
    vocab = split_vocabulary(vocab, counts, cfg.data.novel_fraction_obj,
                             cfg.data.novel_fraction_rel);

    GenResult res;
    res.vocab = vocab;
    const long train_count = std::max<long>(
        1, static_cast<long>(std::llround(cfg.data.train_fraction *
                                          static_cast<double>(corpus.size()))));
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto& video = corpus[i];
        write_json_file(corpus::annotation_path(out_dir, video.video_id),
                        annotations_to_json(video, vocab));
        save_frames(corpus::frames_path(out_dir, video.video_id), *video.frames);
        if (static_cast<long>(i) < train_count)
            res.splits.train.push_back(video.video_id);
        else
            res.splits.test.push_back(video.video_id);
        res.total_relations += static_cast<long>(video.gt_relations.size());
    }
    write_json_file(corpus::vocabulary_path(out_dir), vocabulary_to_json(vocab));
    write_json_file(corpus::splits_path(out_dir),
                    json{{"train", res.splits.train}, {"test", res.splits.test}});

    json manifest;
    manifest["seed"] = cfg.train.seed;
    manifest["config_hash"] = config_hash(cfg);
    manifest["videos"] = corpus.size();
    manifest["relation_instances"] = res.total_relations;
    json novel_rels = json::array();
    for (const auto& c : vocab.relations)
        if (c.is_novel) novel_rels.push_back(c.name);
    manifest["novel_relations"] = novel_rels;
    json novel_objs = json::array();
    for (const auto& c : vocab.objects)
        if (c.is_novel) novel_objs.push_back(c.name);
    manifest["novel_objects"] = novel_objs;
    write_json_file(corpus::manifest_path(out_dir), manifest);
    return res;
}

// --- training -------------------------------------------------------------------

struct TrainResult {
    std::string final_checkpoint;
    std::uint64_t checkpoint_digest = 0;
    double first_step_total = 0;
    double last_step_total = 0;
    long steps = 0;
    std::vector<double> epoch_mean_totals;
};

// Per-video segment loop; one optimizer step per segment. The training log
// is JSONL, one record per step with the learning rate and every loss
// component.
inline TrainResult train(const RunConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir,
                         ModelF* external_model = nullptr) {
    fs::create_directories(out_dir);
    const Vocabulary vocab = corpus::load_vocabulary(data_dir);
    const CorpusSplits splits = corpus::load_splits(data_dir);

    // base-only training view: novel-category ground truth never reaches the
    // trainer
    std::vector<VideoSample> train_videos;
    for (const auto& id : splits.train)
        train_videos.push_back(
            filter_to_base(corpus::load_video(data_dir, id, vocab, /*with_frames=*/true), vocab));

    std::unique_ptr<ModelF> owned;
    ModelF* model = external_model;
    if (!model) {
        owned = std::make_unique<ModelF>(cfg.model, vocab, cfg.train.seed);
        model = owned.get();
    }

    AdamW<float>::Options opts;
    opts.lr = static_cast<float>(cfg.train.lr);
    opts.beta1 = static_cast<float>(cfg.train.beta1);
    opts.beta2 = static_cast<float>(cfg.train.beta2);
    opts.eps = static_cast<float>(cfg.train.adam_eps);
    opts.weight_decay = static_cast<float>(cfg.train.weight_decay);
    AdamW<float> optimizer(model->params(), opts);
    MilestoneSchedule<float> schedule(static_cast<float>(cfg.train.lr), cfg.train.milestones,
                                      static_cast<float>(cfg.train.lr_factor));

    LossWeights weights;
    weights.theta_traj = cfg.train.theta_traj;
    weights.theta_ctx = cfg.train.theta_ctx;
    weights.theta_cst = cfg.train.theta_cst;
    weights.aux_weight = cfg.train.aux_weight;

    std::ofstream log(out_dir + "/train_log.jsonl");
    if (!log) throw DataError("cannot open training log in " + out_dir);

    TrainResult res;
    std::string last_good;
    try {
        for (long epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
            optimizer.set_lr(schedule.lr_at_epoch(epoch));
            double epoch_sum = 0;
            long epoch_steps = 0;
            for (const auto& video : train_videos) {
                for (const auto& seg : segmentize(video, cfg.data.segment_length,
                                                  cfg.data.segment_stride)) {
                    Tape<float> tape;
                    nn::Ctx<float> ctx(&tape);
                    auto outputs = model->train_forward(
                        ctx, seg, weights, static_cast<double>(video.width),
                        static_cast<double>(video.height));
                    tape.backward(outputs.losses.total_tensor);
                    std::vector<std::vector<float>> grads;
                    grads.reserve(model->params().all().size());
                    for (const auto& p : model->params().all())
                        grads.push_back(ctx.grad_of(p.get()));
                    optimizer.step(grads);

                    ++res.steps;
                    if (res.steps == 1) res.first_step_total = outputs.losses.total;
                    res.last_step_total = outputs.losses.total;
                    epoch_sum += outputs.losses.total;
                    ++epoch_steps;
                    const auto& L = outputs.losses;
                    log << json{{"step", res.steps},
                                {"epoch", epoch},
                                {"video", video.video_id},
                                {"segment_begin", seg.begin_fid},
                                {"lr", optimizer.lr()},
                                {"rel_ctr", L.rel_ctr},
                                {"obj_ctr", L.obj_ctr},
                                {"box", L.box},
                                {"cst", L.cst},
                                {"rel_ctx", L.rel_ctx},
                                {"obj_ctx", L.obj_ctx},
                                {"aux", L.aux},
                                {"total", L.total},
                                {"matched_pairs", L.matched_pairs}}
                             .dump()
                        << "\n";
                }
            }
            res.epoch_mean_totals.push_back(epoch_steps ? epoch_sum / epoch_steps : 0.0);
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_epoch_%03ld.bin", epoch);
            const std::string ckpt = out_dir + "/" + name;
            save_checkpoint(ckpt, model->params());
            last_good = ckpt;
        }
    } catch (const NumericError& e) {
        log_warn("training aborted on numeric failure: %s (last good checkpoint: %s)", e.what(),
                 last_good.empty() ? "<none>" : last_good.c_str());
        throw;
    }

    res.final_checkpoint = out_dir + "/final.bin";
    save_checkpoint(res.final_checkpoint, model->params());
    res.checkpoint_digest = file_digest(res.final_checkpoint);

    json manifest;
    manifest["config_hash"] = config_hash(cfg);
    manifest["seed"] = cfg.train.seed;
    manifest["steps"] = res.steps;
    manifest["epoch_mean_totals"] = res.epoch_mean_totals;
    manifest["checkpoint_digest"] = res.checkpoint_digest;
    write_json_file(out_dir + "/run_manifest.json", manifest);
    return res;
}

// --- evaluation -------------------------------------------------------------------

inline std::vector<std::string> select_videos(const CorpusSplits& splits,
                                              const std::string& video_set) {
    if (video_set == "train") return splits.train;
    if (video_set == "test") return splits.test;
    std::vector<std::string> all = splits.train;
    all.insert(all.end(), splits.test.begin(), splits.test.end());
    return all;
}

struct EvalOutputs {
    EvalReport report;
    std::vector<VideoPrediction> predictions;                 // ranked, post-association
    std::vector<std::vector<ScoredTrack>> object_tracks;      // per video
    std::vector<VideoGroundTruth> ground_truth;               // unfiltered
};

// Shared scoring path: predictions (from the model or an external dump) are
// split-filtered and scored against the ground truth.
inline void score_predictions(EvalOutputs& out, const Vocabulary& vocab, EvalSplit split,
                              const EvalConfig& eval) {
    const auto gts = filter_gt_split(out.ground_truth, vocab, split);
    const auto preds = filter_pred_split(out.predictions, vocab, split);
    const auto tracks = filter_tracks_split(out.object_tracks, vocab, split);

    EvalReport& r = out.report;
    r.split = split == EvalSplit::Novel ? "novel" : "all";
    for (const auto& g : gts) r.gt_relation_instances += static_cast<long>(g.relations.size());
    for (const auto& p : preds) r.prediction_count += static_cast<long>(p.triplets.size());
    r.map = relation_detection_map(preds, gts, eval.viou_threshold);
    r.r50 = recall_at_k(preds, gts, 50, eval.viou_threshold);
    r.r100 = recall_at_k(preds, gts, 100, eval.viou_threshold);
    std::map<int, double> per_cat;
    r.map_o = trajectory_map(tracks, gts, eval.viou_threshold, &per_cat);
    for (const auto& [cat, ap] : per_cat)
        r.per_object_category_ap[vocab.objects[static_cast<size_t>(cat)].name] = ap;
    for (const auto& [cat, ap] : per_relation_ap_table(preds, gts, eval.viou_threshold))
        r.per_relation_category_ap[vocab.relations[static_cast<size_t>(cat)].name] = ap;
    r.errors = categorize_errors(preds, gts, eval.examine_top_k, eval.viou_threshold);
}

inline VideoGroundTruth video_ground_truth(const VideoSample& v) {
    VideoGroundTruth g;
    g.video_id = v.video_id;
    g.relations = v.gt_relations;
    g.objects = v.gt_objects;
    return g;
}

// Full model evaluation: segmentize, infer per segment, associate across
// segments, rank and cap, then score.
inline EvalOutputs evaluate(const RunConfig& cfg, const ModelF& model,
                            const std::string& data_dir, EvalSplit split,
                            const std::string& dump_dir = "") {
    const Vocabulary vocab = corpus::load_vocabulary(data_dir);
    if (vocab.fingerprint() != model.vocab().fingerprint())
        throw DataError("vocabulary mismatch between checkpoint and corpus");
    const CorpusSplits splits = corpus::load_splits(data_dir);
    if (!dump_dir.empty()) fs::create_directories(dump_dir);

    EvalOutputs out;
    for (const auto& id : select_videos(splits, cfg.eval.video_set)) {
        const VideoSample video = corpus::load_video(data_dir, id, vocab, /*with_frames=*/true);
        std::vector<SegmentPrediction> seg_preds;
        std::vector<std::vector<ScoredTrack>> seg_tracks;
        for (const auto& seg :
             segmentize(video, cfg.data.segment_length, cfg.data.segment_stride)) {
            auto inf = model.infer_segment(seg, cfg.eval, static_cast<double>(video.width),
                                           static_cast<double>(video.height));
            seg_preds.push_back(std::move(inf.prediction));
            seg_tracks.push_back(std::move(inf.candidate_tracks));
        }
        VideoPrediction vp = greedy_associate(seg_preds, cfg.eval.merge_viou,
                                              cfg.eval.merge_score == "max", video.video_id);
        if (static_cast<long>(vp.triplets.size()) > cfg.eval.max_per_video)
            vp.triplets.resize(static_cast<size_t>(cfg.eval.max_per_video));
        std::vector<ScoredTrack> tracks =
            associate_object_tracks(seg_tracks, cfg.eval.merge_viou);
        if (!dump_dir.empty())
            write_json_file(dump_dir + "/" + video.video_id + ".preds.json",
                            prediction_dump_to_json(vp, tracks, vocab));
        out.predictions.push_back(std::move(vp));
        out.object_tracks.push_back(std::move(tracks));
        out.ground_truth.push_back(video_ground_truth(video));
    }
    score_predictions(out, vocab, split, cfg.eval);
    return out;
}

// Scores an existing prediction dump directory instead of running a model.
inline EvalOutputs evaluate_dumps(const RunConfig& cfg, const std::string& data_dir,
                                  const std::string& preds_dir, EvalSplit split) {
    const Vocabulary vocab = corpus::load_vocabulary(data_dir);
    const CorpusSplits splits = corpus::load_splits(data_dir);
    EvalOutputs out;
    bool any_tracks = false;
    for (const auto& id : select_videos(splits, cfg.eval.video_set)) {
        const VideoSample video =
            corpus::load_video(data_dir, id, vocab, /*with_frames=*/false);
        const std::string path = preds_dir + "/" + id + ".preds.json";
        PredictionDump dump = prediction_dump_from_json(load_json_file(path), vocab, path);
        if (dump.video.video_id != id)
            throw DataError(path + ": video_id mismatch (" + dump.video.video_id + ")");
        any_tracks = any_tracks || dump.has_object_tracks;
        out.predictions.push_back(std::move(dump.video));
        out.object_tracks.push_back(std::move(dump.object_tracks));
        out.ground_truth.push_back(video_ground_truth(video));
    }
    score_predictions(out, vocab, split, cfg.eval);
    if (!any_tracks) out.report.map_o.reset();
    return out;
}

// --- error analysis ------------------------------------------------------------------

struct ErrorAnalysis {
    ErrorCounts counts;
    double oracle_relation_accuracy = 0;  // relation accuracy on GT-matched pairs
    long oracle_pairs = 0;
};

inline ErrorAnalysis analyze_errors(const RunConfig& cfg, const ModelF& model,
                                    const std::string& data_dir) {
    EvalOutputs eval_out = evaluate(cfg, model, data_dir, EvalSplit::All);
    ErrorAnalysis out;
    out.counts = eval_out.report.errors;

    const Vocabulary vocab = corpus::load_vocabulary(data_dir);
    const CorpusSplits splits = corpus::load_splits(data_dir);
    long correct = 0;
    for (const auto& id : select_videos(splits, cfg.eval.video_set)) {
        const VideoSample video = corpus::load_video(data_dir, id, vocab, /*with_frames=*/true);
        for (const auto& seg :
             segmentize(video, cfg.data.segment_length, cfg.data.segment_stride)) {
            for (const auto& pd : model.matched_pair_diagnostics(
                     seg, static_cast<double>(video.width), static_cast<double>(video.height))) {
                if (pd.gt_relations.empty()) continue;
                long best = 0;
                for (size_t r = 1; r < pd.relation_scores.size(); ++r)
                    if (pd.relation_scores[r] > pd.relation_scores[static_cast<size_t>(best)])
                        best = static_cast<long>(r);
                ++out.oracle_pairs;
                if (std::find(pd.gt_relations.begin(), pd.gt_relations.end(),
                              static_cast<int>(best)) != pd.gt_relations.end())
                    ++correct;
            }
        }
    }
    out.oracle_relation_accuracy =
        out.oracle_pairs ? static_cast<double>(correct) / static_cast<double>(out.oracle_pairs)
                         : 0.0;
    return out;
}

// --- feature dump ------------------------------------------------------------------------

// One JSONL record per ground-truth-matched pair with pre/post-enhancement
// features; external tooling can project them (e.g. with t-SNE).
inline long dump_features(const RunConfig& cfg, const ModelF& model,
                          const std::string& data_dir, const std::string& out_path) {
    const Vocabulary vocab = corpus::load_vocabulary(data_dir);
    if (vocab.fingerprint() != model.vocab().fingerprint())
        throw DataError("vocabulary mismatch between checkpoint and corpus");
    const CorpusSplits splits = corpus::load_splits(data_dir);
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot open for writing: " + out_path);
    long records = 0;
    for (const auto& id : select_videos(splits, cfg.eval.video_set)) {
        const VideoSample video = corpus::load_video(data_dir, id, vocab, /*with_frames=*/true);
        for (const auto& seg :
             segmentize(video, cfg.data.segment_length, cfg.data.segment_stride)) {
            for (const auto& pd : model.matched_pair_diagnostics(
                     seg, static_cast<double>(video.width), static_cast<double>(video.height))) {
                json rec;
                rec["video_id"] = video.video_id;
                rec["segment_begin"] = seg.begin_fid;
                rec["subject_category"] =
                    vocab.objects[static_cast<size_t>(pd.subject_category)].name;
                rec["object_category"] =
                    vocab.objects[static_cast<size_t>(pd.object_category)].name;
                json rels = json::array();
                for (int r : pd.gt_relations)
                    rels.push_back(vocab.relations[static_cast<size_t>(r)].name);
                rec["gt_relations"] = rels;
                rec["dim"] = cfg.model.dim;
                rec["pre_subject"] = pd.pre_subject;
                rec["pre_object"] = pd.pre_object;
                rec["post_subject"] = pd.post_subject;
                rec["post_object"] = pd.post_object;
                rec["relation"] = pd.relation;
                out << rec.dump() << "\n";
                ++records;
            }
        }
    }
    return records;
}

}  // namespace metor::pipeline
