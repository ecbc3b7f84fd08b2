#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "metor/checkpoint.hpp"
#include "metor/data.hpp"

// Annotation documents, one JSON file per video:
//   video_id, frame_count, width, height
//   "subject/objects": [{tid, category}]
//   trajectories: per frame, a list of {tid, bbox{xmin,ymin,xmax,ymax}}
//   relation_instances: [{subject_tid, object_tid, predicate, begin_fid, end_fid}]
// Pixels live next to the annotations in a tensor container holding one
// (T,H,W,3) float32 entry named "frames".

namespace metor {

using nlohmann::json;

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw DataError("write failed: " + path);
}

inline json annotations_to_json(const VideoSample& video, const Vocabulary& vocab) {
    json j;
    j["video_id"] = video.video_id;
    j["frame_count"] = video.frame_count;
    j["width"] = video.width;
    j["height"] = video.height;

    json subjects = json::array();
    for (const auto& obj : video.gt_objects)
        subjects.push_back({{"tid", obj.tid},
                            {"category", vocab.objects[static_cast<size_t>(obj.category)].name}});
    j["subject/objects"] = subjects;

    json trajectories = json::array();
    for (long fid = 0; fid < video.frame_count; ++fid) {
        json frame = json::array();
        for (const auto& obj : video.gt_objects) {
            const BBox* b = obj.traj.box_at(fid);
            if (!b) continue;
            frame.push_back({{"tid", obj.tid},
                             {"bbox",
                              {{"xmin", b->xmin},
                               {"ymin", b->ymin},
                               {"xmax", b->xmax},
                               {"ymax", b->ymax}}}});
        }
        trajectories.push_back(frame);
    }
    j["trajectories"] = trajectories;

    json rels = json::array();
    for (const auto& r : video.gt_relations)
        rels.push_back({{"subject_tid", r.subject_tid},
                        {"object_tid", r.object_tid},
                        {"predicate", vocab.relations[static_cast<size_t>(r.relation)].name},
                        {"begin_fid", r.subject_traj.begin_fid},
                        {"end_fid", r.subject_traj.end_fid}});
    j["relation_instances"] = rels;
    return j;
}

// Parses one annotation document into video metadata (no pixels). Track ids
// are resolved, per-frame trajectory entries are folded into contiguous
// Trajectory records, and relation instances are linked to their tracks.
inline VideoSample annotations_from_json(const json& j, const Vocabulary& vocab,
                                         const std::string& origin) {
    VideoSample video;
    try {
        video.video_id = j.at("video_id").get<std::string>();
        video.frame_count = j.at("frame_count").get<long>();
        video.width = j.at("width").get<long>();
        video.height = j.at("height").get<long>();
    } catch (const json::exception& e) {
        throw DataError(origin + ": missing or malformed header field: " + e.what());
    }
    if (video.frame_count <= 0 || video.width <= 0 || video.height <= 0)
        throw DataError(origin + ": non-positive frame_count/width/height");

    std::map<int, int> tid_to_category;
    for (const auto& s : j.at("subject/objects")) {
        const int tid = s.at("tid").get<int>();
        const std::string name = s.at("category").get<std::string>();
        const int cat = vocab.object_id(name);
        if (cat < 0) throw DataError(origin + ": unknown object category '" + name + "'");
        if (tid_to_category.count(tid))
            throw DataError(origin + ": duplicate tid " + std::to_string(tid));
        tid_to_category[tid] = cat;
    }

    const auto& trajectories = j.at("trajectories");
    if (static_cast<long>(trajectories.size()) != video.frame_count)
        throw DataError(origin + ": trajectories length " +
                        std::to_string(trajectories.size()) + " != frame_count " +
                        std::to_string(video.frame_count));

    std::map<int, Trajectory> tracks;
    for (long fid = 0; fid < video.frame_count; ++fid) {
        for (const auto& entry : trajectories[static_cast<size_t>(fid)]) {
            const int tid = entry.at("tid").get<int>();
            if (!tid_to_category.count(tid))
                throw DataError(origin + ": dangling tid " + std::to_string(tid) +
                                " in trajectories at frame " + std::to_string(fid));
            const auto& bb = entry.at("bbox");
            BBox box{bb.at("xmin").get<double>(), bb.at("ymin").get<double>(),
                     bb.at("xmax").get<double>(), bb.at("ymax").get<double>()};
            if (!box.valid())
                throw DataError(origin + ": degenerate bbox for tid " + std::to_string(tid) +
                                " at frame " + std::to_string(fid));
            auto [it, fresh] = tracks.try_emplace(tid);
            Trajectory& t = it->second;
            if (fresh) {
                t.begin_fid = fid;
                t.end_fid = fid + 1;
                t.boxes.push_back(box);
            } else {
                if (fid != t.end_fid)
                    throw DataError(origin + ": non-contiguous trajectory for tid " +
                                    std::to_string(tid) + " (gap before frame " +
                                    std::to_string(fid) + ")");
                t.end_fid = fid + 1;
                t.boxes.push_back(box);
            }
        }
    }

    for (const auto& [tid, cat] : tid_to_category) {
        auto it = tracks.find(tid);
        if (it == tracks.end())
            throw DataError(origin + ": tid " + std::to_string(tid) +
                            " declared but never appears in trajectories");
        video.gt_objects.push_back(ObjectTrack{tid, cat, it->second});
    }

    for (const auto& r : j.at("relation_instances")) {
        RelationInstance rel;
        const int stid = r.at("subject_tid").get<int>();
        const int otid = r.at("object_tid").get<int>();
        const std::string pred = r.at("predicate").get<std::string>();
        const long begin = r.at("begin_fid").get<long>();
        const long end = r.at("end_fid").get<long>();
        rel.relation = vocab.relation_id(pred);
        if (rel.relation < 0) throw DataError(origin + ": unknown predicate '" + pred + "'");
        auto sit = tracks.find(stid);
        auto oit = tracks.find(otid);
        if (sit == tracks.end() || oit == tracks.end())
            throw DataError(origin + ": relation references dangling tid " +
                            std::to_string(sit == tracks.end() ? stid : otid));
        if (begin >= end || begin < 0 || end > video.frame_count)
            throw DataError(origin + ": malformed relation frame range [" +
                            std::to_string(begin) + "," + std::to_string(end) + ")");
        if (begin < sit->second.begin_fid || end > sit->second.end_fid ||
            begin < oit->second.begin_fid || end > oit->second.end_fid)
            throw DataError(origin + ": relation span [" + std::to_string(begin) + "," +
                            std::to_string(end) + ") exceeds its track extents");
        rel.subject_tid = stid;
        rel.object_tid = otid;
        rel.subject_category = tid_to_category.at(stid);
        rel.object_category = tid_to_category.at(otid);
        rel.subject_traj = sit->second.clipped(begin, end);
        rel.object_traj = oit->second.clipped(begin, end);
        video.gt_relations.push_back(std::move(rel));
    }
    return video;
}

inline VideoSample load_annotations(const std::string& path, const Vocabulary& vocab) {
    return annotations_from_json(load_json_file(path), vocab, path);
}

// --- vocabulary and split files --------------------------------------------

inline json vocabulary_to_json(const Vocabulary& vocab) {
    json j;
    auto dump = [](const std::vector<Category>& cats) {
        json arr = json::array();
        for (const auto& c : cats)
            arr.push_back({{"id", c.id}, {"name", c.name}, {"novel", c.is_novel}});
        return arr;
    };
    j["objects"] = dump(vocab.objects);
    j["relations"] = dump(vocab.relations);
    return j;
}

inline Vocabulary vocabulary_from_json(const json& j, const std::string& origin) {
    Vocabulary vocab;
    auto parse = [&](const json& arr, std::vector<Category>& out) {
        for (const auto& c : arr)
            out.push_back(Category{c.at("id").get<int>(), c.at("name").get<std::string>(),
                                   c.at("novel").get<bool>()});
        for (size_t i = 0; i < out.size(); ++i)
            if (out[i].id != static_cast<int>(i))
                throw DataError(origin + ": category ids must be dense from 0");
    };
    parse(j.at("objects"), vocab.objects);
    parse(j.at("relations"), vocab.relations);
    return vocab;
}

struct CorpusSplits {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

// --- frame blobs -------------------------------------------------------------

inline void save_frames(const std::string& path, const Tensor<float>& frames) {
    TensorRecord r;
    r.name = "frames";
    r.shape = frames.shape();
    r.dtype = 0;
    r.f32 = frames.data();
    write_tensor_container(path, {r});
}

inline Tensor<float> load_frames(const std::string& path) {
    auto records = read_tensor_container(path);
    if (records.size() != 1 || records[0].name != "frames" || records[0].dtype != 0 ||
        records[0].shape.size() != 4)
        throw DataError("not a frame blob: " + path);
    return Tensor<float>(records[0].shape, std::move(records[0].f32));
}

// --- corpus directory layout --------------------------------------------------

namespace corpus {

inline std::string annotation_path(const std::string& dir, const std::string& video_id) {
    return dir + "/videos/" + video_id + ".json";
}
inline std::string frames_path(const std::string& dir, const std::string& video_id) {
    return dir + "/videos/" + video_id + ".frames.bin";
}
inline std::string vocabulary_path(const std::string& dir) { return dir + "/vocabulary.json"; }
inline std::string splits_path(const std::string& dir) { return dir + "/splits.json"; }
inline std::string manifest_path(const std::string& dir) { return dir + "/manifest.json"; }

inline Vocabulary load_vocabulary(const std::string& dir) {
    const std::string path = vocabulary_path(dir);
    return vocabulary_from_json(load_json_file(path), path);
}

inline CorpusSplits load_splits(const std::string& dir) {
    const std::string path = splits_path(dir);
    const json j = load_json_file(path);
    CorpusSplits s;
    for (const auto& v : j.at("train")) s.train.push_back(v.get<std::string>());
    for (const auto& v : j.at("test")) s.test.push_back(v.get<std::string>());
    return s;
}

inline VideoSample load_video(const std::string& dir, const std::string& video_id,
                              const Vocabulary& vocab, bool with_frames) {
    VideoSample v = load_annotations(annotation_path(dir, video_id), vocab);
    if (with_frames) {
        Tensor<float> frames = load_frames(frames_path(dir, video_id));
        if (frames.dim(0) != v.frame_count || frames.dim(1) != v.height ||
            frames.dim(2) != v.width || frames.dim(3) != 3)
            throw DataError("frame blob shape disagrees with annotations for " + video_id);
        v.frames = std::move(frames);
    }
    return v;
}

}  // namespace corpus

}  // namespace metor
