#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "astromae/mae.hpp"

namespace astromae {

// Parameter container file, magic "AMCK": format version u32 LE, parameter
// count u32; per parameter: name length u16 + UTF-8 name, rank u8, dims u32
// each, raw float32 LE values. A JSON manifest sidecar at <path>.json lists
// names, shapes and free-form metadata (block kind, dims, epoch, ...).
struct CheckpointEntry {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::vector<std::pair<std::string, CheckpointEntry>> entries;  // insertion order
    std::map<std::string, std::string> metadata;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& [n, e] : entries) {
            if (n == name) return &e;
        }
        return nullptr;
    }
    bool contains(const std::string& name) const { return find(name) != nullptr; }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot a parameter list (float tensors) into checkpoint entries.
inline Checkpoint snapshot_params(const ParamList<float>& params) {
    Checkpoint ckpt;
    for (const auto& p : params) {
        ckpt.entries.push_back({p.name, {p.tensor->shape, p.tensor->data}});
    }
    return ckpt;
}

// Pretrained-encoder export: patch embedding, class token, blocks (including
// batch-norm buffers) and the final norm, tagged with the block kind. The
// decoder and mask token stay behind.
inline Checkpoint export_encoder(const MaeModel<float>& model) {
    ParamList<float> params;
    model.encoder.collect("encoder", params);
    Checkpoint ckpt;
    for (const auto& p : params) {
        ckpt.entries.push_back({p.name, {p.tensor->shape, p.tensor->data}});
    }
    ckpt.metadata["block_kind"] = model.cfg.encoder.kind == BlockKind::Pcm ? "pcm" : "plain";
    return ckpt;
}

// Copy checkpoint values back into matching tensors; every tensor must be
// present with an identical shape.
inline void restore_params(const Checkpoint& ckpt, const ParamList<float>& params) {
    for (const auto& p : params) {
        const CheckpointEntry* e = ckpt.find(p.name);
        if (!e) throw DataError("checkpoint is missing parameter '" + p.name + "'");
        if (e->shape != p.tensor->shape) {
            throw DataError("checkpoint parameter '" + p.name + "' has shape " + shape_str(e->shape) +
                            ", expected " + shape_str(p.tensor->shape));
        }
        p.tensor->data = e->data;
    }
}

}  // namespace astromae
