#pragma once

#include <filesystem>

#include "calibra/types.hpp"

namespace calibra {

// Loads a dataset from a JSON manifest:
//   {"split": "train", "classes": 4,
//    "samples": [{"id": "...", "logits": "rel.npy", "labels": "rel.npy",
//                 "image": "rel.npy"?}, ...]}
// Paths are resolved relative to the manifest's directory. All type
// invariants are validated eagerly; violations name the offending sample.
Dataset load_dataset(const std::filesystem::path& manifest);

// Writes the manifest plus one NPY file per tensor under dir/data/.
// Labels are stored as f32 (values are small integers, exact in f32).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                  const std::filesystem::path& manifest_name);

// Label maps travel as f32 NPY; these convert with range validation.
LabelMap labels_from_float(const Tensor2<float>& t, int classes);
Tensor2<float> labels_to_float(const LabelMap& labels);

}  // namespace calibra
