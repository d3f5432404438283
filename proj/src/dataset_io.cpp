#include "calibra/dataset_io.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "calibra/error.hpp"
#include "calibra/npy.hpp"

namespace calibra {

using nlohmann::json;

LabelMap labels_from_float(const Tensor2<float>& t, int classes) {
    Tensor2<label_t> out(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const float v = t[i];
        if (!std::isfinite(v) || v < 0.0f || v != std::floor(v) ||
            v > static_cast<float>(kIgnoreLabel))
            throw ValidationError("labels: entry " + std::to_string(v) +
                                  " is not a valid class index");
        out[i] = static_cast<label_t>(v);
    }
    return LabelMap(std::move(out), classes);
}

Tensor2<float> labels_to_float(const LabelMap& labels) {
    Tensor2<float> out(labels.rows(), labels.cols());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(labels.tensor()[i]);
    return out;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("manifest: cannot open " + manifest.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("manifest: invalid JSON in " + manifest.string() + ": " + e.what());
    }

    Dataset ds;
    try {
        ds.split = split_from_name(doc.at("split").get<std::string>());
        ds.classes = doc.at("classes").get<int>();
        if (doc.contains("background")) {
            const int bg = doc.at("background").get<int>();
            if (bg < 0 || bg >= ds.classes)
                throw ValidationError("manifest: background class out of range");
            ds.background = static_cast<label_t>(bg);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest: missing field: ") + e.what());
    }

    const auto base = manifest.parent_path();
    if (!doc.contains("samples") || !doc["samples"].is_array() || doc["samples"].empty())
        throw ValidationError("manifest: empty sample list");

    for (const auto& entry : doc["samples"]) {
        std::string id;
        try {
            id = entry.at("id").get<std::string>();
            const auto logits_path = base / entry.at("logits").get<std::string>();
            const auto labels_path = base / entry.at("labels").get<std::string>();
            if (!std::filesystem::exists(logits_path))
                throw IoError(id + ": missing file " + logits_path.string());
            if (!std::filesystem::exists(labels_path))
                throw IoError(id + ": missing file " + labels_path.string());

            LogitMap logits(npy::load_tensor3(logits_path));
            LabelMap labels = labels_from_float(npy::load_tensor2(labels_path), ds.classes);

            std::optional<ImageTensor> image;
            if (entry.contains("image")) {
                const auto image_path = base / entry.at("image").get<std::string>();
                if (!std::filesystem::exists(image_path))
                    throw IoError(id + ": missing file " + image_path.string());
                image.emplace(npy::load_tensor3(image_path));
            }
            ds.samples.push_back(Sample{id, std::move(logits), std::move(labels),
                                        std::move(image)});
        } catch (const json::exception& e) {
            throw FormatError("manifest: bad sample entry: " + std::string(e.what()));
        } catch (const ValidationError& e) {
            throw ValidationError(id.empty() ? std::string(e.what())
                                             : id + ": " + e.what());
        }
    }

    ds.validate();
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                  const std::filesystem::path& manifest_name) {
    dataset.validate();
    std::filesystem::create_directories(dir / "data");

    json doc;
    doc["split"] = split_name(dataset.split);
    doc["classes"] = dataset.classes;
    if (dataset.background != 0) doc["background"] = dataset.background;
    doc["samples"] = json::array();
    for (const Sample& s : dataset.samples) {
        const std::string logits_rel = "data/" + s.id + ".logits.npy";
        const std::string labels_rel = "data/" + s.id + ".labels.npy";
        npy::save_tensor3(dir / logits_rel, s.logits.tensor());
        npy::save_tensor2(dir / labels_rel, labels_to_float(s.labels));
        json entry{{"id", s.id}, {"logits", logits_rel}, {"labels", labels_rel}};
        if (s.image) {
            const std::string image_rel = "data/" + s.id + ".image.npy";
            npy::save_tensor3(dir / image_rel, s.image->tensor());
            entry["image"] = image_rel;
        }
        doc["samples"].push_back(entry);
    }

    std::ofstream out(dir / manifest_name);
    if (!out) throw IoError("manifest: cannot write " + (dir / manifest_name).string());
    out << doc.dump(2) << "\n";
}

}  // namespace calibra
