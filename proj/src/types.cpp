#include "calibra/types.hpp"

#include <cmath>

#include "calibra/error.hpp"

namespace calibra {

LogitMap::LogitMap(Tensor3<float> data) : data_(std::move(data)) {
    if (data_.channels() < 2) throw ValidationError("LogitMap: needs at least 2 classes");
    if (data_.rows() < 1 || data_.cols() < 1)
        throw ValidationError("LogitMap: spatial dims must be >= 1");
    if (!all_finite(data_.storage()))
        throw ValidationError("LogitMap: non-finite logit value");
}

LabelMap::LabelMap(Tensor2<label_t> data, int classes)
    : data_(std::move(data)), classes_(classes) {
    if (classes_ < 2) throw ValidationError("LabelMap: needs at least 2 classes");
    if (data_.rows() < 1 || data_.cols() < 1)
        throw ValidationError("LabelMap: spatial dims must be >= 1");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        const label_t v = data_[i];
        if (v != kIgnoreLabel && v >= classes_)
            throw ValidationError("LabelMap: label " + std::to_string(v) +
                                  " out of range for " + std::to_string(classes_) + " classes");
    }
}

ProbMap::ProbMap(Tensor3<float> data) : data_(std::move(data)) {
    if (data_.channels() < 2) throw ValidationError("ProbMap: needs at least 2 classes");
    if (data_.rows() < 1 || data_.cols() < 1)
        throw ValidationError("ProbMap: spatial dims must be >= 1");
    constexpr float kSumTol = 1e-5f;
    for (int y = 0; y < data_.rows(); ++y) {
        for (int x = 0; x < data_.cols(); ++x) {
            double sum = 0.0;
            for (int l = 0; l < data_.channels(); ++l) {
                const float p = data_(l, y, x);
                if (!(p >= -1e-7f && p <= 1.0f + 1e-6f))
                    throw ValidationError("ProbMap: probability outside [0, 1]");
                sum += p;
            }
            if (std::abs(sum - 1.0) > kSumTol)
                throw ValidationError("ProbMap: channel sum deviates from 1 at (" +
                                      std::to_string(y) + ", " + std::to_string(x) + ")");
        }
    }
}

ImageTensor::ImageTensor(Tensor3<float> data) : data_(std::move(data)) {
    if (data_.channels() < 1) throw ValidationError("ImageTensor: needs at least 1 channel");
    if (!all_finite(data_.storage()))
        throw ValidationError("ImageTensor: non-finite intensity");
}

namespace {
void check_temp(double t, double t_max) {
    if (!(t > 0.0) || !(t <= t_max) || !std::isfinite(t))
        throw ValidationError("TemperatureField: value outside (0, t_max]");
}
}  // namespace

TemperatureField TemperatureField::global(double t, double t_max) {
    check_temp(t, t_max);
    TemperatureField f;
    f.kind_ = TempKind::Global;
    f.t_max_ = t_max;
    f.scalars_ = {t};
    return f;
}

TemperatureField TemperatureField::per_image(std::vector<double> temps, double t_max) {
    if (temps.empty()) throw ValidationError("TemperatureField: empty per-image list");
    for (double t : temps) check_temp(t, t_max);
    TemperatureField f;
    f.kind_ = TempKind::PerImage;
    f.t_max_ = t_max;
    f.scalars_ = std::move(temps);
    return f;
}

TemperatureField TemperatureField::local(std::vector<Tensor2<float>> fields, double t_max) {
    if (fields.empty()) throw ValidationError("TemperatureField: empty local field list");
    for (const auto& field : fields)
        for (std::size_t i = 0; i < field.size(); ++i) check_temp(field[i], t_max);
    TemperatureField f;
    f.kind_ = TempKind::Local;
    f.t_max_ = t_max;
    f.fields_ = std::move(fields);
    return f;
}

double TemperatureField::scalar(std::size_t sample) const {
    if (kind_ == TempKind::Global) return scalars_[0];
    if (kind_ == TempKind::PerImage) {
        if (sample >= scalars_.size())
            throw ValidationError("TemperatureField: sample index out of range");
        return scalars_[sample];
    }
    throw ValidationError("TemperatureField: local field has no scalar value");
}

const Tensor2<float>& TemperatureField::field(std::size_t sample) const {
    if (kind_ != TempKind::Local)
        throw ValidationError("TemperatureField: scalar kind has no field");
    if (sample >= fields_.size())
        throw ValidationError("TemperatureField: sample index out of range");
    return fields_[sample];
}

SampleTemps TemperatureField::for_sample(std::size_t sample) const {
    if (kind_ == TempKind::Local) return SampleTemps::local(field(sample));
    return SampleTemps::scalar(scalar(sample));
}

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ValidationError("unknown split '" + name + "'");
}

void Dataset::validate() const {
    if (samples.empty()) throw ValidationError("Dataset: no samples");
    if (classes < 2) throw ValidationError("Dataset: needs at least 2 classes");
    for (const Sample& s : samples) {
        if (s.logits.classes() != classes)
            throw ValidationError(s.id + ": class count mismatch (" +
                                  std::to_string(s.logits.classes()) + " vs dataset " +
                                  std::to_string(classes) + ")");
        if (s.labels.rows() != s.logits.rows() || s.labels.cols() != s.logits.cols())
            throw ValidationError(s.id + ": spatial mismatch between logits and labels");
        if (s.labels.classes() != classes)
            throw ValidationError(s.id + ": label class count mismatch");
        if (s.image &&
            (s.image->rows() != s.logits.rows() || s.image->cols() != s.logits.cols()))
            throw ValidationError(s.id + ": spatial mismatch between logits and image");
    }
}

}  // namespace calibra
