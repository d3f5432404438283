#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "calibra/tensor.hpp"

namespace calibra {

// Class index type. The maximum value is the ignore sentinel: pixels marked
// with it carry no supervision and are excluded from every loss and metric.
using label_t = std::uint16_t;
inline constexpr label_t kIgnoreLabel = std::numeric_limits<label_t>::max();

// Temperature clamp ceiling; 1/kTempMax doubles as the alpha floor, so the
// T -> infinity limit is represented by T = kTempMax.
inline constexpr double kTempMax = 1e6;

// Per-pixel class logits, shape (classes, H, W). Immutable once built.
class LogitMap {
public:
    explicit LogitMap(Tensor3<float> data);

    int classes() const { return data_.channels(); }
    int rows() const { return data_.rows(); }
    int cols() const { return data_.cols(); }
    float operator()(int l, int y, int x) const { return data_(l, y, x); }
    const Tensor3<float>& tensor() const { return data_; }

private:
    Tensor3<float> data_;
};

// Per-pixel class indices, shape (H, W); entries are either < classes or
// the ignore sentinel.
class LabelMap {
public:
    LabelMap(Tensor2<label_t> data, int classes);

    int classes() const { return classes_; }
    int rows() const { return data_.rows(); }
    int cols() const { return data_.cols(); }
    label_t operator()(int y, int x) const { return data_(y, x); }
    const Tensor2<label_t>& tensor() const { return data_; }

    bool supervised(int y, int x) const { return data_(y, x) != kIgnoreLabel; }

private:
    Tensor2<label_t> data_;
    int classes_ = 0;
};

// Per-pixel class probabilities, shape (classes, H, W); each pixel's channel
// vector sums to one within 1e-5.
class ProbMap {
public:
    explicit ProbMap(Tensor3<float> data);

    int classes() const { return data_.channels(); }
    int rows() const { return data_.rows(); }
    int cols() const { return data_.cols(); }
    float operator()(int l, int y, int x) const { return data_(l, y, x); }
    const Tensor3<float>& tensor() const { return data_; }

private:
    Tensor3<float> data_;
};

// Raw image intensities, shape (channels, H, W).
class ImageTensor {
public:
    explicit ImageTensor(Tensor3<float> data);

    int channels() const { return data_.channels(); }
    int rows() const { return data_.rows(); }
    int cols() const { return data_.cols(); }
    float operator()(int c, int y, int x) const { return data_(c, y, x); }
    const Tensor3<float>& tensor() const { return data_; }

private:
    Tensor3<float> data_;
};

enum class TempKind { Global, PerImage, Local };

// One sample's slice of a TemperatureField: either a scalar or a borrowed
// per-pixel field. Cheap to copy; does not own the field tensor.
struct SampleTemps {
    TempKind kind = TempKind::Global;
    double value = 1.0;
    const Tensor2<float>* field = nullptr;

    double at(int y, int x) const {
        return kind == TempKind::Local ? static_cast<double>((*field)(y, x)) : value;
    }
    static SampleTemps scalar(double t) { return SampleTemps{TempKind::Global, t, nullptr}; }
    static SampleTemps local(const Tensor2<float>& f) {
        return SampleTemps{TempKind::Local, 0.0, &f};
    }
};

// A global scalar, one scalar per sample, or one (H, W) field per sample.
// All values lie in (0, t_max].
class TemperatureField {
public:
    static TemperatureField global(double t, double t_max = kTempMax);
    static TemperatureField per_image(std::vector<double> temps, double t_max = kTempMax);
    static TemperatureField local(std::vector<Tensor2<float>> fields, double t_max = kTempMax);

    TempKind kind() const { return kind_; }
    double t_max() const { return t_max_; }
    std::size_t samples() const {
        return kind_ == TempKind::Global ? 0 : (kind_ == TempKind::PerImage ? scalars_.size()
                                                                            : fields_.size());
    }

    double scalar(std::size_t sample = 0) const;
    const Tensor2<float>& field(std::size_t sample) const;
    SampleTemps for_sample(std::size_t sample) const;

private:
    TemperatureField() = default;
    TempKind kind_ = TempKind::Global;
    double t_max_ = kTempMax;
    std::vector<double> scalars_;
    std::vector<Tensor2<float>> fields_;
};

enum class Split { Train, Val, Test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Sample {
    std::string id;
    LogitMap logits;
    LabelMap labels;
    std::optional<ImageTensor> image;
};

// Ordered list of samples with a consistent class count. The background
// class index feeds the All evaluation region; manifests may override it.
struct Dataset {
    std::vector<Sample> samples;
    Split split = Split::Train;
    int classes = 0;
    label_t background = 0;

    std::size_t size() const { return samples.size(); }
    void validate() const;
};

}  // namespace calibra
