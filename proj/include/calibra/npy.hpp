#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "calibra/tensor.hpp"

namespace calibra::npy {

// Raw array as stored on disk: f32 payload plus its shape.
struct Array {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }
};

// Reads an NPY v1.0 file. Accepts little-endian f32/f64 C-order payloads;
// f64 is narrowed to f32 (round-to-nearest). Throws FormatError on a
// malformed file, UnsupportedLayout on fortran_order=True.
Array load(const std::filesystem::path& path);

// Writes an NPY v1.0 file: '<f4', C-order, header padded so the payload
// starts on a 64-byte boundary. Rejects non-finite values and zero-sized
// dimensions (ValidationError). load(save(x)) reproduces x bit-exactly.
void save(const std::filesystem::path& path, const Array& array);

// Shape-checked adapters.
Tensor2<float> load_tensor2(const std::filesystem::path& path);
Tensor3<float> load_tensor3(const std::filesystem::path& path);
void save_tensor2(const std::filesystem::path& path, const Tensor2<float>& t);
void save_tensor3(const std::filesystem::path& path, const Tensor3<float>& t);
void save_scalar(const std::filesystem::path& path, float value);

}  // namespace calibra::npy
