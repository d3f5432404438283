#include "calibra/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "calibra/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "NPY reader/writer assumes a little-endian host");

namespace calibra::npy {

namespace {

constexpr char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

// Pulls the value of a quoted dict key out of the header text.
std::string dict_value(const std::string& header, const std::string& key) {
    const std::string quoted = "'" + key + "'";
    std::size_t pos = header.find(quoted);
    if (pos == std::string::npos) throw FormatError("npy: header missing key " + key);
    pos = header.find(':', pos + quoted.size());
    if (pos == std::string::npos) throw FormatError("npy: malformed header dict");
    ++pos;
    while (pos < header.size() && header[pos] == ' ') ++pos;
    std::size_t end = pos;
    if (header[pos] == '\'') {
        end = header.find('\'', pos + 1);
        if (end == std::string::npos) throw FormatError("npy: unterminated string in header");
        return header.substr(pos + 1, end - pos - 1);
    }
    if (header[pos] == '(') {
        end = header.find(')', pos);
        if (end == std::string::npos) throw FormatError("npy: unterminated shape tuple");
        return header.substr(pos, end - pos + 1);
    }
    while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
    return header.substr(pos, end - pos);
}

std::vector<std::size_t> parse_shape(const std::string& tuple) {
    std::vector<std::size_t> shape;
    std::string digits;
    for (char c : tuple) {
        if (c >= '0' && c <= '9') {
            digits += c;
        } else if (!digits.empty()) {
            shape.push_back(static_cast<std::size_t>(std::stoull(digits)));
            digits.clear();
        }
    }
    if (!digits.empty()) shape.push_back(static_cast<std::size_t>(std::stoull(digits)));
    return shape;
}

}  // namespace

Array load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("npy: cannot open " + path.string());

    char magic[6];
    if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
        throw FormatError("npy: bad magic in " + path.string());

    unsigned char version[2];
    if (!in.read(reinterpret_cast<char*>(version), 2))
        throw FormatError("npy: truncated version field");
    if (version[0] != 1 || version[1] != 0)
        throw FormatError("npy: unsupported version " + std::to_string(version[0]) + "." +
                          std::to_string(version[1]));

    unsigned char len_bytes[2];
    if (!in.read(reinterpret_cast<char*>(len_bytes), 2))
        throw FormatError("npy: truncated header length");
    const std::size_t header_len = len_bytes[0] | (static_cast<std::size_t>(len_bytes[1]) << 8);

    std::string header(header_len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len)))
        throw FormatError("npy: truncated header");

    const std::string descr = dict_value(header, "descr");
    const std::string order = dict_value(header, "fortran_order");
    if (order.find("True") != std::string::npos)
        throw UnsupportedLayout("npy: fortran-order arrays are not supported");

    Array out;
    out.shape = parse_shape(dict_value(header, "shape"));
    const std::size_t count = out.element_count();
    out.data.resize(count);

    if (descr == "<f4") {
        if (!in.read(reinterpret_cast<char*>(out.data.data()),
                     static_cast<std::streamsize>(count * 4)))
            throw FormatError("npy: payload shorter than declared shape");
    } else if (descr == "<f8") {
        std::vector<double> wide(count);
        if (!in.read(reinterpret_cast<char*>(wide.data()),
                     static_cast<std::streamsize>(count * 8)))
            throw FormatError("npy: payload shorter than declared shape");
        for (std::size_t i = 0; i < count; ++i) out.data[i] = static_cast<float>(wide[i]);
    } else {
        throw FormatError("npy: unsupported dtype '" + descr + "'");
    }
    return out;
}

void save(const std::filesystem::path& path, const Array& array) {
    if (array.shape.empty()) throw ValidationError("npy: rank-0 arrays are not supported");
    for (std::size_t d : array.shape)
        if (d == 0) throw ValidationError("npy: zero-length dimension");
    if (array.element_count() != array.data.size())
        throw ValidationError("npy: shape/payload size mismatch");
    if (!all_finite(array.data)) throw ValidationError("npy: refusing to save non-finite values");

    std::ostringstream shape;
    shape << "(";
    for (std::size_t i = 0; i < array.shape.size(); ++i) {
        shape << array.shape[i];
        if (i + 1 < array.shape.size() || array.shape.size() == 1) shape << ",";
        if (i + 1 < array.shape.size()) shape << " ";
    }
    shape << ")";

    std::string dict =
        "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape.str() + ", }";
    // magic(6) + version(2) + len(2) + dict + padding + '\n' must be 64-aligned
    const std::size_t unpadded = 10 + dict.size() + 1;
    const std::size_t padded = (unpadded + 63) / 64 * 64;
    dict.append(padded - unpadded, ' ');
    dict += '\n';

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("npy: cannot write " + path.string());
    out.write(kMagic, 6);
    const unsigned char version[2] = {1, 0};
    out.write(reinterpret_cast<const char*>(version), 2);
    const std::size_t header_len = dict.size();
    if (header_len > 0xFFFF) throw ValidationError("npy: header too large for v1.0");
    const unsigned char len_bytes[2] = {static_cast<unsigned char>(header_len & 0xFF),
                                        static_cast<unsigned char>(header_len >> 8)};
    out.write(reinterpret_cast<const char*>(len_bytes), 2);
    out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size() * 4));
    if (!out) throw IoError("npy: write failed for " + path.string());
}

Tensor2<float> load_tensor2(const std::filesystem::path& path) {
    Array a = load(path);
    if (a.shape.size() != 2)
        throw ValidationError("npy: expected rank-2 array in " + path.string());
    Tensor2<float> t(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]));
    std::copy(a.data.begin(), a.data.end(), t.data());
    return t;
}

Tensor3<float> load_tensor3(const std::filesystem::path& path) {
    Array a = load(path);
    if (a.shape.size() != 3)
        throw ValidationError("npy: expected rank-3 array in " + path.string());
    Tensor3<float> t(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]),
                     static_cast<int>(a.shape[2]));
    std::copy(a.data.begin(), a.data.end(), t.data());
    return t;
}

void save_tensor2(const std::filesystem::path& path, const Tensor2<float>& t) {
    Array a;
    a.shape = {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())};
    a.data.assign(t.data(), t.data() + t.size());
    save(path, a);
}

void save_tensor3(const std::filesystem::path& path, const Tensor3<float>& t) {
    Array a;
    a.shape = {static_cast<std::size_t>(t.channels()), static_cast<std::size_t>(t.rows()),
               static_cast<std::size_t>(t.cols())};
    a.data.assign(t.data(), t.data() + t.size());
    save(path, a);
}

void save_scalar(const std::filesystem::path& path, float value) {
    Array a;
    a.shape = {1};
    a.data = {value};
    save(path, a);
}

}  // namespace calibra::npy
