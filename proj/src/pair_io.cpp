#include "sam/pair_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "sam/errors.hpp"

namespace sam {

namespace {

using nlohmann::json;

void append_matrix(std::string& out, const Matrix& m, std::size_t used_cols) {
    out += '[';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (i) out += ',';
        out += '[';
        for (std::size_t j = 0; j < used_cols; ++j) {
            if (j) out += ',';
            out += format_double(m(i, j));
        }
        out += ']';
    }
    out += ']';
}

void append_side(std::string& out, const FeatureSide& side) {
    out += "{\"keypoints\":";
    append_matrix(out, side.keypoints.points, 3);
    out += ",\"descriptors\":";
    append_matrix(out, side.descriptors, side.descriptors.cols());
    out += '}';
}

Matrix matrix_from_json(const json& j, const char* what) {
    if (!j.is_array()) throw InputError(std::string("pair file: '") + what + "' is not an array");
    const std::size_t rows = j.size();
    const std::size_t cols = rows ? j[0].size() : 0;
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!j[i].is_array() || j[i].size() != cols) {
            throw InputError(std::string("pair file: ragged rows in '") + what + "'");
        }
        for (std::size_t c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

FeatureSide side_from_json(const json& j, ImageSize size, const char* which) {
    FeatureSide s;
    s.keypoints.points = matrix_from_json(j.at("keypoints"), "keypoints");
    s.keypoints.image_size = size;
    s.descriptors = matrix_from_json(j.at("descriptors"), "descriptors");
    if (s.keypoints.points.cols() != 3) {
        throw InputError(std::string("pair file: ") + which + " keypoints need 3 columns");
    }
    if (s.descriptors.rows() != s.keypoints.points.rows()) {
        throw InputError(std::string("pair file: ") + which +
                         " descriptor count does not match keypoint count");
    }
    for (std::size_t i = 0; i < s.keypoints.size(); ++i) {
        const double conf = s.keypoints.points(i, 2);
        if (conf < 0.0 || conf > 1.0) {
            throw InputError(std::string("pair file: ") + which + " confidence outside [0,1]");
        }
    }
    return s;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string pair_to_json(const FeaturePair& pair) {
    const ImageSize size = pair.source.keypoints.image_size;
    std::string out = "{\"image_size\":[" + format_double(size.width) + "," +
                      format_double(size.height) + "],\"source\":";
    append_side(out, pair.source);
    out += ",\"target\":";
    append_side(out, pair.target);
    out += ",\"homography\":";
    append_matrix(out, pair.gt_homography.matrix(), 3);
    out += ",\"seed\":" + std::to_string(pair.seed) + "}\n";
    return out;
}

FeaturePair pair_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("pair file: ") + e.what());
    }
    try {
        const ImageSize size{j.at("image_size").at(0).get<double>(),
                             j.at("image_size").at(1).get<double>()};
        FeaturePair p;
        p.source = side_from_json(j.at("source"), size, "source");
        p.target = side_from_json(j.at("target"), size, "target");
        p.gt_homography = Homography(matrix_from_json(j.at("homography"), "homography"));
        p.seed = j.at("seed").get<std::uint64_t>();
        return p;
    } catch (const json::exception& e) {
        throw InputError(std::string("pair file: ") + e.what());
    }
}

void save_pair(const std::filesystem::path& path, const FeaturePair& pair) {
    write_text_file(path, pair_to_json(pair));
}

FeaturePair load_pair(const std::filesystem::path& path) {
    try {
        return pair_from_json(read_text_file(path));
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace sam
