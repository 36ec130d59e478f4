#pragma once

#include <cmath>
#include <string>

#include <json.hpp>

#include "gritvq/mat.hpp"

namespace gritvq {

using json = nlohmann::json;

inline json mat_to_json(const Mat& m) {
    json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["data"] = m.data;
    return j;
}

inline Mat mat_from_json(const json& j) {
    for (const auto& [key, _] : j.items())
        if (key != "rows" && key != "cols" && key != "data")
            throw DomainError("matrix json: unknown field '" + key + "'");
    if (!j.contains("rows") || !j.contains("cols") || !j.contains("data"))
        throw DomainError("matrix json: missing rows/cols/data");
    if (!j.at("rows").is_number_integer() || !j.at("cols").is_number_integer() || !j.at("data").is_array())
        throw DomainError("matrix json: rows/cols must be integers and data an array");
    const long rows = j.at("rows").get<long>();
    const long cols = j.at("cols").get<long>();
    if (rows < 0 || cols < 0) throw DomainError("matrix json: negative dimension");
    Mat m(rows, cols);
    const auto& data = j.at("data");
    if (static_cast<long>(data.size()) != rows * cols)
        throw DomainError("matrix json: data length " + std::to_string(data.size()) + " != rows*cols");
    for (size_t i = 0; i < m.data.size(); ++i) {
        if (!data[i].is_number()) throw DomainError("matrix json: non-numeric entry");
        m.data[i] = data[i].get<double>();
        if (!std::isfinite(m.data[i])) throw DomainError("matrix json: non-finite entry");
    }
    return m;
}

inline json envelope(const std::string& kind) {
    json j;
    j["version"] = 1;
    j["kind"] = kind;
    j["tensors"] = json::object();
    return j;
}

inline void check_envelope(const json& j, const std::string& kind) {
    if (!j.contains("version") || j.at("version").get<int>() != 1)
        throw DomainError("envelope: unsupported version");
    if (!j.contains("kind") || j.at("kind").get<std::string>() != kind)
        throw DomainError("envelope: expected kind '" + kind + "'");
}

}  // namespace gritvq
