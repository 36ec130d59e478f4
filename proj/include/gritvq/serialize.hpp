#pragma once

// JSON (de)serialization for spec types. Parsers reject unknown fields so a
// typo in a config file fails loudly instead of silently using a default.

#include <json.hpp>

#include "gritvq/codebook.hpp"
#include "gritvq/radius.hpp"

namespace gritvq {

nlohmann::json radius_spec_to_json(const RadiusSpec& spec);
RadiusSpec radius_spec_from_json(const nlohmann::json& j);

nlohmann::json codebook_to_json(const CodebookState& state);
CodebookState codebook_from_json(const nlohmann::json& j);

nlohmann::json transform_spec_to_json(const TransformSpec& spec);
TransformSpec transform_spec_from_json(const nlohmann::json& j);

}  // namespace gritvq
