#pragma once

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "ope/core.hpp"

namespace ope {

using Json = nlohmann::ordered_json;

Json state_to_json(const State& x);
State state_from_json(const Json& j);

// JSONL: a header line {"T","gamma","env","seed","policy"}, then one trajectory per line.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ope
