/*
 * Copyright (c) 2026 The quantforge Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef QUANTFORGE_ARCHIVE_HPP
#define QUANTFORGE_ARCHIVE_HPP

#include "quantforge/graph.hpp"

#include <filesystem>
#include <variant>

namespace quantforge
{

/*
 * Tensor archive: a directory holding `manifest.json` plus one raw blob per
 * tensor (little-endian float32, row-major, no header; labels are int64le).
 * The manifest lists nodes in topological order with their kinds, specs,
 * parameter blobs, and optional quantizer state.
 */

inline constexpr const char *manifest_name = "manifest.json";

ModelGraph load_model(const std::filesystem::path &dir);
void save_model(const ModelGraph &g, const std::filesystem::path &dir);

CalibrationSet load_calibration(const std::filesystem::path &dir);
void save_calibration(const CalibrationSet &set, const std::filesystem::path &dir);

using Archive = std::variant<ModelGraph, CalibrationSet>;
Archive load_archive(const std::filesystem::path &dir);

} // namespace quantforge

#endif // QUANTFORGE_ARCHIVE_HPP
