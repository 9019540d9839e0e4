/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include "vgssl/trainer.hpp"

#include <filesystem>
#include <string_view>

namespace vgssl::ckpt {

inline constexpr std::string_view kHeader = "VGSSL-CKPT-1";

/// A saved run: its configuration and everything needed to resume it.
struct Checkpoint {
    train::TrainConfig config;
    train::TrainState state;
};

/// JSON text: the header string, the completed epoch count, the configuration,
/// a manifest of tensors (name, shape, offset into the flat data array) and
/// the flat data itself. Covers online, target and predictor parameters,
/// batch-norm running statistics and the Adam moments.
void save_checkpoint(const std::filesystem::path& path, const train::TrainConfig& cfg,
                     const train::TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace vgssl::ckpt
