// Copyright 2026 The Inferix Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <json.hpp>

namespace inferix::stream {

// Deterministic wire vectors shared with other codec implementations (the
// browser console checks itself against the same file). Each "valid" entry
// holds the encoded bytes as hex plus the decoded fields; each "invalid" entry
// holds bytes a conforming decoder must reject (or, for truncation, wait on).
nlohmann::json golden_wire_vectors();

}  // namespace inferix::stream
