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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace inferix::metrics {

enum class Split { Unassigned, Train, Eval };

const char* to_string(Split s);

struct ManifestEntry {
  std::string id;
  std::string source;        // dataset tag
  std::string object_class;  // e.g. humans / animals / environment
  double duration_s = 0.0;
  Split split = Split::Unassigned;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::size_t count(Split s) const;
  std::size_t count(Split s, const std::string& object_class) const;
  std::map<std::string, std::size_t> class_counts() const;
};

// Comma-separated with a header row: id,source,class,duration_s[,split].
// Fields are unquoted. Throws MetricError on malformed rows or duplicate ids.
Manifest read_manifest(std::istream& in);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const Manifest& m);

// Deterministic train/eval assignment. Within each class, entries are ordered
// by a hash of (seed, id) and the first share goes to train. Per-class shares
// are apportioned by largest remainder so the train total is exactly
// round(train_fraction * N) and class proportions match in both splits.
// Throws MetricError for fewer than 5 entries.
Manifest split_manifest(Manifest manifest, std::uint64_t seed, double train_fraction = 0.8);

// A manifest with the given number of entries per class, for tests and demos.
Manifest synthetic_manifest(const std::map<std::string, std::size_t>& per_class, std::uint64_t seed);

}  // namespace inferix::metrics
