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

#include "inferix/metrics/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "inferix/common/rng.hpp"
#include "inferix/metrics/vde.hpp"

namespace inferix::metrics {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Split parse_split(const std::string& s, std::size_t line) {
  if (s.empty() || s == "unassigned") return Split::Unassigned;
  if (s == "train") return Split::Train;
  if (s == "eval") return Split::Eval;
  throw MetricError("manifest line " + std::to_string(line) + ": unknown split '" + s + "'");
}

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Eval: return "eval";
    case Split::Unassigned: return "unassigned";
  }
  return "?";
}

std::size_t Manifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == s; }));
}

std::size_t Manifest::count(Split s, const std::string& object_class) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) {
    return e.split == s && e.object_class == object_class;
  }));
}

std::map<std::string, std::size_t> Manifest::class_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& e : entries) ++out[e.object_class];
  return out;
}

Manifest read_manifest(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) header = split_row(line);
  }
  const std::vector<std::string> required = {"id", "source", "class", "duration_s"};
  if (header.size() < 4 || !std::equal(required.begin(), required.end(), header.begin()) ||
      (header.size() == 5 && header[4] != "split") || header.size() > 5) {
    throw MetricError("manifest: header must be id,source,class,duration_s[,split]");
  }
  Manifest m;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_row(line);
    if (f.size() != header.size()) {
      throw MetricError("manifest line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(f.size()));
    }
    ManifestEntry e;
    e.id = f[0];
    e.source = f[1];
    e.object_class = f[2];
    if (e.id.empty()) throw MetricError("manifest line " + std::to_string(lineno) + ": empty id");
    try {
      std::size_t used = 0;
      e.duration_s = std::stod(f[3], &used);
      if (used != f[3].size() || !(e.duration_s >= 0.0)) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw MetricError("manifest line " + std::to_string(lineno) + ": bad duration '" + f[3] + "'");
    }
    if (f.size() == 5) e.split = parse_split(f[4], lineno);
    if (!seen.insert(e.id).second) throw MetricError("manifest: duplicate id '" + e.id + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MetricError("cannot open manifest " + path.string());
  return read_manifest(in);
}

void write_manifest(std::ostream& out, const Manifest& m) {
  out << "id,source,class,duration_s,split\n";
  for (const auto& e : m.entries) {
    out << e.id << ',' << e.source << ',' << e.object_class << ',' << e.duration_s << ',' << to_string(e.split)
        << '\n';
  }
}

Manifest split_manifest(Manifest manifest, std::uint64_t seed, double train_fraction) {
  const std::size_t n = manifest.entries.size();
  if (n < 5) throw MetricError("split_manifest: need at least 5 entries, got " + std::to_string(n));
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw MetricError("split_manifest: train_fraction must be in (0, 1)");
  }
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[manifest.entries[i].object_class].push_back(i);

  // Largest-remainder apportionment of the train total across classes.
  const auto total_train = static_cast<std::size_t>(std::floor(train_fraction * double(n) + 0.5));
  struct Quota {
    std::string cls;
    std::size_t base;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [cls, idx] : by_class) {
    const double exact = train_fraction * double(idx.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({cls, base, exact - double(base)});
    assigned += base;
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; assigned < total_train && k < order.size(); ++k, ++assigned) ++quotas[order[k]].base;

  for (const auto& q : quotas) {
    auto idx = by_class[q.cls];
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto ha = mix64(seed, fnv1a64(manifest.entries[a].id));
      const auto hb = mix64(seed, fnv1a64(manifest.entries[b].id));
      return ha != hb ? ha < hb : manifest.entries[a].id < manifest.entries[b].id;
    });
    for (std::size_t k = 0; k < idx.size(); ++k) {
      manifest.entries[idx[k]].split = k < q.base ? Split::Train : Split::Eval;
    }
  }
  return manifest;
}

Manifest synthetic_manifest(const std::map<std::string, std::size_t>& per_class, std::uint64_t seed) {
  static const char* kSources[] = {"source_a", "source_b", "source_c", "source_d", "source_e"};
  Manifest m;
  SplitMix64 rng(seed);
  std::size_t k = 0;
  for (const auto& [cls, count] : per_class) {
    for (std::size_t i = 0; i < count; ++i, ++k) {
      ManifestEntry e;
      e.id = "vid" + std::to_string(100000 + k);
      e.source = kSources[rng.next() % 5];
      e.object_class = cls;
      e.duration_s = 50.0 + double(rng.next() % 1500) / 10.0;
      m.entries.push_back(std::move(e));
    }
  }
  // Interleave classes so file order carries no information.
  for (std::size_t i = m.entries.size(); i > 1; --i) std::swap(m.entries[i - 1], m.entries[rng.next() % i]);
  return m;
}

}  // namespace inferix::metrics
