// Copyright 2026 The Churn Lab Authors. All rights reserved.
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

#ifndef CHURN_LAB_CSV_H_
#define CHURN_LAB_CSV_H_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace churn_lab {

// Version stamped into the first line of every CSV the harness writes.
inline constexpr int kSchemaVersion = 1;

// "# schema: <name> v<kSchemaVersion>"
std::string schema_line(std::string_view name);
// Returns the schema name when `line` is a schema line of the current version.
std::optional<std::string> parse_schema_line(std::string_view line);

// Shortest representation that parses back to the same double.
std::string format_double(double value);
std::string format_optional(const std::optional<double>& value);

std::vector<std::string> split(std::string_view line, char sep);
// Strict parsers: the whole field must be consumed.
std::optional<double> parse_double(std::string_view field);
std::optional<long long> parse_int(std::string_view field);

}  // namespace churn_lab

#endif  // CHURN_LAB_CSV_H_
