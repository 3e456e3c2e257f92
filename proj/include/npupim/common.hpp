/*
 * Copyright 2026 The npupim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace npupim {

using Cycle = std::uint64_t;
using Bytes = std::uint64_t;

/// Invalid or inconsistent configuration. The message names the offending field.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed dataset / workload input.
class WorkloadError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A command stream that breaks the PIM/DRAM protocol (controller bug).
class ProtocolError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// Capacity exhaustion (KV pages, batch slots).
class CapacityError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// The simulation made no progress for a full deadlock epoch.
class DeadlockError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

constexpr std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace npupim
