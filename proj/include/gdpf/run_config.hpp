// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string_view>

#include "gdpf/experiment.hpp"

namespace gdpf {

/// Parses a run configuration file. Every key is optional except "case";
/// unknown keys, wrong types and out-of-range values raise InvalidConfig.
/// A relative case path is resolved against `base_dir`.
///
///   {
///     "case": "case14.m",
///     "seed": 1,
///     "threads": 1,
///     "scenario": {"injections_per_topology", "n2_pair_count", "n2_injections_per_topology",
///                  "load_sigma_global", "load_sigma_local", "correlation_length",
///                  "gen_outage_prob", "loss_margin"},
///     "train": {"epochs", "batch_size", "lr", "patience"},
///     "model": {"d_enc", "d_shared", "k", "leaky_slope"},
///     "experiment": {"methods", "seeds", "monitor_test"}
///   }
ExperimentConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});

ExperimentConfig load_run_config(const std::filesystem::path& path);

}  // namespace gdpf
