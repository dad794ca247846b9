#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rit/numerics/gradcheck.hpp"

namespace rit::cli {

/// Finite-difference results of one layer over a range of seeds.
struct LayerCheck {
  std::string layer;
  std::vector<std::string> parameter_groups;
  std::size_t seeds = 0;
  std::size_t entries = 0;
  std::size_t kinks_skipped = 0;
  double max_rel_error = 0.0;
  std::string worst;  ///< "seed <s>: <entry>"
  bool pass = false;
};

/// Names of every layer the suite checks, in report order.
std::vector<std::string> gradcheck_layers();

/// Runs the check of `layer` for seeds [first_seed, first_seed + seeds) at
/// miniature sizes. Parameters are drawn from the seed and norm affines are
/// moved off (1, 0) so the check runs at a generic point.
LayerCheck check_layer(const std::string& layer, std::uint64_t first_seed, std::size_t seeds, double tolerance,
                       const nn::GradCheckOptions& options = {});

std::vector<LayerCheck> run_gradcheck_suite(std::uint64_t first_seed, std::size_t seeds, double tolerance,
                                            const nn::GradCheckOptions& options = {});

/// Fixed-width table, one row per layer.
std::string gradcheck_table(const std::vector<LayerCheck>& checks);

}  // namespace rit::cli
