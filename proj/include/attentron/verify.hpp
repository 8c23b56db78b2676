#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace attentron::verify {

struct CheckOutcome {
  std::string suite;
  std::string name;
  std::size_t instances = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;  // worst instance, for failures
};

struct VerifyOptions {
  std::uint64_t seed = 0x5eed;
  int instances = 20;
  /// Name of a gradient check whose analytic gradient is deliberately
  /// corrupted, to show the suite catches it.
  std::string inject_fault;
};

/// Names of every gradient check, in run order.
std::vector<std::string> gradient_check_names();

/// Central-difference checks at 64 bit for every autograd primitive and for
/// the tiny end-to-end model; max relative error must stay below 1e-4.
std::vector<CheckOutcome> gradient_suite(const VerifyOptions& opts = {});

/// DTW against brute-force enumeration of monotone paths (200 pairs).
std::vector<CheckOutcome> dtw_suite(const VerifyOptions& opts = {});

/// Attention and pooling invariants on random reference sets.
std::vector<CheckOutcome> invariant_suite(const VerifyOptions& opts = {});

bool all_passed(const std::vector<CheckOutcome>& outcomes);

}  // namespace attentron::verify
