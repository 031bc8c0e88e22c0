#pragma once

#include <string>

#include "policyscope/inference.hpp"

namespace policyscope::io {

inline constexpr int kCertificateFormatVersion = 1;

// Certificates persist as one self-describing JSON document: prior ranges,
// flow hyperparameters, every weight/bias/mask array, reward normalization,
// r*, the config echo and per-round diagnostics. Doubles are written in
// shortest round-trip form, so save -> load reproduces densities exactly.
std::string certificate_to_string(const inference::PosteriorCertificate& cert);
void save_certificate(const inference::PosteriorCertificate& cert, const std::string& path);

// Rejects unknown format_version explicitly; malformed input raises a parse
// error with the byte offset or the offending field path.
inference::PosteriorCertificate load_certificate(const std::string& path);
inference::PosteriorCertificate certificate_from_string(const std::string& text);

// Flat key = value run configuration ('#' starts a comment). Keys mirror the
// DiscoverConfig fields; unknown keys are errors.
inference::DiscoverConfig parse_config_text(const std::string& text);
inference::DiscoverConfig parse_config_file(const std::string& path);

// Shortest round-trip decimal form, locale-independent.
std::string fmt_double(double v);

}  // namespace policyscope::io
