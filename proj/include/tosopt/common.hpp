#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tosopt {

enum class ErrorKind {
  Parse,
  Integrity,
  Sampling,
  Template,
  Gateway,
  ClassificationParse,
  Expansion,
  Config,
  Training,
  Precondition,
};

const char* to_string(ErrorKind kind);

/// Base of all typed errors raised by the library. The CLI maps these to
/// machine-readable JSON on stderr.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(ErrorKind::Parse, m) {}
};
struct IntegrityError : Error {
  explicit IntegrityError(const std::string& m) : Error(ErrorKind::Integrity, m) {}
};
struct SamplingError : Error {
  explicit SamplingError(const std::string& m) : Error(ErrorKind::Sampling, m) {}
};
struct TemplateError : Error {
  explicit TemplateError(const std::string& m) : Error(ErrorKind::Template, m) {}
};
struct GatewayError : Error {
  GatewayError(const std::string& m, std::string phase, int attempts)
      : Error(ErrorKind::Gateway, m), phase(std::move(phase)), attempts(attempts) {}
  std::string phase;
  int attempts = 0;
};
struct ClassificationParseError : Error {
  explicit ClassificationParseError(const std::string& m)
      : Error(ErrorKind::ClassificationParse, m) {}
};
/// Raised by backends on connection/protocol failure; the gateway retry loop
/// consumes these and surfaces a GatewayError once attempts are exhausted.
struct TransportError : Error {
  explicit TransportError(const std::string& m) : Error(ErrorKind::Gateway, m) {}
};
struct ExpansionError : Error {
  explicit ExpansionError(const std::string& m) : Error(ErrorKind::Expansion, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& m) : Error(ErrorKind::Training, m) {}
};
struct PreconditionError : Error {
  explicit PreconditionError(const std::string& m) : Error(ErrorKind::Precondition, m) {}
};

/// FNV-1a over the bytes of `text`, xor-folded with `basis`.
std::uint64_t fnv1a64(std::string_view text,
                      std::uint64_t basis = 1469598103934665603ULL);

/// 32-hex-char content digest (two independent FNV-1a streams). Used for
/// cache keys and prompt fingerprints; not cryptographic.
std::string content_digest(std::string_view text);

std::string to_hex(std::uint64_t v);

std::string trim(std::string_view s);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace tosopt
