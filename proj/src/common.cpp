#include "tosopt/common.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace tosopt {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::Sampling: return "sampling";
    case ErrorKind::Template: return "template";
    case ErrorKind::Gateway: return "gateway";
    case ErrorKind::ClassificationParse: return "classification-parse";
    case ErrorKind::Expansion: return "expansion";
    case ErrorKind::Config: return "config";
    case ErrorKind::Training: return "training";
    case ErrorKind::Precondition: return "precondition";
  }
  return "unknown";
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string content_digest(std::string_view text) {
  std::uint64_t a = fnv1a64(text);
  std::uint64_t b = fnv1a64(text, 0xcbf29ce484222325ULL ^ 0x9e3779b97f4a7c15ULL);
  return to_hex(a) + to_hex(b);
}

std::string trim(std::string_view s) {
  size_t begin = 0;
  size_t end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return std::string(s.substr(begin, end - begin));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open file: " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ConfigError("cannot open file for writing: " + path.string());
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) {
    throw ConfigError("write failed: " + path.string());
  }
}

}  // namespace tosopt
