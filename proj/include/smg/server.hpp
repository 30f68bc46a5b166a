#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smg/pipeline.hpp"

namespace smg::server {

inline constexpr std::size_t kMaxPayloadBytes = std::size_t{16} << 20;

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// ArgumentError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

struct Response {
  int status = 200;
  std::string body;  ///< JSON
};

/**
 * Transport-independent request handlers over one styles directory. Handlers
 * never mutate bundles and may run concurrently.
 */
class Service {
 public:
  explicit Service(std::filesystem::path styles_dir);

  Response styles();
  Response render(std::string_view body);
  Response health();
  Response rescan();

  pipeline::StyleLibrary& library() noexcept { return *library_; }

 private:
  std::filesystem::path styles_dir_;
  std::unique_ptr<pipeline::StyleLibrary> library_;
  std::string startup_error_;
};

/// --styles-dir when given, else $SMG_STYLES_DIR, else ./styles.
std::filesystem::path resolve_styles_dir(const std::string& flag);

/// HTTP/1.1 front end for a Service with permissive CORS.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port) and returns the bound port; IoError on failure.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace smg::server
