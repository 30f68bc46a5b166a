#include "smg/server.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <iostream>

#include "httplib.h"
#include "json.hpp"

namespace smg::server {

using nlohmann::json;

namespace {

Response reply(int status, const json& body) { return {status, body.dump()}; }

Response failure(int status, const std::string& message) { return reply(status, json{{"error", message}}); }

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ArgumentError("base64 length is not a multiple of 4");
  if (text.empty()) return {};
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ArgumentError("malformed base64 payload");
  // EVP_DecodeBlock counts padding as zero bytes.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

Service::Service(std::filesystem::path styles_dir) : styles_dir_(std::move(styles_dir)) {
  try {
    library_ = std::make_unique<pipeline::StyleLibrary>(styles_dir_);
  } catch (const Error& e) {
    // An unreadable directory is reported per request rather than at startup.
    startup_error_ = e.what();
  }
}

Response Service::styles() {
  std::vector<pipeline::CatalogEntry> entries;
  try {
    if (!library_) library_ = std::make_unique<pipeline::StyleLibrary>(styles_dir_);
    entries = library_->rescan();
  } catch (const Error& e) {
    return failure(500, e.what());
  }
  json styles = json::array();
  json warnings = json::array();
  for (const auto& e : entries) {
    if (!e.ok()) {
      warnings.push_back({{"name", e.name}, {"warning", e.warning}});
      continue;
    }
    styles.push_back({{"name", e.name},
                      {"trained_at", e.trained_at},
                      {"lambda_gly", e.lambda_gly},
                      {"hashes", {{"glyph", e.glyph_sha256}, {"texture", e.texture_sha256}, {"sketch", e.sketch_sha256}}}});
  }
  json body{{"styles", styles}};
  if (!warnings.empty()) body["warnings"] = warnings;
  return reply(200, body);
}

Response Service::render(std::string_view body) {
  if (body.size() > kMaxPayloadBytes) return failure(400, "payload exceeds 16 MiB");
  if (!library_) return failure(503, "styles directory unavailable: " + startup_error_);

  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return failure(400, std::string("invalid JSON: ") + e.what());
  }
  if (!req.is_object()) return failure(400, "request body must be a JSON object");

  pipeline::RenderRequest r;
  if (!req.contains("l") || !req["l"].is_number()) return failure(400, "field 'l' must be a number");
  r.level = req["l"].get<double>();
  if (!(r.level >= 0.0 && r.level <= 1.0)) return failure(400, "field 'l' must lie in [0, 1]");
  if (req.contains("seed") && !req["seed"].is_null()) {
    if (!req["seed"].is_number_integer() || req["seed"].get<std::int64_t>() < 0) {
      return failure(400, "field 'seed' must be a nonnegative integer");
    }
    r.seed = req["seed"].get<std::uint64_t>();
  }
  auto text_field = [&](const char* key) -> std::string {
    if (!req.contains(key) || req[key].is_null()) return {};
    if (!req[key].is_string()) throw ArgumentError(std::string("field '") + key + "' must be a string");
    return req[key].get<std::string>();
  };
  std::string image_b64;
  bool invert = false;
  try {
    r.style = text_field("style");
    r.glyph_style = text_field("glyph_style");
    r.texture_style = text_field("texture_style");
    image_b64 = text_field("image_b64");
    if (req.contains("invert")) invert = req["invert"].get<bool>();
  } catch (const std::exception& e) {
    return failure(400, e.what());
  }
  const bool mash = !r.glyph_style.empty() && !r.texture_style.empty();
  if (r.style.empty() && !mash) return failure(400, "field 'style' is required");
  if (image_b64.empty()) return failure(400, "field 'image_b64' is required");

  std::vector<std::uint8_t> png;
  try {
    png = base64_decode(image_b64);
  } catch (const Error& e) {
    return failure(400, e.what());
  }

  try {
    r.text = imageio::decode_image(png, GridTag::text, invert);
  } catch (const Error& e) {
    return failure(422, std::string("undecodable image: ") + e.what());
  }

  try {
    const auto start = std::chrono::steady_clock::now();
    const ImageGrid out = library_->render(r);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const auto encoded = imageio::encode_png(out);
    return reply(200, json{{"image_b64", base64_encode(encoded)},
                           {"timing_ms", ms},
                           {"width", out.width},
                           {"height", out.height}});
  } catch (const LookupError& e) {
    return failure(404, e.what());
  } catch (const StateError& e) {
    return failure(503, e.what());
  } catch (const ShapeError& e) {
    return failure(422, e.what());
  } catch (const ArgumentError& e) {
    return failure(400, e.what());
  } catch (const Error& e) {
    return failure(500, e.what());
  }
}

Response Service::health() {
  const std::size_t loaded = library_ ? library_->loaded_count() : 0;
  return reply(200, json{{"status", "ok"}, {"loaded_styles", loaded}});
}

Response Service::rescan() {
  try {
    if (!library_) library_ = std::make_unique<pipeline::StyleLibrary>(styles_dir_);
    library_->rescan();
  } catch (const Error& e) {
    return failure(500, e.what());
  }
  return health();
}

std::filesystem::path resolve_styles_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SMG_STYLES_DIR"); env != nullptr && *env != '\0') return env;
  return "styles";
}

struct HttpServer::Impl {
  Service& service;
  httplib::Server http;

  explicit Impl(Service& s) : service(s) {
    // Oversized bodies still reach the handler so that it can answer 400 itself.
    http.set_payload_max_length(kMaxPayloadBytes + (std::size_t{1} << 20));
    http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    http.Get("/api/styles", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service.styles()); });
    http.Post("/api/render",
              [this, send](const httplib::Request& req, httplib::Response& res) { send(res, service.render(req.body)); });
    http.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
    http.Post("/api/rescan", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service.rescan()); });
    http.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      res.status = 500;
      res.set_content(json{{"error", what}}.dump(), "application/json");
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->http.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->http.stop();
}

}  // namespace smg::server
