#include "asap/auxtext.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "asap/errors.hpp"
#include "asap/image_io.hpp"

namespace fs = std::filesystem;

namespace asap {

const std::string& caption_instruction() {
  static const std::string s = "Give the caption of this picture";
  return s;
}

std::string explanation_instruction(const std::string& text) {
  return "Refer to the following text to describe the specific information "
         "of the corresponding image: " +
         text;
}

AuxTextConfig AuxTextConfig::from_env() {
  AuxTextConfig cfg;
  if (const char* e = std::getenv("ASAP_LLM_ENDPOINT")) cfg.endpoint = e;
  if (const char* k = std::getenv("ASAP_LLM_KEY")) cfg.api_key = k;
  return cfg;
}

namespace {

std::string base64(const std::vector<uint8_t>& data) {
  static const char* table =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  for (size_t i = 0; i < data.size(); i += 3) {
    uint32_t v = static_cast<uint32_t>(data[i]) << 16;
    if (i + 1 < data.size()) v |= static_cast<uint32_t>(data[i + 1]) << 8;
    if (i + 2 < data.size()) v |= static_cast<uint32_t>(data[i + 2]);
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += i + 1 < data.size() ? table[(v >> 6) & 63] : '=';
    out += i + 2 < data.size() ? table[v & 63] : '=';
  }
  return out;
}

uint64_t fnv1a(const std::string& s, uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct Endpoint {
  std::string scheme, host, path;
  int port = 80;
};

Endpoint parse_endpoint(const std::string& url) {
  Endpoint e;
  auto rest = url;
  const auto scheme_end = rest.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("endpoint must start with http://");
  e.scheme = rest.substr(0, scheme_end);
  rest = rest.substr(scheme_end + 3);
  const auto slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  e.path = slash == std::string::npos ? "/" : rest.substr(slash);
  const auto colon = hostport.find(':');
  if (colon == std::string::npos) {
    e.host = hostport;
    e.port = e.scheme == "https" ? 443 : 80;
  } else {
    e.host = hostport.substr(0, colon);
    e.port = std::stoi(hostport.substr(colon + 1));
  }
  return e;
}

}  // namespace

AuxTextClient::AuxTextClient(AuxTextConfig cfg) : cfg_(std::move(cfg)) {}

std::optional<std::string> AuxTextClient::cache_lookup(
    const std::string& key) const {
  if (cfg_.cache_dir.empty()) return std::nullopt;
  const fs::path p = fs::path(cfg_.cache_dir) / key;
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void AuxTextClient::cache_store(const std::string& key,
                                const std::string& value) const {
  if (cfg_.cache_dir.empty()) return;
  fs::create_directories(cfg_.cache_dir);
  std::ofstream out(fs::path(cfg_.cache_dir) / key, std::ios::binary);
  out << value;
}

std::string AuxTextClient::generate(AuxKind kind, const std::string& content,
                                    const ImageU8* image,
                                    const std::string& fallback) {
  if (!enabled()) return fallback;

  const char* kind_name = kind == AuxKind::caption ? "caption" : "explanation";
  std::string key_material = std::string(kind_name) + '\0' + content;
  std::vector<uint8_t> png_bytes;
  if (image) {
    png_bytes = encode_png(*image);
    key_material.append(reinterpret_cast<const char*>(png_bytes.data()),
                        png_bytes.size());
  }
  char keybuf[48];
  std::snprintf(keybuf, sizeof(keybuf), "%s-%016llx.txt", kind_name,
                static_cast<unsigned long long>(fnv1a(key_material)));
  const std::string key = keybuf;

  if (auto hit = cache_lookup(key)) return *hit;

  try {
    const Endpoint ep = parse_endpoint(cfg_.endpoint);
    if (ep.scheme != "http")
      throw ConfigError("only http:// endpoints are supported");
    httplib::Client client(ep.host, ep.port);
    client.set_connection_timeout(10);
    client.set_read_timeout(60);

    nlohmann::json message;
    message["role"] = "user";
    if (image) {
      nlohmann::json parts = nlohmann::json::array();
      parts.push_back({{"type", "text"}, {"text", content}});
      parts.push_back(
          {{"type", "image_url"},
           {"image_url",
            {{"url", "data:image/png;base64," + base64(png_bytes)}}}});
      message["content"] = parts;
    } else {
      message["content"] = content;
    }
    nlohmann::json body;
    if (!cfg_.model.empty()) body["model"] = cfg_.model;
    body["messages"] = nlohmann::json::array({message});

    httplib::Headers headers;
    if (!cfg_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    ++requests_sent_;
    auto res = client.Post(ep.path, headers, body.dump(), "application/json");
    if (!res || res->status != 200)
      throw ConfigError("request failed with status " +
                        std::to_string(res ? res->status : -1));
    const auto j = nlohmann::json::parse(res->body);
    const std::string text =
        j.at("choices").at(0).at("message").at("content").get<std::string>();
    cache_store(key, text);
    return text;
  } catch (const std::exception& e) {
    std::cerr << "[asap] warning: auxiliary " << kind_name
              << " request failed (" << e.what() << "); using stub text\n";
    return fallback;
  }
}

}  // namespace asap
