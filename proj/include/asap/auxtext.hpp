#pragma once

// Optional remote generation of auxiliary captions and explanation texts
// through a chat-completion-style HTTP endpoint, with a content-addressed
// on-disk cache and silent fallback to the template stubs.

#include <optional>
#include <string>

#include "asap/image.hpp"

namespace asap {

// Instruction templates sent to the remote models.
const std::string& caption_instruction();
std::string explanation_instruction(const std::string& text);

enum class AuxKind { caption, explanation };

struct AuxTextConfig {
  std::string endpoint;   // e.g. http://host:8000/v1/chat/completions
  std::string api_key;    // sent as a bearer token when set
  std::string model;      // optional model name field
  std::string cache_dir;  // responses cached here when set

  // Reads ASAP_LLM_ENDPOINT and ASAP_LLM_KEY.
  static AuxTextConfig from_env();
};

class AuxTextClient {
 public:
  explicit AuxTextClient(AuxTextConfig cfg);

  bool enabled() const { return !cfg_.endpoint.empty(); }

  // Returns the remote text for the request, or `fallback` when the
  // endpoint is unset or the request fails (a warning is logged). `image`
  // is attached base64-encoded for caption requests.
  std::string generate(AuxKind kind, const std::string& content,
                       const ImageU8* image, const std::string& fallback);

  // Requests issued over the network (cache hits excluded).
  int requests_sent() const { return requests_sent_; }

 private:
  std::optional<std::string> cache_lookup(const std::string& key) const;
  void cache_store(const std::string& key, const std::string& value) const;

  AuxTextConfig cfg_;
  int requests_sent_ = 0;
};

}  // namespace asap
