#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "vqskill/errors.hpp"
#include "vqskill/planner_high.hpp"

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <cstdlib>

namespace vqskill {

namespace {

std::string base64(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string image_mime(const std::string& bytes) {
  if (bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0) return "image/png";
  return "image/jpeg";
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("LLM endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpLlmClient::HttpLlmClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.retries < 0) throw ConfigError("retries must be >= 0");
  if (!(cfg_.timeout_s > 0.0)) throw ConfigError("timeout_s must be positive");
  split_endpoint(cfg_.endpoint);
  const char* tok = std::getenv(cfg_.credential_env.c_str());
  if (!tok || !*tok) throw ConfigError("environment variable " + cfg_.credential_env + " is not set");
  token_ = tok;
}

std::string HttpLlmClient::send(const LlmRequest& request) {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", request.prompt}});
  for (const auto& img : request.images)
    content.push_back(
        {{"type", "image_url"}, {"image_url", {{"url", "data:" + image_mime(img) + ";base64," + base64(img)}}}});
  const nlohmann::json body = {{"model", cfg_.model},
                               {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
  const std::string payload = body.dump();

  const Endpoint ep = split_endpoint(cfg_.endpoint);
  httplib::Client cli(ep.origin);
  const auto secs = static_cast<time_t>(cfg_.timeout_s);
  const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  const httplib::Headers headers{{"Authorization", "Bearer " + token_}};

  const int attempts = cfg_.retries + 1;
  std::string last;
  for (int a = 1; a <= attempts; ++a) {
    auto res = cli.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw ClientError("HTTP " + std::to_string(res->status) + ": " + res->body, a);
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ClientError(std::string("malformed response body: ") + e.what(), a);
    }
  }
  throw ClientError(last, attempts);
}

}  // namespace vqskill
