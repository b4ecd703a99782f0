// Offline stand-in for the external services (MT system, learned metric,
// sentence encoder, parser features, text transformation). Speaks the
// line-JSON protocol on stdin/stdout, or on a unix socket with --listen.

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "prequel/encoder.hpp"
#include "prequel/metrics.hpp"
#include "prequel/text.hpp"

using json = nlohmann::json;

namespace {

struct Options {
  std::string mode;
  long fail_every = 0;   // answer every Nth request with an error
  long crash_after = 0;  // exit after N requests
  std::size_t dim = 16;
  std::string listen;
  std::string crash_marker;   // crash only while this file does not exist
  double score_value = -1.0;  // scorer: constant score when >= 0
};

json handle(const Options& opt, const json& req, long n) {
  const auto id = req.at("id");
  if (opt.fail_every > 0 && n % opt.fail_every == 0) return {{"id", id}, {"error", "injected failure"}};
  if (opt.mode == "mt") return {{"id", id}, {"text", req.at("text")}};
  if (opt.mode == "scorer") {
    if (opt.score_value >= 0.0) return {{"id", id}, {"score", opt.score_value}};
    return {{"id", id},
            {"score", prequel::metrics::chrf_pp(req.at("hypothesis").get<std::string>(),
                                                req.at("reference").get<std::string>())}};
  }
  if (opt.mode == "encoder") {
    static const prequel::model::HashedNgramEncoder enc(opt.dim);
    return {{"id", id}, {"vector", enc.encode(req.at("text").get<std::string>())}};
  }
  if (opt.mode == "features") {
    const auto words = prequel::text::split_words(req.at("text").get<std::string>());
    std::size_t commas = 0;
    for (const auto& w : words) commas += w.find(',') != std::string::npos ? 1 : 0;
    return {{"id", id},
            {"features",
             {{"parse_tree_depth", 1.0 + static_cast<double>(words.size()) / 3.0},
              {"pos_VERB", static_cast<double>(words.size() / 4)},
              {"dep_advcl", static_cast<double>(commas)},
              {"dep_case", static_cast<double>(words.size() % 3)}}}};
  }
  if (opt.mode == "transform") {
    // Moves the last word to the front.
    auto words = prequel::text::split_words(req.at("text").get<std::string>());
    std::string out;
    if (!words.empty()) {
      out = words.back();
      for (std::size_t i = 0; i + 1 < words.size(); ++i) out += " " + words[i];
    }
    return {{"id", id}, {"text", out}};
  }
  return {{"id", id}, {"error", "unknown mode"}};
}

// Returns false when the crash budget is used up.
bool serve(const Options& opt, std::FILE* in, std::FILE* out, long& count) {
  char* line = nullptr;
  std::size_t cap = 0;
  ssize_t len;
  while ((len = getline(&line, &cap, in)) > 0) {
    std::string s(line, static_cast<std::size_t>(len));
    if (prequel::text::trim(s).empty()) continue;
    ++count;
    if (opt.crash_after > 0 && count > opt.crash_after &&
        (opt.crash_marker.empty() || !std::filesystem::exists(opt.crash_marker))) {
      if (!opt.crash_marker.empty()) std::ofstream(opt.crash_marker) << "crashed\n";
      std::free(line);
      return false;
    }
    json resp;
    try {
      resp = handle(opt, json::parse(s), count);
    } catch (const std::exception& e) {
      resp = {{"id", nullptr}, {"error", e.what()}};
    }
    std::string dumped = resp.dump();
    dumped += '\n';
    std::fwrite(dumped.data(), 1, dumped.size(), out);
    std::fflush(out);
  }
  std::free(line);
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"prequel mock service"};
  app.add_option("mode", opt.mode, "mt | scorer | encoder | features | transform")
      ->required()
      ->check(CLI::IsMember({"mt", "scorer", "encoder", "features", "transform"}));
  app.add_option("--fail-every", opt.fail_every, "error on every Nth request");
  app.add_option("--crash-after", opt.crash_after, "exit after N requests");
  app.add_option("--crash-marker", opt.crash_marker, "crash only once: marker file written on crash");
  app.add_option("--dim", opt.dim, "encoder vector width");
  app.add_option("--score", opt.score_value, "scorer: constant score");
  app.add_option("--listen", opt.listen, "serve on a unix socket instead of stdio");
  CLI11_PARSE(app, argc, argv);

  long count = 0;
  if (opt.listen.empty()) return serve(opt, stdin, stdout, count) ? 0 : 3;

  const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (opt.listen.size() >= sizeof addr.sun_path) return 1;
  std::copy(opt.listen.begin(), opt.listen.end(), addr.sun_path);
  ::unlink(opt.listen.c_str());
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 4) != 0) {
    std::perror("listen");
    return 1;
  }
  for (;;) {
    const int conn = ::accept(fd, nullptr, nullptr);
    if (conn < 0) continue;
    std::FILE* in = ::fdopen(conn, "r");
    std::FILE* out = ::fdopen(::dup(conn), "w");
    const bool alive = serve(opt, in, out, count);
    std::fclose(in);
    std::fclose(out);
    if (!alive) opt.crash_after = 0;  // crash once, then keep serving
  }
}
