#include <csignal>
#include <condition_variable>
#include <iostream>
#include <mutex>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "ticketing/engine.hpp"

namespace {
std::mutex g_mu;
std::condition_variable g_cv;
volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ticketd: train ticketing engine over HTTP"};
  std::string config_path;
  int port = -1;
  app.add_option("--config", config_path, "engine config JSON")->required()->check(CLI::ExistingFile);
  app.add_option("--port", port, "override listen.port (0 picks a free port)");
  CLI11_PARSE(app, argc, argv);

  try {
    auto config = ticketing::engine::EngineConfig::load(config_path);
    if (port >= 0) config.listen_port = port;
    ticketing::engine::Engine engine(config);
    engine.start_background();

    ticketing::engine::HttpServer server(engine);
    const int bound = server.start(config.listen_host, config.listen_port, config.worker_threads);
    spdlog::info("listening on {}:{}", config.listen_host, bound);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::unique_lock lock(g_mu);
    while (!g_stop) g_cv.wait_for(lock, std::chrono::milliseconds(200));

    spdlog::info("shutting down");
    server.stop();
    engine.stop_background();
  } catch (const std::exception& e) {
    std::cerr << "ticketd: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
