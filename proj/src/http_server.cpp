#include <httplib.h>

#include <thread>

#include "ticketing/engine.hpp"

namespace ticketing::engine {

struct HttpServer::Impl {
  Engine& engine;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Engine& e) : engine(e) {}

  void serve(const httplib::Request& req, httplib::Response& res) {
    ApiRequest api;
    api.method = req.method;
    api.path = req.path;
    for (const auto& [k, v] : req.params) api.query[k] = v;
    api.body = req.body;
    api.ip = req.remote_addr;
    const auto auth = req.get_header_value("Authorization");
    if (auth.rfind("Bearer ", 0) == 0) api.auth_token = auth.substr(7);

    const ApiResponse out = engine.handle(api);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  }
};

HttpServer::HttpServer(Engine& engine) : impl_(std::make_unique<Impl>(engine)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    impl_->serve(req, res);
  };
  const char* any = R"(/.*)";
  impl_->server.Get(any, handler);
  impl_->server.Post(any, handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port, int worker_threads) {
  if (impl_->thread.joinable()) throw std::logic_error("http server already started");
  impl_->server.new_task_queue = [worker_threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(worker_threads));
  };
  // Reconnecting every few requests costs more than holding the socket.
  impl_->server.set_keep_alive_max_count(100000);
  impl_->server.set_tcp_nodelay(true);
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    port_ = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpServer::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

}  // namespace ticketing::engine
