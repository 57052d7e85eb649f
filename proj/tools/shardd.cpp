// shardd: one ledger shard behind the binary wire protocol.

#include <atomic>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "glassdb/log.hpp"
#include "glassdb/shardserver.hpp"
#include "glassdb/transport.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  using namespace glassdb;
  CLI::App app{"Ledger shard server"};
  std::string listen = "127.0.0.1:7001";
  std::string fault = "none";
  std::size_t workers = 4;
  ShardConfig cfg;
  app.set_config("--config", "", "TOML/INI file with the same keys as the flags");
  app.add_option("--listen", listen, "IPv4 host:port (port 0 picks one)");
  app.add_option("--data-dir", cfg.data_dir, "storage directory; empty keeps everything in memory");
  app.add_option("--persist-interval-ms", cfg.persist_interval_ms, "persistence period");
  app.add_option("--shard-id", cfg.shard_id);
  app.add_option("--shards", cfg.shards)->check(CLI::PositiveNumber);
  app.add_option("--fork-block", cfg.fork_block, "first forked block under --fault equivocate");
  app.add_option("--workers", workers)->check(CLI::PositiveNumber);
  app.add_option("--fault", fault, "fault injection for testing clients and auditors")
      ->check(CLI::IsMember({"none", "stale", "equivocate"}));
  bool no_fsync = false;
  app.add_flag("--no-fsync", no_fsync);
  CLI11_PARSE(app, argc, argv);

  cfg.fsync = !no_fsync;
  cfg.fault = fault == "stale"        ? FaultMode::stale_value
              : fault == "equivocate" ? FaultMode::equivocate
                                      : FaultMode::none;
  if (cfg.shard_id >= cfg.shards) {
    std::cerr << "--shard-id must be below --shards\n";
    return 2;
  }

  try {
    auto [host, port] = parse_endpoint(listen);
    ShardService service(cfg);
    TcpServer server(service, host, port, workers);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    auto d = service.ledger().digest();
    log_event("info", "shardd", "listening",
              {{"address", host + ":" + std::to_string(server.port())},
               {"shard", std::to_string(cfg.shard_id)},
               {"shards", std::to_string(cfg.shards)},
               {"data_dir", cfg.data_dir},
               {"block", std::to_string(d.block_no)},
               {"digest", d.digest.hex()},
               {"fault", fault}});
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    service.stop();
    d = service.ledger().digest();
    log_event("info", "shardd", "stopped",
              {{"block", std::to_string(d.block_no)}, {"digest", d.digest.hex()},
               {"stats", service.stats_json()}});
  } catch (const std::exception& e) {
    log_event("error", "shardd", "fatal", {{"error", e.what()}});
    return 1;
  }
  return 0;
}
