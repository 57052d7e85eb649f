// glass-audit: replays one shard, judges digests from clients and peers,
// and gossips with other auditors. Fork evidence goes to stdout as JSON
// lines; logs go to stderr.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "glassdb/auditor.hpp"
#include "glassdb/log.hpp"
#include "glassdb/transport.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string part; std::getline(in, part, ',');) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace glassdb;
  CLI::App app{"Ledger auditor"};
  std::string shard = "127.0.0.1:7001";
  std::string peers;
  std::string listen;
  std::string evidence_path;
  double interval_s = 10;
  bool once = false;
  AuditorOptions opts;
  app.add_option("--shard", shard, "endpoint of the audited shard");
  app.add_option("--peers", peers, "comma-separated endpoints of peer auditors");
  app.add_option("--listen", listen, "serve digest submissions on host:port");
  app.add_option("--interval-s", interval_s, "seconds between rounds")->check(CLI::PositiveNumber);
  app.add_option("--shard-id", opts.shard_id);
  app.add_option("--shards", opts.shards)->check(CLI::PositiveNumber);
  app.add_option("--checkpoint", opts.checkpoint_path, "checkpoint file, restored at start");
  app.add_option("--evidence", evidence_path, "append fork evidence here instead of stdout");
  app.add_flag("--require-registered", opts.require_registered_keys,
               "reject transactions from keys never registered with this auditor");
  app.add_flag("--once", once, "run one round; exit status 3 on a fork, 4 on a rejected block");
  CLI11_PARSE(app, argc, argv);

  try {
    auto [host, port] = parse_endpoint(shard);
    Auditor auditor(std::make_shared<TcpChannel>(host, port), opts);
    if (auditor.restore()) {
      auto d = auditor.digest();
      log_event("info", "audit", "restored", {{"block", std::to_string(d.block_no)}});
    }
    for (const auto& p : split(peers)) {
      auto [ph, pp] = parse_endpoint(p);
      auto ch = std::make_shared<TcpChannel>(ph, pp);
      auditor.add_peer(p, [ch](const LedgerDigest& d, std::string_view source) {
        return decode_verdict(ch->request(MsgKind::submit_digest, encode_submission(d, source)));
      });
    }
    std::unique_ptr<TcpServer> server;
    if (!listen.empty()) {
      auto [lh, lp] = parse_endpoint(listen);
      server = std::make_unique<TcpServer>(
          [&auditor](std::uint64_t, std::uint8_t kind, std::string_view payload) {
            return auditor.handle(kind, payload);
          },
          lh, lp);
      log_event("info", "audit", "listening", {{"address", lh + ":" + std::to_string(server->port())}});
    }
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    std::ofstream evidence_file;
    if (!evidence_path.empty()) evidence_file.open(evidence_path, std::ios::app);
    std::ostream& evidence_out = evidence_path.empty() ? std::cout : evidence_file;
    std::size_t reported = 0;
    bool rejected = false;

    while (!g_stop) {
      auto out = auditor.sync();
      if (out.verdict == AuditVerdict::rejected) {
        rejected = true;
        log_event("error", "audit", "block rejected",
                  {{"block", std::to_string(out.block_no)}, {"detail", out.detail}});
      } else if (out.verdict == AuditVerdict::deferred) {
        log_event("warn", "audit", "shard unavailable", {{"detail", out.detail}});
      }
      for (const auto& g : auditor.gossip()) {
        if (g.verdict == AuditVerdict::deferred) {
          log_event("warn", "audit", "peer unavailable", {{"detail", g.detail}});
        }
      }
      auto ev = auditor.evidence();
      for (; reported < ev.size(); ++reported) evidence_out << ev[reported].to_json() << std::endl;
      auto d = auditor.digest();
      log_event("info", "audit", "round",
                {{"block", std::to_string(d.block_no)}, {"digest", d.digest.hex()},
                 {"forks", std::to_string(ev.size())}});
      auditor.save_checkpoint();
      if (once) break;
      for (double waited = 0; waited < interval_s && !g_stop; waited += 0.1) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
    }
    if (server) server->stop();
    if (auditor.fork_detected()) return once ? 3 : 0;
    if (rejected && once) return 4;
  } catch (const std::exception& e) {
    log_event("error", "audit", "fatal", {{"error", e.what()}});
    return 1;
  }
  return 0;
}
