// glass-cli: interactive client shell. Reads commands from stdin, or from
// -c "cmd; cmd; ...".

#include <iostream>
#include <optional>
#include <sstream>

#include <unistd.h>

#include <CLI11.hpp>

#include "glassdb/auditor.hpp"
#include "glassdb/client.hpp"
#include "glassdb/crypto.hpp"
#include "glassdb/transport.hpp"

namespace {

using namespace glassdb;

constexpr const char* kHelp =
    "commands:\n"
    "  begin                 start a transaction\n"
    "  get <key>             read in the open transaction\n"
    "  put <key> <value>     buffer a write\n"
    "  commit                commit; prints the promised blocks\n"
    "  abort                 drop the open transaction\n"
    "  verify [all]          verify due items (all: wait for everything)\n"
    "  history <key> [n]     newest n proven versions\n"
    "  digest [shard]        fetch and verify the shard digest\n"
    "  audit [endpoint]      submit cached digests to the auditors\n"
    "  help | quit\n";

struct Shell {
  Session session;
  std::optional<TxnId> txn;
  std::vector<std::string> auditors;  // by shard

  int run(std::istream& in, bool prompt) {
    std::string line;
    int failures = 0;
    if (prompt) std::cout << "> " << std::flush;
    while (std::getline(in, line)) {
      std::istringstream words(line);
      std::vector<std::string> argv;
      for (std::string w; words >> w;) argv.push_back(w);
      if (!argv.empty()) {
        if (argv[0] == "quit" || argv[0] == "exit") break;
        try {
          exec(argv);
        } catch (const Error& e) {
          ++failures;
          std::cout << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
        }
      }
      if (prompt) std::cout << "> " << std::flush;
    }
    return failures == 0 ? 0 : 1;
  }

  const TxnId& open() {
    if (!txn) fail(ErrorCode::invalid_input, "no open transaction; run begin");
    return *txn;
  }

  void exec(const std::vector<std::string>& a) {
    const auto& cmd = a[0];
    auto need = [&](std::size_t n) {
      if (a.size() < n + 1) fail(ErrorCode::invalid_input, cmd + ": missing arguments");
    };
    if (cmd == "help") {
      std::cout << kHelp;
    } else if (cmd == "begin") {
      if (txn) session.abort(*txn);
      txn = session.begin();
      std::cout << txn->to_string() << "\n";
    } else if (cmd == "get") {
      need(1);
      auto v = session.get(open(), a[1]);
      std::cout << (v ? *v : "(absent)") << "\n";
    } else if (cmd == "put") {
      need(2);
      session.put(open(), a[1], a[2]);
      std::cout << "ok\n";
    } else if (cmd == "commit") {
      auto tid = open();
      txn.reset();
      auto r = session.commit(tid);
      std::cout << "committed " << tid.to_string();
      for (const auto& [s, p] : r.promises) {
        std::cout << " shard" << s << ":";
        if (p.writes.empty()) {
          std::cout << "read-only";
        } else {
          std::cout << "block" << p.writes[0].block_no;
        }
      }
      std::cout << "\n";
    } else if (cmd == "abort") {
      session.abort(open());
      txn.reset();
      std::cout << "aborted\n";
    } else if (cmd == "verify") {
      if (a.size() > 1 && a[1] == "all") {
        session.flush();
      } else {
        session.poll();
      }
      const auto& st = session.stats();
      std::cout << "verified txns " << st.verified_txns << ", keys " << st.proven_keys
                << ", queued " << session.queued() << ", incidents " << st.incidents << "\n";
    } else if (cmd == "history") {
      need(1);
      std::uint32_t n = a.size() > 2 ? static_cast<std::uint32_t>(std::stoul(a[2])) : 10;
      auto h = session.get_history(a[1], n);
      for (const auto& v : h.versions) std::cout << "block " << v.version << ": " << v.value << "\n";
      std::cout << "at block " << h.digest.block_no << "\n";
    } else if (cmd == "digest") {
      std::vector<std::uint32_t> shards;
      if (a.size() > 1) {
        shards.push_back(static_cast<std::uint32_t>(std::stoul(a[1])));
      } else {
        for (std::uint32_t s = 0; s < session.shard_count(); ++s) shards.push_back(s);
      }
      for (auto s : shards) {
        auto d = session.refresh_digest(s);
        std::cout << "shard " << s << " block " << d.block_no << " " << d.digest.hex() << "\n";
      }
    } else if (cmd == "audit") {
      for (std::uint32_t s = 0; s < session.shard_count(); ++s) {
        std::string ep = a.size() > 1 ? a[1] : (s < auditors.size() ? auditors[s] : "");
        if (ep.empty()) fail(ErrorCode::invalid_input, "no auditor for shard " + std::to_string(s));
        auto [host, port] = parse_endpoint(ep);
        TcpChannel ch(host, port);
        auto out = decode_verdict(ch.request(
            MsgKind::submit_digest, encode_submission(session.cached_digest(s), "glass-cli")));
        std::cout << "shard " << s << ": " << to_string(out.verdict)
                  << (out.detail.empty() ? "" : " (" + out.detail + ")") << "\n";
      }
    } else {
      fail(ErrorCode::invalid_input, "unknown command " + cmd + "; try help");
    }
  }
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string part; std::getline(in, part, sep);) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verifying client shell"};
  std::string endpoints = "127.0.0.1:7001";
  std::string auditors;
  std::uint32_t shards = 0;
  std::uint64_t delay_ms = 100;
  std::string script;
  std::string seed_hex;
  app.add_option("--endpoints", endpoints, "comma-separated shard endpoints, in shard order");
  app.add_option("--shards", shards, "shard count (defaults to the endpoint count)");
  app.add_option("--delay-ms", delay_ms, "verification delay; 0 verifies at commit");
  app.add_option("--auditors", auditors, "comma-separated auditor endpoints, in shard order");
  app.add_option("--key-seed", seed_hex, "64 hex digits; a fresh key pair otherwise");
  app.add_option("-c,--command", script, "commands separated by ';'");
  CLI11_PARSE(app, argc, argv);

  try {
    auto eps = split(endpoints, ',');
    if (shards == 0) shards = static_cast<std::uint32_t>(eps.size());
    if (eps.size() != shards) {
      std::cerr << "--shards " << shards << " but " << eps.size() << " endpoints\n";
      return 2;
    }
    std::vector<std::shared_ptr<Channel>> chans;
    for (const auto& e : eps) {
      auto [host, port] = parse_endpoint(e);
      chans.push_back(std::make_shared<TcpChannel>(host, port));
    }
    auto keys = seed_hex.empty() ? crypto::KeyPair::generate()
                                 : crypto::KeyPair::from_seed(from_hex(seed_hex));
    SessionOptions opts;
    opts.delay_ms = delay_ms;
    Shell shell{Session(std::move(chans), keys, opts), std::nullopt, split(auditors, ',')};
    shell.session.register_keys();
    if (!script.empty()) {
      std::string lines;
      for (const auto& c : split(script, ';')) lines += c + "\n";
      std::istringstream in(lines);
      return shell.run(in, false);
    }
    return shell.run(std::cin, isatty(0));
  } catch (const std::exception& e) {
    std::cerr << "glass-cli: " << e.what() << "\n";
    return 1;
  }
}
