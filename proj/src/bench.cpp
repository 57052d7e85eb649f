#include "glassdb/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include <json.hpp>

#include "glassdb/crypto.hpp"
#include "glassdb/log.hpp"

namespace glassdb::bench {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

Zipf::Zipf(std::uint64_t n, double theta) : n_(n), theta_(theta) {
  if (n == 0) fail(ErrorCode::invalid_input, "zipf over an empty range");
  if (theta < 0) fail(ErrorCode::invalid_input, "zipf exponent must be >= 0");
  if (theta_ == 0) return;
  h_x1_ = h_integral(1.5) - 1.0;
  h_n_ = h_integral(static_cast<double>(n_) + 0.5);
  s_ = 2.0 - h_integral_inverse(h_integral(2.5) - h(2.0));
}

namespace {

// log1p(x)/x and expm1(x)/x, with series near 0
double helper1(double x) {
  if (std::abs(x) > 1e-8) return std::log1p(x) / x;
  return 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x));
}

double helper2(double x) {
  if (std::abs(x) > 1e-8) return std::expm1(x) / x;
  return 1.0 + x * 0.5 * (1.0 + x * (1.0 / 3.0) * (1.0 + 0.25 * x));
}

}  // namespace

double Zipf::h(double x) const { return std::exp(-theta_ * std::log(x)); }

double Zipf::h_integral(double x) const {
  double lx = std::log(x);
  return helper2((1.0 - theta_) * lx) * lx;
}

double Zipf::h_integral_inverse(double x) const {
  double t = x * (1.0 - theta_);
  if (t < -1.0) t = -1.0;
  return std::exp(helper1(t) * x);
}

std::uint64_t Zipf::operator()(std::mt19937_64& rng) const {
  if (theta_ == 0) return std::uniform_int_distribution<std::uint64_t>(0, n_ - 1)(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    double u = h_n_ + unit(rng) * (h_x1_ - h_n_);
    double x = h_integral_inverse(u);
    auto k = static_cast<std::uint64_t>(x + 0.5);
    k = std::clamp<std::uint64_t>(k, 1, n_);
    double kd = static_cast<double>(k);
    if (kd - x <= s_ || u >= h_integral(kd + 0.5) - h(kd)) return k - 1;
  }
}

MixDeck::MixDeck(std::vector<unsigned> weights, std::uint64_t seed) : rng_(seed) {
  unsigned g = 0;
  for (auto w : weights) g = std::gcd(g, w);
  if (g == 0) fail(ErrorCode::invalid_input, "empty mix");
  for (std::size_t i = 0; i < weights.size(); ++i) deck_.insert(deck_.end(), weights[i] / g, i);
  pos_ = deck_.size();
}

std::size_t MixDeck::next() {
  if (pos_ == deck_.size()) {
    std::shuffle(deck_.begin(), deck_.end(), rng_);
    pos_ = 0;
  }
  return deck_[pos_++];
}

std::string_view to_string(Workload w) {
  switch (w) {
    case Workload::x:
      return "x";
    case Workload::y:
      return "y";
    case Workload::read_heavy:
      return "read-heavy";
    case Workload::balanced:
      return "balanced";
    case Workload::write_heavy:
      return "write-heavy";
    case Workload::tpcc:
      return "tpcc";
  }
  return "unknown";
}

std::optional<Workload> parse_workload(std::string_view name) {
  for (auto w : {Workload::x, Workload::y, Workload::read_heavy, Workload::balanced,
                 Workload::write_heavy, Workload::tpcc}) {
    if (to_string(w) == name) return w;
  }
  return std::nullopt;
}

std::string_view to_string(Op op) {
  switch (op) {
    case Op::put:
      return "put";
    case Op::get_latest:
      return "get_latest";
    case Op::get_history:
      return "get_history";
  }
  return "unknown";
}

WorkloadSpec WorkloadSpec::preset(Workload w) {
  WorkloadSpec s;
  s.workload = w;
  switch (w) {
    case Workload::x:
      s.mix = {50, 50, 0};
      break;
    case Workload::y:
      s.mix = {20, 40, 40};
      break;
    case Workload::read_heavy:
      s.mix = {20, 80, 0};
      break;
    case Workload::balanced:
      s.mix = {50, 50, 0};
      break;
    case Workload::write_heavy:
      s.mix = {80, 20, 0};
      break;
    case Workload::tpcc:
      s.mix = {0, 0, 0};
      break;
  }
  return s;
}

void WorkloadSpec::validate() const {
  if (workload != Workload::tpcc && mix[0] + mix[1] + mix[2] != 100) {
    fail(ErrorCode::invalid_input, "operation mix must sum to 100");
  }
  if (txn_size == 0) fail(ErrorCode::invalid_input, "txn size must be positive");
  if (keys == 0) fail(ErrorCode::invalid_input, "key count must be positive");
  if (clients == 0) fail(ErrorCode::invalid_input, "need at least one client");
}

LatencySummary summarize(std::vector<double> s) {
  LatencySummary out;
  if (s.empty()) return out;
  std::sort(s.begin(), s.end());
  auto rank = [&](double p) {
    auto i = static_cast<std::size_t>(std::ceil(p * static_cast<double>(s.size())));
    return s[std::clamp<std::size_t>(i, 1, s.size()) - 1];
  };
  out.count = s.size();
  out.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  out.p50 = rank(0.50);
  out.p90 = rank(0.90);
  out.p99 = rank(0.99);
  out.max = s.back();
  return out;
}

void Metrics::merge(const Metrics& o) {
  duration_s = std::max(duration_s, o.duration_s);
  committed += o.committed;
  aborted += o.aborted;
  unknown += o.unknown;
  incidents += o.incidents;
  for (const auto& [k, n] : o.ops) ops[k] += n;
  for (const auto& [k, v] : o.latency_ms) {
    auto& mine = latency_ms[k];
    mine.insert(mine.end(), v.begin(), v.end());
  }
  verify.proof_requests += o.verify.proof_requests;
  verify.proven_keys += o.verify.proven_keys;
  verify.proof_bytes += o.verify.proof_bytes;
  verify.proof_nodes += o.verify.proof_nodes;
  verify.not_yet_persisted += o.verify.not_yet_persisted;
  verify.verified_txns += o.verify.verified_txns;
  verify.incidents += o.verify.incidents;
  blocks = std::max(blocks, o.blocks);
  keys = std::max(keys, o.keys);
}

double Metrics::abort_rate() const {
  auto total = committed + aborted + unknown;
  return total ? static_cast<double>(aborted) / static_cast<double>(total) : 0;
}

double Metrics::proof_bytes_per_key() const {
  return verify.proven_keys
             ? static_cast<double>(verify.proof_bytes) / static_cast<double>(verify.proven_keys)
             : 0;
}

double Metrics::proof_nodes_per_key() const {
  return verify.proven_keys
             ? static_cast<double>(verify.proof_nodes) / static_cast<double>(verify.proven_keys)
             : 0;
}

double Metrics::mix_percent(const std::string& kind) const {
  std::uint64_t total = 0;
  for (const auto& [k, n] : ops) total += n;
  auto it = ops.find(kind);
  if (total == 0 || it == ops.end()) return 0;
  return 100.0 * static_cast<double>(it->second) / static_cast<double>(total);
}

std::string report_json(const WorkloadSpec& spec, const Metrics& m) {
  json latency = json::object();
  for (const auto& [phase, samples] : m.latency_ms) {
    auto s = summarize(samples);
    latency[phase] = {{"count", s.count}, {"mean", s.mean}, {"p50", s.p50},
                      {"p90", s.p90},     {"p99", s.p99},   {"max", s.max}};
  }
  json mix = json::object();
  for (const auto& [k, n] : m.ops) mix[k] = {{"count", n}, {"percent", m.mix_percent(k)}};
  json j{
      {"format", "glass-bench-report/1"},
      {"workload", to_string(spec.workload)},
      {"spec",
       {{"mix", spec.mix},
        {"delay_ms", spec.delay_ms},
        {"keys", spec.keys},
        {"value_size", spec.value_size},
        {"theta", spec.theta},
        {"clients", spec.clients},
        {"duration_s", spec.duration_s},
        {"txns_per_client", spec.txns_per_client},
        {"txn_size", spec.txn_size},
        {"history_count", spec.history_count},
        {"seed", spec.seed}}},
      {"duration_s", m.duration_s},
      {"txns", {{"committed", m.committed}, {"aborted", m.aborted}, {"unknown", m.unknown}}},
      {"throughput_tps", m.throughput()},
      {"abort_rate", m.abort_rate()},
      {"mix", mix},
      {"latency_ms", latency},
      {"proof",
       {{"requests", m.verify.proof_requests},
        {"keys", m.verify.proven_keys},
        {"bytes", m.verify.proof_bytes},
        {"nodes", m.verify.proof_nodes},
        {"bytes_per_key", m.proof_bytes_per_key()},
        {"nodes_per_key", m.proof_nodes_per_key()},
        {"not_yet_persisted", m.verify.not_yet_persisted},
        {"verified_txns", m.verify.verified_txns}}},
      {"incidents", m.incidents},
      {"blocks", m.blocks},
      {"N", m.committed},
      {"m", m.keys}};
  return j.dump(2);
}

SessionBackend::SessionBackend(std::vector<std::shared_ptr<Channel>> shards, crypto::KeyPair keys,
                               SessionOptions opts)
    : session_(std::move(shards), std::move(keys), opts) {
  session_.register_keys();
}

void SessionBackend::verify(bool all) {
  if (all) {
    session_.flush();
  } else {
    session_.poll();
  }
}

std::vector<LedgerDigest> SessionBackend::digests() {
  std::vector<LedgerDigest> out;
  for (std::uint32_t s = 0; s < session_.shard_count(); ++s) out.push_back(session_.refresh_digest(s));
  return out;
}

crypto::KeyPair client_keys(std::uint64_t seed, std::size_t client) {
  auto h = crypto::blake2b256("glass-bench-client:" + std::to_string(seed) + ":" +
                              std::to_string(client));
  return crypto::KeyPair::from_seed(h.view());
}

LocalCluster::LocalCluster(std::uint32_t shards, std::uint64_t persist_interval_ms,
                           FaultMode fault) {
  for (std::uint32_t i = 0; i < shards; ++i) {
    ShardConfig cfg;
    cfg.shard_id = i;
    cfg.shards = shards;
    cfg.persist_interval_ms = persist_interval_ms;
    cfg.fault = fault;
    shards_.push_back(std::make_unique<ShardService>(cfg));
  }
}

LocalCluster::~LocalCluster() {
  for (auto& s : shards_) s->stop();
}

std::vector<std::shared_ptr<Channel>> LocalCluster::channels(std::uint64_t conn) {
  std::vector<std::shared_ptr<Channel>> out;
  for (auto& s : shards_) out.push_back(std::make_shared<InProcessChannel>(*s, conn));
  return out;
}

BackendFactory LocalCluster::factory(std::uint64_t delay_ms, std::uint64_t seed) {
  return [this, delay_ms, seed](std::size_t client) -> std::unique_ptr<Backend> {
    SessionOptions opts;
    opts.delay_ms = delay_ms;
    return std::make_unique<SessionBackend>(channels(2 * client), client_keys(seed, client), opts);
  };
}

void LocalCluster::persist_all() {
  for (auto& s : shards_) s->persist_now();
}

std::uint64_t LocalCluster::blocks() const {
  std::uint64_t b = 0;
  for (const auto& s : shards_) b += s->ledger().latest_block();
  return b;
}

BackendFactory tcp_factory(std::vector<std::string> endpoints, std::uint64_t delay_ms,
                           std::uint64_t seed) {
  return [endpoints = std::move(endpoints), delay_ms, seed](std::size_t client) -> std::unique_ptr<Backend> {
    std::vector<std::shared_ptr<Channel>> chans;
    for (const auto& e : endpoints) {
      auto [host, port] = parse_endpoint(e);
      chans.push_back(std::make_shared<TcpChannel>(host, port));
    }
    SessionOptions opts;
    opts.delay_ms = delay_ms;
    return std::make_unique<SessionBackend>(std::move(chans), client_keys(seed, client), opts);
  };
}

std::string ycsb_key(std::uint64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "user%010llu", static_cast<unsigned long long>(i));
  return buf;
}

namespace {

ByteString random_value(std::mt19937_64& rng, std::size_t size) {
  static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  ByteString v(size, 'a');
  for (auto& c : v) c = kAlphabet[rng() % (sizeof(kAlphabet) - 1)];
  return v;
}

double ms_since(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::prepare:
      return "prepare";
    case Phase::commit:
      return "commit";
    case Phase::persist:
      return "persist";
    case Phase::get_proof:
      return "get_proof";
  }
  return "unknown";
}

/// Runs a commit and books the outcome. Returns true on commit.
bool book_commit(Backend& b, const TxnId& tid, Metrics& m, Clock::time_point started) {
  try {
    b.commit(tid);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::txn_aborted) {
      ++m.aborted;
    } else if (e.code() != ErrorCode::tamper_detected) {
      ++m.unknown;
    }
    return false;
  }
  ++m.committed;
  m.latency_ms["txn"].push_back(ms_since(started));
  return true;
}

/// One driver thread per client; `step` runs one transaction.
using Step = std::function<void(Backend&, Metrics&, std::mt19937_64&)>;
using StepFactory = std::function<Step(Backend&, std::size_t client)>;

Metrics drive(const WorkloadSpec& spec, const BackendFactory& factory, const StepFactory& steps) {
  Metrics total;
  if (spec.duration_s <= 0 && spec.txns_per_client == 0) return total;
  std::vector<std::unique_ptr<Backend>> backends;
  for (std::size_t c = 0; c < spec.clients; ++c) backends.push_back(factory(c));

  std::vector<Metrics> per(spec.clients);
  std::vector<std::exception_ptr> errors(spec.clients);
  std::vector<std::thread> threads;
  auto start = Clock::now();
  auto deadline = start + std::chrono::duration_cast<Clock::duration>(
                              std::chrono::duration<double>(spec.duration_s));
  for (std::size_t c = 0; c < spec.clients; ++c) {
    threads.emplace_back([&, c] {
      try {
        auto& b = *backends[c];
        auto& m = per[c];
        b.set_phase_observer(
            [&m](Phase p, double ms) { m.latency_ms[std::string(phase_name(p))].push_back(ms); });
        std::mt19937_64 rng(spec.seed * 1000003 + c);
        auto step = steps(b, c);
        for (std::uint64_t n = 0;; ++n) {
          if (spec.txns_per_client && n >= spec.txns_per_client) break;
          if (spec.duration_s > 0 && Clock::now() >= deadline) break;
          step(b, m, rng);
          try {
            b.verify(false);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::tamper_detected) ++m.unknown;
          }
        }
        m.duration_s = std::chrono::duration<double>(Clock::now() - start).count();
        try {
          b.verify(true);
        } catch (const Error& e) {
          log_event("warn", "bench", "final verification failed", {{"error", e.what()}});
        }
        b.set_phase_observer({});
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (std::size_t c = 0; c < spec.clients; ++c) {
    auto st = backends[c]->stats();
    per[c].verify = st;
    per[c].incidents = st.incidents;
    total.merge(per[c]);
  }
  try {
    for (const auto& d : backends[0]->digests()) total.blocks += d.block_no;
  } catch (const Error& e) {
    log_event("warn", "bench", "digest refresh failed", {{"error", e.what()}});
  }
  return total;
}

}  // namespace

void load_ycsb(Backend& backend, const WorkloadSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  for (std::uint64_t i = 0; i < spec.keys;) {
    auto tid = backend.begin();
    for (std::uint64_t j = 0; j < 100 && i < spec.keys; ++j, ++i) {
      backend.put(tid, ycsb_key(i), random_value(rng, spec.value_size));
    }
    backend.commit(tid);
  }
  backend.verify(true);
}

Metrics run_ycsb(const WorkloadSpec& spec, const BackendFactory& factory) {
  spec.validate();
  if (spec.workload == Workload::tpcc) fail(ErrorCode::invalid_input, "tpcc is not a YCSB workload");
  if (spec.load && (spec.duration_s > 0 || spec.txns_per_client > 0)) {
    load_ycsb(*factory(spec.clients), spec);
  }
  Zipf zipf(spec.keys, spec.theta);
  std::vector<unsigned> weights(spec.mix.begin(), spec.mix.end());
  auto m = drive(spec, factory, [&](Backend&, std::size_t client) -> Step {
    auto deck = std::make_shared<MixDeck>(weights, spec.seed * 7919 + client);
    return [&, deck](Backend& b, Metrics& m, std::mt19937_64& rng) {
      auto started = Clock::now();
      auto tid = b.begin();
      try {
        for (std::size_t i = 0; i < spec.txn_size; ++i) {
          auto op = static_cast<Op>(deck->next());
          ++m.ops[std::string(to_string(op))];
          auto key = ycsb_key(zipf(rng));
          switch (op) {
            case Op::put:
              b.put(tid, key, random_value(rng, spec.value_size));
              break;
            case Op::get_latest:
              b.get(tid, key);
              break;
            case Op::get_history:
              b.history(key, spec.history_count);
              break;
          }
        }
      } catch (const Error& e) {
        b.abort(tid);
        if (e.code() != ErrorCode::tamper_detected) ++m.unknown;
        return;
      }
      book_commit(b, tid, m, started);
    };
  });
  m.keys = spec.keys;
  return m;
}

std::string_view to_string(TpccTxn t) {
  switch (t) {
    case TpccTxn::new_order:
      return "new_order";
    case TpccTxn::payment:
      return "payment";
    case TpccTxn::order_status:
      return "order_status";
    case TpccTxn::delivery:
      return "delivery";
    case TpccTxn::stock_level:
      return "stock_level";
    case TpccTxn::warehouse_balance:
      return "warehouse_balance";
  }
  return "unknown";
}

std::string tpcc_key(std::string_view column, std::initializer_list<std::uint64_t> pk) {
  std::string k(column);
  for (auto p : pk) k += "_" + std::to_string(p);
  return k;
}

namespace {

/// Aborts the transaction unless it was committed.
struct TxnGuard {
  Backend& b;
  TxnId tid;
  bool done = false;

  explicit TxnGuard(Backend& backend) : b(backend), tid(backend.begin()) {}
  ~TxnGuard() {
    if (!done) b.abort(tid);
  }
  void commit() {
    done = true;
    b.commit(tid);
  }
};

std::uint64_t now_ms() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

}  // namespace

Tpcc::Tpcc(Backend& backend, TpccScale scale, std::uint64_t seed)
    : backend_(backend), scale_(scale), rng_(seed), deck_({21, 21, 2, 2, 2, 2}, seed ^ 0x7c) {}

std::uint32_t Tpcc::uniform(std::uint32_t lo, std::uint32_t hi) {
  return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng_);
}

std::int64_t Tpcc::read_int(const TxnId& tid, const std::string& key) {
  auto v = backend_.get(tid, key);
  // committed on one shard, not yet on another
  if (!v) fail(ErrorCode::txn_aborted, "tpcc: row not visible yet: " + key);
  try {
    return std::stoll(*v);
  } catch (const std::exception&) {
    fail(ErrorCode::corrupt_data, "tpcc: non-numeric " + key);
  }
}

void Tpcc::write_int(const TxnId& tid, const std::string& key, std::int64_t v) {
  backend_.put(tid, key, std::to_string(v));
}

void Tpcc::load(Backend& b, const TpccScale& sc, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };
  std::vector<std::pair<std::string, std::string>> rows;
  auto row = [&](std::string k, auto v) {
    if constexpr (std::is_arithmetic_v<decltype(v)>) {
      rows.emplace_back(std::move(k), std::to_string(v));
    } else {
      rows.emplace_back(std::move(k), std::string(v));
    }
  };
  for (std::uint32_t i = 1; i <= sc.items; ++i) {
    row(tpcc_key("I_PRICE", {i}), pick(100, 10000));
    row(tpcc_key("I_NAME", {i}), "item-" + std::to_string(i));
  }
  for (std::uint32_t w = 1; w <= sc.warehouses; ++w) {
    row(tpcc_key("W_YTD", {w}), std::int64_t{30000000});
    row(tpcc_key("W_TAX", {w}), pick(0, 2000));
    row(tpcc_key("W_NAME", {w}), "warehouse-" + std::to_string(w));
    for (std::uint32_t i = 1; i <= sc.items; ++i) {
      row(tpcc_key("S_QUANTITY", {w, i}), pick(10, 100));
      row(tpcc_key("S_YTD", {w, i}), 0);
      row(tpcc_key("S_ORDER_CNT", {w, i}), 0);
    }
    for (std::uint32_t d = 1; d <= sc.districts; ++d) {
      row(tpcc_key("D_YTD", {w, d}), std::int64_t{3000000});
      row(tpcc_key("D_TAX", {w, d}), pick(0, 2000));
      row(tpcc_key("D_NEXT_O_ID", {w, d}), 1);
      row(tpcc_key("D_NO_HEAD", {w, d}), 1);
      for (std::uint32_t c = 1; c <= sc.customers; ++c) {
        row(tpcc_key("C_BALANCE", {w, d, c}), -1000);
        row(tpcc_key("C_YTD_PAYMENT", {w, d, c}), 1000);
        row(tpcc_key("C_PAYMENT_CNT", {w, d, c}), 1);
        row(tpcc_key("C_DELIVERY_CNT", {w, d, c}), 0);
        row(tpcc_key("C_NAME", {w, d, c}),
            "first" + std::to_string(c) + " OE last" + std::to_string(c % 1000));
        row(tpcc_key("C_CREDIT", {w, d, c}), pick(0, 9) == 0 ? "BC" : "GC");
        row(tpcc_key("C_DISCOUNT", {w, d, c}), pick(0, 5000));
        row(tpcc_key("C_LAST_O_ID", {w, d, c}), 0);
      }
    }
  }
  for (std::size_t i = 0; i < rows.size();) {
    auto tid = b.begin();
    for (std::size_t j = 0; j < 200 && i < rows.size(); ++j, ++i) {
      b.put(tid, rows[i].first, rows[i].second);
    }
    b.commit(tid);
  }
  b.verify(true);
}

std::uint64_t Tpcc::new_order(std::uint32_t w, std::uint32_t d, std::uint32_t c,
                              const std::vector<OrderLineInput>& lines) {
  TxnGuard g(backend_);
  const auto& tid = g.tid;
  read_int(tid, tpcc_key("W_TAX", {w}));
  read_int(tid, tpcc_key("D_TAX", {w, d}));
  read_int(tid, tpcc_key("C_DISCOUNT", {w, d, c}));
  auto o = static_cast<std::uint64_t>(read_int(tid, tpcc_key("D_NEXT_O_ID", {w, d})));
  write_int(tid, tpcc_key("D_NEXT_O_ID", {w, d}), static_cast<std::int64_t>(o + 1));
  write_int(tid, tpcc_key("O_C_ID", {w, d, o}), c);
  write_int(tid, tpcc_key("O_OL_CNT", {w, d, o}), static_cast<std::int64_t>(lines.size()));
  write_int(tid, tpcc_key("O_CARRIER_ID", {w, d, o}), 0);
  write_int(tid, tpcc_key("O_ENTRY_D", {w, d, o}), static_cast<std::int64_t>(now_ms()));
  write_int(tid, tpcc_key("NO", {w, d, o}), 1);
  write_int(tid, tpcc_key("C_LAST_O_ID", {w, d, c}), static_cast<std::int64_t>(o));
  for (std::size_t l = 0; l < lines.size(); ++l) {
    auto [item, qty] = lines[l];
    auto price = read_int(tid, tpcc_key("I_PRICE", {item}));
    auto s = read_int(tid, tpcc_key("S_QUANTITY", {w, item}));
    s = s - qty >= 10 ? s - qty : s - qty + 91;
    write_int(tid, tpcc_key("S_QUANTITY", {w, item}), s);
    write_int(tid, tpcc_key("S_YTD", {w, item}), read_int(tid, tpcc_key("S_YTD", {w, item})) + qty);
    write_int(tid, tpcc_key("S_ORDER_CNT", {w, item}),
              read_int(tid, tpcc_key("S_ORDER_CNT", {w, item})) + 1);
    std::uint64_t ol = l + 1;
    write_int(tid, tpcc_key("OL_I_ID", {w, d, o, ol}), item);
    write_int(tid, tpcc_key("OL_QUANTITY", {w, d, o, ol}), qty);
    write_int(tid, tpcc_key("OL_AMOUNT", {w, d, o, ol}), price * qty);
    write_int(tid, tpcc_key("OL_DELIVERY_D", {w, d, o, ol}), 0);
  }
  g.commit();
  return o;
}

void Tpcc::payment(std::uint32_t w, std::uint32_t d, std::uint32_t c, std::int64_t amount) {
  TxnGuard g(backend_);
  const auto& tid = g.tid;
  auto add = [&](const std::string& key, std::int64_t delta) {
    write_int(tid, key, read_int(tid, key) + delta);
  };
  add(tpcc_key("W_YTD", {w}), amount);
  add(tpcc_key("D_YTD", {w, d}), amount);
  add(tpcc_key("C_BALANCE", {w, d, c}), -amount);
  add(tpcc_key("C_YTD_PAYMENT", {w, d, c}), amount);
  add(tpcc_key("C_PAYMENT_CNT", {w, d, c}), 1);
  g.commit();
}

std::pair<std::int64_t, std::uint32_t> Tpcc::order_status(std::uint32_t w, std::uint32_t d,
                                                          std::uint32_t c) {
  TxnGuard g(backend_);
  const auto& tid = g.tid;
  auto balance = read_int(tid, tpcc_key("C_BALANCE", {w, d, c}));
  backend_.get(tid, tpcc_key("C_NAME", {w, d, c}));
  auto o = static_cast<std::uint64_t>(read_int(tid, tpcc_key("C_LAST_O_ID", {w, d, c})));
  std::uint32_t count = 0;
  if (o > 0) {
    read_int(tid, tpcc_key("O_CARRIER_ID", {w, d, o}));
    count = static_cast<std::uint32_t>(read_int(tid, tpcc_key("O_OL_CNT", {w, d, o})));
    for (std::uint64_t ol = 1; ol <= count; ++ol) {
      read_int(tid, tpcc_key("OL_I_ID", {w, d, o, ol}));
      read_int(tid, tpcc_key("OL_QUANTITY", {w, d, o, ol}));
      read_int(tid, tpcc_key("OL_AMOUNT", {w, d, o, ol}));
      read_int(tid, tpcc_key("OL_DELIVERY_D", {w, d, o, ol}));
    }
  }
  g.commit();
  return {balance, count};
}

std::uint32_t Tpcc::delivery(std::uint32_t w, std::uint32_t carrier) {
  TxnGuard g(backend_);
  const auto& tid = g.tid;
  std::uint32_t delivered = 0;
  auto stamp = static_cast<std::int64_t>(now_ms());
  for (std::uint32_t d = 1; d <= scale_.districts; ++d) {
    auto head = static_cast<std::uint64_t>(read_int(tid, tpcc_key("D_NO_HEAD", {w, d})));
    auto next = static_cast<std::uint64_t>(read_int(tid, tpcc_key("D_NEXT_O_ID", {w, d})));
    if (head >= next) continue;
    auto o = head;
    write_int(tid, tpcc_key("NO", {w, d, o}), 0);
    write_int(tid, tpcc_key("O_CARRIER_ID", {w, d, o}), carrier);
    auto c = static_cast<std::uint64_t>(read_int(tid, tpcc_key("O_C_ID", {w, d, o})));
    auto lines = static_cast<std::uint64_t>(read_int(tid, tpcc_key("O_OL_CNT", {w, d, o})));
    std::int64_t sum = 0;
    for (std::uint64_t ol = 1; ol <= lines; ++ol) {
      sum += read_int(tid, tpcc_key("OL_AMOUNT", {w, d, o, ol}));
      write_int(tid, tpcc_key("OL_DELIVERY_D", {w, d, o, ol}), stamp);
    }
    auto bal = tpcc_key("C_BALANCE", {w, d, c});
    write_int(tid, bal, read_int(tid, bal) + sum);
    auto cnt = tpcc_key("C_DELIVERY_CNT", {w, d, c});
    write_int(tid, cnt, read_int(tid, cnt) + 1);
    write_int(tid, tpcc_key("D_NO_HEAD", {w, d}), static_cast<std::int64_t>(head + 1));
    ++delivered;
  }
  g.commit();
  return delivered;
}

std::uint32_t Tpcc::stock_level(std::uint32_t w, std::uint32_t d, std::int64_t threshold) {
  TxnGuard g(backend_);
  const auto& tid = g.tid;
  auto next = static_cast<std::uint64_t>(read_int(tid, tpcc_key("D_NEXT_O_ID", {w, d})));
  std::set<std::uint64_t> items;
  for (auto o = next > 20 ? next - 20 : 1; o < next; ++o) {
    auto lines = static_cast<std::uint64_t>(read_int(tid, tpcc_key("O_OL_CNT", {w, d, o})));
    for (std::uint64_t ol = 1; ol <= lines; ++ol) {
      items.insert(static_cast<std::uint64_t>(read_int(tid, tpcc_key("OL_I_ID", {w, d, o, ol}))));
    }
  }
  std::uint32_t low = 0;
  for (auto i : items) {
    if (read_int(tid, tpcc_key("S_QUANTITY", {w, i})) < threshold) ++low;
  }
  g.commit();
  return low;
}

std::vector<VersionedValue> Tpcc::warehouse_balance(std::uint32_t w) {
  return backend_.history(tpcc_key("W_YTD", {w}), 10);
}

void Tpcc::run(TpccTxn t) {
  auto w = uniform(1, scale_.warehouses);
  auto d = uniform(1, scale_.districts);
  auto c = uniform(1, scale_.customers);
  switch (t) {
    case TpccTxn::new_order: {
      auto n = std::min<std::uint32_t>(uniform(5, 15), scale_.items);
      std::set<std::uint32_t> chosen;
      while (chosen.size() < n) chosen.insert(uniform(1, scale_.items));
      std::vector<OrderLineInput> lines;
      for (auto i : chosen) lines.push_back({i, uniform(1, 10)});
      new_order(w, d, c, lines);
      break;
    }
    case TpccTxn::payment:
      payment(w, d, c, uniform(100, 500000));
      break;
    case TpccTxn::order_status:
      order_status(w, d, c);
      break;
    case TpccTxn::delivery:
      delivery(w, uniform(1, 10));
      break;
    case TpccTxn::stock_level:
      stock_level(w, d, uniform(10, 20));
      break;
    case TpccTxn::warehouse_balance:
      warehouse_balance(w);
      break;
  }
}

Metrics run_tpcc(const WorkloadSpec& spec, const TpccScale& scale, const BackendFactory& factory) {
  if (spec.clients == 0) fail(ErrorCode::invalid_input, "need at least one client");
  if (spec.load && (spec.duration_s > 0 || spec.txns_per_client > 0)) {
    Tpcc::load(*factory(spec.clients), scale, spec.seed);
  }
  auto m = drive(spec, factory, [&](Backend& b, std::size_t client) -> Step {
    auto t = std::make_shared<Tpcc>(b, scale, spec.seed * 31 + client);
    return [t](Backend& b, Metrics& m, std::mt19937_64&) {
      auto kind = t->next_type();
      ++m.ops[std::string(to_string(kind))];
      auto started = Clock::now();
      try {
        t->run(kind);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::corrupt_data) throw;
        if (e.code() == ErrorCode::txn_aborted) {
          ++m.aborted;
        } else if (e.code() != ErrorCode::tamper_detected) {
          ++m.unknown;
        }
        return;
      }
      (void)b;
      ++m.committed;
      m.latency_ms["txn"].push_back(ms_since(started));
    };
  });
  std::uint64_t keys = scale.items * 2ull;
  keys += scale.warehouses * (3ull + 3ull * scale.items +
                              scale.districts * (4ull + 8ull * scale.customers));
  m.keys = keys;
  return m;
}

}  // namespace glassdb::bench
