#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "glassdb/client.hpp"
#include "glassdb/shardserver.hpp"

namespace glassdb::bench {

/// Zipf over ranks 1..n with exponent theta, by rejection-inversion
/// (Hormann and Derflinger). theta = 0 is uniform.
class Zipf {
 public:
  Zipf(std::uint64_t n, double theta);

  /// 0-based rank.
  std::uint64_t operator()(std::mt19937_64& rng) const;
  std::uint64_t size() const { return n_; }
  double theta() const { return theta_; }

 private:
  double h(double x) const;
  double h_integral(double x) const;
  double h_integral_inverse(double x) const;

  std::uint64_t n_;
  double theta_;
  double h_x1_ = 0;
  double h_n_ = 0;
  double s_ = 0;
};

/// Draws category indices so that every window of sum(weights) draws holds
/// exactly weights[i] of category i (a reshuffled deck).
class MixDeck {
 public:
  MixDeck(std::vector<unsigned> weights, std::uint64_t seed);
  std::size_t next();

 private:
  std::vector<std::size_t> deck_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

enum class Workload : std::uint8_t { x, y, read_heavy, balanced, write_heavy, tpcc };
std::string_view to_string(Workload w);
std::optional<Workload> parse_workload(std::string_view name);

enum class Op : std::uint8_t { put, get_latest, get_history };
inline constexpr std::size_t kOpKinds = 3;
std::string_view to_string(Op op);

struct WorkloadSpec {
  Workload workload = Workload::x;
  std::array<unsigned, kOpKinds> mix{50, 50, 0};  // percent by Op
  std::uint64_t delay_ms = 100;
  std::uint64_t keys = 10000;
  std::size_t value_size = 100;
  double theta = 0;  // 0: uniform
  std::size_t clients = 8;
  double duration_s = 10;
  /// Per-client cap; 0 means run for duration_s only.
  std::uint64_t txns_per_client = 0;
  std::size_t txn_size = 10;
  std::uint32_t history_count = 1;  // versions per VerifiedGetHistory
  std::uint64_t seed = 1;
  bool load = true;  // populate the keys (or TPC-C tables) before the run

  static WorkloadSpec preset(Workload w);
  /// Throws invalid_input when the mix does not sum to 100.
  void validate() const;
};

struct LatencySummary {
  std::uint64_t count = 0;
  double mean = 0, p50 = 0, p90 = 0, p99 = 0, max = 0;
};
LatencySummary summarize(std::vector<double> samples_ms);

/// Merge-only accumulator; one per driver thread, merged at the end.
struct Metrics {
  double duration_s = 0;
  std::uint64_t committed = 0;
  std::uint64_t aborted = 0;
  std::uint64_t unknown = 0;
  std::uint64_t incidents = 0;
  std::map<std::string, std::uint64_t> ops;  // issued operations or transactions by kind
  std::map<std::string, std::vector<double>> latency_ms;  // prepare, commit, persist, get_proof, txn
  VerifyStats verify;
  std::uint64_t blocks = 0;  // B, summed over shards
  std::uint64_t keys = 0;    // m

  void merge(const Metrics& other);
  double throughput() const { return duration_s > 0 ? committed / duration_s : 0; }
  double abort_rate() const;
  double proof_bytes_per_key() const;
  double proof_nodes_per_key() const;
  /// Share of `kind` among all issued ops, in percent.
  double mix_percent(const std::string& kind) const;
};

/// Versioned JSON report ("glass-bench-report/1").
std::string report_json(const WorkloadSpec& spec, const Metrics& m);

/// Verifiable key-value backend driven by the benchmark.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual TxnId begin() = 0;
  virtual std::optional<ByteString> get(const TxnId& tid, const ByteString& key) = 0;
  virtual void put(const TxnId& tid, const ByteString& key, ByteString value) = 0;
  /// Throws txn_aborted, txn_unknown or tamper_detected.
  virtual void commit(const TxnId& tid) = 0;
  virtual void abort(const TxnId& tid) = 0;
  /// Newest `count` versions, verified.
  virtual std::vector<VersionedValue> history(const ByteString& key, std::uint32_t count) = 0;
  /// Verifies due items; `all` waits for everything outstanding.
  virtual void verify(bool all) = 0;
  /// Current digest of every shard.
  virtual std::vector<LedgerDigest> digests() = 0;
  virtual VerifyStats stats() const = 0;
  virtual void set_phase_observer(PhaseObserver) {}
};

/// Reference backend: a client Session.
class SessionBackend : public Backend {
 public:
  SessionBackend(std::vector<std::shared_ptr<Channel>> shards, crypto::KeyPair keys,
                 SessionOptions opts);

  TxnId begin() override { return session_.begin(); }
  std::optional<ByteString> get(const TxnId& tid, const ByteString& key) override {
    return session_.get(tid, key);
  }
  void put(const TxnId& tid, const ByteString& key, ByteString value) override {
    session_.put(tid, key, std::move(value));
  }
  void commit(const TxnId& tid) override { session_.commit(tid); }
  void abort(const TxnId& tid) override { session_.abort(tid); }
  std::vector<VersionedValue> history(const ByteString& key, std::uint32_t count) override {
    return session_.get_history(key, count).versions;
  }
  void verify(bool all) override;
  std::vector<LedgerDigest> digests() override;
  VerifyStats stats() const override { return session_.stats(); }
  void set_phase_observer(PhaseObserver obs) override { session_.set_phase_observer(std::move(obs)); }

  Session& session() { return session_; }

 private:
  Session session_;
};

/// Builds the backend for driver thread `client`.
using BackendFactory = std::function<std::unique_ptr<Backend>(std::size_t client)>;

/// In-process shards for tests and local runs.
class LocalCluster {
 public:
  LocalCluster(std::uint32_t shards, std::uint64_t persist_interval_ms,
               FaultMode fault = FaultMode::none);
  ~LocalCluster();

  /// Session backends with the given verification delay; client i gets a
  /// key pair derived from (seed, i).
  BackendFactory factory(std::uint64_t delay_ms, std::uint64_t seed = 1);
  std::vector<std::shared_ptr<Channel>> channels(std::uint64_t conn);
  ShardService& shard(std::uint32_t i) { return *shards_.at(i); }
  std::uint32_t size() const { return static_cast<std::uint32_t>(shards_.size()); }
  void persist_all();
  std::uint64_t blocks() const;

 private:
  std::vector<std::unique_ptr<ShardService>> shards_;
};

/// Key pair for bench client `client`.
crypto::KeyPair client_keys(std::uint64_t seed, std::size_t client);
/// Session backends over TCP endpoints, one per shard in shard order.
BackendFactory tcp_factory(std::vector<std::string> endpoints, std::uint64_t delay_ms,
                           std::uint64_t seed = 1);

std::string ycsb_key(std::uint64_t i);
/// Writes every key once, in transactions of 100 writes.
void load_ycsb(Backend& backend, const WorkloadSpec& spec);
/// Drives the mix on spec.clients threads and aggregates their metrics.
Metrics run_ycsb(const WorkloadSpec& spec, const BackendFactory& factory);

// Desk-scale TPC-C over "<COLUMN>_<pk>" keys; money in integer cents.

struct TpccScale {
  std::uint32_t warehouses = 1;
  std::uint32_t districts = 10;
  std::uint32_t customers = 30;  // per district
  std::uint32_t items = 200;
};

enum class TpccTxn : std::uint8_t {
  new_order,
  payment,
  order_status,
  delivery,
  stock_level,
  warehouse_balance
};
inline constexpr std::size_t kTpccKinds = 6;
std::string_view to_string(TpccTxn t);

std::string tpcc_key(std::string_view column, std::initializer_list<std::uint64_t> pk);

struct OrderLineInput {
  std::uint32_t item = 0;
  std::uint32_t quantity = 0;
};

/// TPC-C transactions on one backend. Every method is one verified
/// transaction; write transactions throw on abort.
class Tpcc {
 public:
  Tpcc(Backend& backend, TpccScale scale, std::uint64_t seed = 1);

  static void load(Backend& backend, const TpccScale& scale, std::uint64_t seed = 1);

  /// 42/42/4/4/4/4 by TpccTxn order.
  TpccTxn next_type() { return static_cast<TpccTxn>(deck_.next()); }
  /// Runs `t` with random arguments.
  void run(TpccTxn t);

  /// Returns the new order id.
  std::uint64_t new_order(std::uint32_t w, std::uint32_t d, std::uint32_t c,
                          const std::vector<OrderLineInput>& lines);
  void payment(std::uint32_t w, std::uint32_t d, std::uint32_t c, std::int64_t amount_cents);
  /// Balance and item count of the customer's last order.
  std::pair<std::int64_t, std::uint32_t> order_status(std::uint32_t w, std::uint32_t d,
                                                      std::uint32_t c);
  /// Returns the number of orders delivered.
  std::uint32_t delivery(std::uint32_t w, std::uint32_t carrier);
  /// Distinct items of recent orders whose stock is below `threshold`.
  std::uint32_t stock_level(std::uint32_t w, std::uint32_t d, std::int64_t threshold);
  /// Last 10 versions of the warehouse's year-to-date balance, newest first.
  std::vector<VersionedValue> warehouse_balance(std::uint32_t w);

  const TpccScale& scale() const { return scale_; }

 private:
  std::int64_t read_int(const TxnId& tid, const std::string& key);
  void write_int(const TxnId& tid, const std::string& key, std::int64_t v);
  std::uint32_t uniform(std::uint32_t lo, std::uint32_t hi);

  Backend& backend_;
  TpccScale scale_;
  std::mt19937_64 rng_;
  MixDeck deck_;
};

Metrics run_tpcc(const WorkloadSpec& spec, const TpccScale& scale, const BackendFactory& factory);

}  // namespace glassdb::bench
