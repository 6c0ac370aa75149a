#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <vector>

#include "psp/influence.hpp"
#include "psp/market_state.hpp"

namespace psp {

enum class EventKind { BuyerCompute, PostBid, InjectBid };

/// Scheduler entry; (time, seq) is a strict total order over popped events.
struct Event {
  double time = 0.0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::BuyerCompute;
  AgentId agent = -1;       // buyer for BuyerCompute, seller otherwise
  Bid bid;                  // payload for InjectBid
  AgentId bid_seller = -1;  // target seller for InjectBid
};

struct EngineConfig {
  int max_steps = 10000;
  double epsilon = 2.5;           // shared improvement / reserve increment
  int convergence_window = 8;     // consecutive no-effective-change events
  ReserveRule reserve_rule = ReserveRule::Reactive;
  std::uint64_t rng_seed = 0;
  bool schedule_buyers = true;    // false: static bids, clear sellers once
  bool record_snapshots = false;  // keep a MarketState per POST_BID
};

/// One intra-round allocation step: seller serves one buyer and carries the
/// reserve in force after the step.
struct TauStep {
  int tau = 0;
  AgentId seller = -1;
  AgentId buyer = -1;
  double awarded = 0.0;
  double payment = 0.0;
  double reserve_after = 0.0;
};

struct TauTrace {
  std::vector<TauStep> steps;
};

struct RunResult {
  MarketState final_state;
  TauTrace trace;
  std::vector<ShiftEvent> shifts;
  bool converged = false;
  int events_processed = 0;
  std::map<AgentId, int> compute_counts;       // BUYER_COMPUTE pops per buyer
  std::vector<MarketState> snapshots;          // when record_snapshots is set
};

struct BuyerComputeOutcome {
  std::vector<AgentId> sellers_to_post;  // sellers whose incoming bid changed
  bool effective_change = false;
};

struct PostBidOutcome {
  std::vector<AgentId> buyers_to_compute;  // buyers whose award changed
  std::vector<TauStep> tau_steps;
  bool effective_change = false;
};

/// Assembles the buyer's snapshot, computes the joint best response and
/// posts it only when the epsilon-improvement test passes.
BuyerComputeOutcome process_buyer_compute(MarketState& market, AgentId buyer,
                                          const EngineConfig& config);

/// Clears one seller: allocation, clearing price, exclusion payments and the
/// monotone reserve update.
PostBidOutcome process_post_bid(MarketState& market, AgentId seller,
                                const EngineConfig& config);

/// True when the queue has drained or the last convergence_window events all
/// reported no effective change.
bool has_converged(const std::deque<bool>& recent_flags,
                   const EngineConfig& config, bool queue_empty);

/// Event loop of the simulation; deterministic for fixed (market, config,
/// injected) inputs. Injected events are scripted perturbations.
RunResult run(MarketState market, const EngineConfig& config,
              const std::vector<Event>& injected = {});

}  // namespace psp
