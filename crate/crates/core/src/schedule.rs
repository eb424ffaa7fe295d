//! Schedule algebra for accumulated local updates.
//!
//! Knowledge exchange is delayed until the round counter reaches an integer
//! multiple of the accumulation period `s`; off-rounds distill against the
//! stale knowledge of the most recent exchange round. Rounds are 0-indexed,
//! so round 0 is always an exchange round and the stale-round mapping
//! `t - t mod s` is total without a bootstrap case.

/// Accumulation period and horizon of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleConfig {
    /// Accumulation period: knowledge is exchanged every `s`-th round.
    pub s: usize,
    /// Total number of training rounds.
    pub total_rounds: usize,
}

impl ScheduleConfig {
    pub fn new(s: usize, total_rounds: usize) -> Self {
        assert!(s >= 1, "accumulation period must be >= 1");
        assert!(total_rounds >= 1, "total_rounds must be >= 1");
        Self { s, total_rounds }
    }

    pub fn state_at(&self, t: usize) -> RoundState {
        RoundState {
            t,
            last_exchange_round: effective_knowledge_round(t, self.s),
        }
    }
}

/// Position of a round within its accumulation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundState {
    /// Current round, 0-based.
    pub t: usize,
    /// Greatest multiple of `s` that is <= `t`.
    pub last_exchange_round: usize,
}

impl RoundState {
    /// Rounds elapsed since the knowledge in use was exchanged.
    pub fn staleness(&self) -> usize {
        self.t - self.last_exchange_round
    }
}

/// True iff round `t` uploads and downloads knowledge.
pub fn should_exchange(t: usize, s: usize) -> bool {
    debug_assert!(s >= 1);
    t.is_multiple_of(s)
}

/// The round whose global knowledge round `t` distills against: `t - t mod s`.
pub fn effective_knowledge_round(t: usize, s: usize) -> usize {
    debug_assert!(s >= 1);
    t - t % s
}

/// Number of exchange rounds in `[0, total_rounds)`, i.e. `ceil(T / s)`.
pub fn exchange_count(total_rounds: usize, s: usize) -> usize {
    debug_assert!(s >= 1);
    total_rounds.div_ceil(s)
}
