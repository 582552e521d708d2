//! Iteration latency model.
//!
//! One serving iteration costs
//!
//! ```text
//! c0 + c1 * (prefill_tokens + decode_count) + c2 * sum(kv_context_len)
//! ```
//!
//! a fixed launch overhead, a linear per-token cost for the fused batch and
//! an attention term that charges each decode for the KV context it reads.
//! Being affine in the prefill budget, the model inverts in closed form: the
//! largest chunk that fits a slack is a single division.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::workload::RequestId;

pub const DEFAULT_MAX_CHUNK: u32 = 2048;
pub const DEFAULT_MIN_CHUNK: u32 = 1;
/// Per-token cost anchoring the absolute scale of the default profile.
pub const DEFAULT_C1_US_PER_TOKEN: f64 = 18.0;
/// Per-token cost of the paper-scale profile: the smallest at which a
/// 512-token chunk no longer fits a 50 ms TBT while 256 still does.
pub const PAPER_SCALE_C1_US_PER_TOKEN: f64 = 80.0;
/// KV-context read cost per decode token.
pub const DEFAULT_C2_NS_PER_TOKEN_CTX: f64 = 10.0;
/// Throughput at a 256-token chunk relative to a 2048-token chunk.
pub const DEFAULT_THROUGHPUT_RATIO: f64 = 0.72;
pub const DEFAULT_CHUNK_LO: u32 = 256;
pub const DEFAULT_CHUNK_HI: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeEntry {
    pub id: RequestId,
    pub kv_context_len: u32,
}

/// What runs in one iteration: a prefill budget and the decodes riding along.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchComposition {
    pub prefill_tokens: u32,
    pub decode_entries: Vec<DecodeEntry>,
}

impl BatchComposition {
    pub fn load(&self) -> DecodeLoad {
        DecodeLoad::from_entries(&self.decode_entries)
    }
}

/// Aggregate of a decode set; all the latency model needs from it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeLoad {
    pub count: u64,
    pub kv_total: u64,
}

impl DecodeLoad {
    pub fn from_entries(entries: &[DecodeEntry]) -> Self {
        entries
            .iter()
            .fold(DecodeLoad::default(), |acc, e| acc.with(e.kv_context_len))
    }

    pub fn with(self, kv_context_len: u32) -> Self {
        DecodeLoad {
            count: self.count + 1,
            kv_total: self.kv_total + kv_context_len as u64,
        }
    }
}

/// Result of inverting the model for a slack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkDecision {
    pub tokens: u32,
    /// Even a decode-only iteration overruns the slack.
    pub infeasible: bool,
}

/// Anything that predicts iteration latency from a batch.
///
/// The provided `max_feasible_chunk` is a binary search over the monotone
/// latency curve; models with an analytic inverse override it.
pub trait LatencyModel<S: Scalar> {
    fn latency(&self, prefill_tokens: u32, decodes: DecodeLoad) -> S;

    fn chunk_cap(&self) -> u32;

    fn min_chunk(&self) -> u32 {
        1
    }

    fn iteration_latency(&self, batch: &BatchComposition) -> S {
        self.latency(batch.prefill_tokens, batch.load())
    }

    fn max_feasible_chunk(&self, decodes: DecodeLoad, min_slack: S) -> ChunkDecision {
        if self.latency(0, decodes) > min_slack {
            return ChunkDecision {
                tokens: 0,
                infeasible: true,
            };
        }
        let (mut lo, mut hi) = (0u32, self.chunk_cap());
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if self.latency(mid, decodes) <= min_slack {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let tokens = if lo < self.min_chunk() { 0 } else { lo };
        ChunkDecision {
            tokens,
            infeasible: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostProfile<S = f64> {
    /// Fixed per-iteration overhead, seconds.
    pub c0: S,
    /// Seconds per batched token.
    pub c1: S,
    /// Seconds per decode token per KV-context token.
    pub c2: S,
    pub min_chunk: u32,
    pub max_chunk: u32,
}

impl<S: Scalar> CostProfile<S> {
    pub fn new(c0: S, c1: S, c2: S, min_chunk: u32, max_chunk: u32) -> Result<Self> {
        let p = CostProfile {
            c0,
            c1,
            c2,
            min_chunk,
            max_chunk,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: S| v >= S::zero() && v.is_finite();
        if !(finite_nonneg(self.c0) && finite_nonneg(self.c1) && finite_nonneg(self.c2)) {
            return Err(Error::Config(format!(
                "cost_model coefficients must be finite and >= 0 (c0={}, c1={}, c2={})",
                self.c0, self.c1, self.c2
            )));
        }
        if self.min_chunk > self.max_chunk || self.max_chunk == 0 {
            return Err(Error::Config(format!(
                "cost_model requires 0 < min_chunk <= max_chunk (min={}, max={})",
                self.min_chunk, self.max_chunk
            )));
        }
        Ok(())
    }

    /// Tokens per second of a prefill-only iteration at `chunk`.
    pub fn throughput(&self, chunk: u32) -> S {
        S::tokens(chunk as u64) / self.latency(chunk, DecodeLoad::default())
    }

    /// Time to prefill `tokens` on an otherwise idle replica, chunked at
    /// `max_chunk`.
    pub fn prefill_time_alone(&self, tokens: u32) -> S {
        if tokens == 0 {
            return S::zero();
        }
        let iters = tokens.div_ceil(self.max_chunk);
        S::tokens(iters as u64) * self.c0 + S::tokens(tokens as u64) * self.c1
    }

    /// Time of a lone decode step for a request holding `kv_context_len`
    /// tokens of KV cache.
    pub fn decode_token_time(&self, kv_context_len: u32) -> S {
        self.c0 + self.c1 + self.c2 * S::tokens(kv_context_len as u64)
    }

    /// Same overhead-to-token ratio, different absolute speed.
    pub fn with_c1(&self, c1: S) -> Result<Self> {
        let c0 = if self.c1 > S::zero() {
            self.c0 / self.c1 * c1
        } else {
            self.c0
        };
        CostProfile::new(c0, c1, self.c2, self.min_chunk, self.max_chunk)
    }

    pub fn cast<T: Scalar>(&self) -> CostProfile<T> {
        let c = |v: S| T::lit(v.as_f64());
        CostProfile {
            c0: c(self.c0),
            c1: c(self.c1),
            c2: c(self.c2),
            min_chunk: self.min_chunk,
            max_chunk: self.max_chunk,
        }
    }
}

impl<S: Scalar> LatencyModel<S> for CostProfile<S> {
    fn latency(&self, prefill_tokens: u32, decodes: DecodeLoad) -> S {
        self.c0
            + self.c1 * S::tokens(prefill_tokens as u64 + decodes.count)
            + self.c2 * S::tokens(decodes.kv_total)
    }

    fn chunk_cap(&self) -> u32 {
        self.max_chunk
    }

    fn min_chunk(&self) -> u32 {
        self.min_chunk
    }

    fn max_feasible_chunk(&self, decodes: DecodeLoad, min_slack: S) -> ChunkDecision {
        let base = self.latency(0, decodes);
        if base > min_slack {
            return ChunkDecision {
                tokens: 0,
                infeasible: true,
            };
        }
        let cap = self.max_chunk;
        let mut c = if min_slack.is_infinite() || self.c1 <= S::zero() {
            cap
        } else {
            let raw = ((min_slack - base) / self.c1).floor();
            if raw >= S::tokens(cap as u64) {
                cap
            } else {
                raw.to_u32().unwrap_or(0)
            }
        };
        // The division can land one token off after rounding; settle exactly.
        while c > 0 && self.latency(c, decodes) > min_slack {
            c -= 1;
        }
        while c < cap && self.latency(c + 1, decodes) <= min_slack {
            c += 1;
        }
        if c < self.min_chunk {
            c = 0;
        }
        ChunkDecision {
            tokens: c,
            infeasible: false,
        }
    }
}

/// Returns a profile whose prefill throughput at `chunk_lo` is `target_ratio`
/// times its throughput at `chunk_hi`.
///
/// Only the overhead-to-token-cost ratio is determined by the target; the
/// per-token cost is pinned to [`DEFAULT_C1_US_PER_TOKEN`] and `c2` and the
/// chunk caps take their defaults.
pub fn calibrate_profile<S: Scalar>(
    target_ratio: S,
    chunk_lo: u32,
    chunk_hi: u32,
) -> Result<CostProfile<S>> {
    if chunk_lo == 0 || chunk_lo >= chunk_hi {
        return Err(Error::InvalidCalibration(format!(
            "need 0 < chunk_lo < chunk_hi, got {chunk_lo}, {chunk_hi}"
        )));
    }
    let lo = S::tokens(chunk_lo as u64);
    let hi = S::tokens(chunk_hi as u64);
    // With a zero overhead both chunks run at the same rate, so the ratio
    // must exceed lo/hi (the ratio as the overhead dominates) and stay below 1.
    if !(target_ratio < S::one() && target_ratio > lo / hi) {
        return Err(Error::InvalidCalibration(format!(
            "target ratio must lie in ({}, 1), got {target_ratio}",
            chunk_lo as f64 / chunk_hi as f64
        )));
    }
    // lo/(k+lo) = r * hi/(k+hi)  =>  k = lo*hi*(1-r) / (r*hi - lo), k = c0/c1.
    let k = lo * hi * (S::one() - target_ratio) / (target_ratio * hi - lo);
    let c1 = S::lit(DEFAULT_C1_US_PER_TOKEN * 1e-6);
    CostProfile::new(
        c1 * k,
        c1,
        S::lit(DEFAULT_C2_NS_PER_TOKEN_CTX * 1e-9),
        DEFAULT_MIN_CHUNK,
        DEFAULT_MAX_CHUNK.max(chunk_hi),
    )
}

impl Default for CostProfile<f64> {
    fn default() -> Self {
        calibrate_profile(DEFAULT_THROUGHPUT_RATIO, DEFAULT_CHUNK_LO, DEFAULT_CHUNK_HI)
            .expect("default calibration")
    }
}

impl CostProfile<f64> {
    /// Default calibration slowed to the hardware scale the paper's absolute
    /// request rates refer to; used by presets quoting those rates.
    pub fn paper_scale() -> Self {
        CostProfile::default()
            .with_c1(PAPER_SCALE_C1_US_PER_TOKEN * 1e-6)
            .expect("valid profile")
    }
}

impl Default for CostProfile<f32> {
    fn default() -> Self {
        CostProfile::<f64>::default().cast()
    }
}
