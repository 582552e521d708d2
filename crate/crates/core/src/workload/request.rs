use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

pub type RequestId = u64;
pub type BucketId = u16;

/// Application identifier used to key decode-length history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QosClass {
    Interactive,
    NonInteractive,
}

impl QosClass {
    pub fn as_str(self) -> &'static str {
        match self {
            QosClass::Interactive => "interactive",
            QosClass::NonInteractive => "non-interactive",
        }
    }
}

/// Application hint used to pick relegation victims (free vs paid tier).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppPriority {
    High,
    Low,
}

impl AppPriority {
    pub fn as_str(self) -> &'static str {
        match self {
            AppPriority::High => "high",
            AppPriority::Low => "low",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Slo<S> {
    Interactive { ttft: S, tbt: S },
    NonInteractive { ttlt: S },
}

/// QoS class plus its SLO targets, in seconds.
///
/// Interactive buckets carry TTFT and TBT targets; non-interactive buckets
/// carry only a TTLT target. The constructors reject non-positive targets, so
/// a value of this type always satisfies the class invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosSpec<S = f64> {
    bucket_id: BucketId,
    slo: Slo<S>,
}

impl<S: Scalar> QosSpec<S> {
    pub fn interactive(bucket_id: BucketId, slo_ttft: S, slo_tbt: S) -> Result<Self> {
        if !(slo_ttft > S::zero() && slo_tbt > S::zero()) {
            return Err(Error::Config(format!(
                "bucket {bucket_id}: interactive SLOs must be positive (ttft={slo_ttft}, tbt={slo_tbt})"
            )));
        }
        Ok(QosSpec {
            bucket_id,
            slo: Slo::Interactive {
                ttft: slo_ttft,
                tbt: slo_tbt,
            },
        })
    }

    pub fn non_interactive(bucket_id: BucketId, slo_ttlt: S) -> Result<Self> {
        if !(slo_ttlt > S::zero()) {
            return Err(Error::Config(format!(
                "bucket {bucket_id}: TTLT SLO must be positive (ttlt={slo_ttlt})"
            )));
        }
        Ok(QosSpec {
            bucket_id,
            slo: Slo::NonInteractive { ttlt: slo_ttlt },
        })
    }

    pub fn bucket_id(&self) -> BucketId {
        self.bucket_id
    }

    pub fn class(&self) -> QosClass {
        match self.slo {
            Slo::Interactive { .. } => QosClass::Interactive,
            Slo::NonInteractive { .. } => QosClass::NonInteractive,
        }
    }

    pub fn is_interactive(&self) -> bool {
        matches!(self.slo, Slo::Interactive { .. })
    }

    pub fn slo_ttft(&self) -> Option<S> {
        match self.slo {
            Slo::Interactive { ttft, .. } => Some(ttft),
            Slo::NonInteractive { .. } => None,
        }
    }

    pub fn slo_tbt(&self) -> Option<S> {
        match self.slo {
            Slo::Interactive { tbt, .. } => Some(tbt),
            Slo::NonInteractive { .. } => None,
        }
    }

    pub fn slo_ttlt(&self) -> Option<S> {
        match self.slo {
            Slo::NonInteractive { ttlt } => Some(ttlt),
            Slo::Interactive { .. } => None,
        }
    }
}

/// Everything a scheduling policy may know about a request.
///
/// The realised decode length is deliberately absent; it lives on
/// [`Request`] and only the execution model reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestInfo<S = f64> {
    pub id: RequestId,
    pub t_arrival: S,
    pub prompt_tokens: u32,
    pub qos: QosSpec<S>,
    pub app_priority: AppPriority,
    pub app_id: AppId,
}

/// One inference job as it appears in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request<S = f64> {
    info: RequestInfo<S>,
    decode_tokens: u32,
}

impl<S: Scalar> Request<S> {
    pub fn new(info: RequestInfo<S>, decode_tokens: u32) -> Result<Self> {
        let id = info.id;
        if info.prompt_tokens < 1 {
            return Err(Error::Validation {
                id,
                field: "prompt_tokens",
                msg: "must be >= 1".into(),
            });
        }
        if decode_tokens < 1 {
            return Err(Error::Validation {
                id,
                field: "decode_tokens",
                msg: "must be >= 1".into(),
            });
        }
        if !(info.t_arrival >= S::zero() && info.t_arrival.is_finite()) {
            return Err(Error::Validation {
                id,
                field: "t_arrival",
                msg: format!("must be finite and >= 0, got {}", info.t_arrival),
            });
        }
        Ok(Request {
            info,
            decode_tokens,
        })
    }

    pub fn info(&self) -> &RequestInfo<S> {
        &self.info
    }

    pub fn id(&self) -> RequestId {
        self.info.id
    }

    pub fn t_arrival(&self) -> S {
        self.info.t_arrival
    }

    pub fn prompt_tokens(&self) -> u32 {
        self.info.prompt_tokens
    }

    pub fn qos(&self) -> &QosSpec<S> {
        &self.info.qos
    }

    /// Ground-truth decode length. Only the execution model should read this.
    pub fn decode_tokens(&self) -> u32 {
        self.decode_tokens
    }

    pub fn into_parts(self) -> (RequestInfo<S>, u32) {
        (self.info, self.decode_tokens)
    }
}
