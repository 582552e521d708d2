use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::workload::RequestInfo;

/// `t_arrival + SLO_TTFT`; interactive requests only.
pub fn first_token_deadline<S: Scalar>(req: &RequestInfo<S>) -> Result<S> {
    req.qos
        .slo_ttft()
        .map(|ttft| req.t_arrival + ttft)
        .ok_or(Error::WrongClass {
            id: req.id,
            class: "non-interactive",
        })
}

/// `t_arrival + SLO_TTFT + (n - 1) * SLO_TBT` for token position `n >= 1`.
pub fn token_deadline<S: Scalar>(req: &RequestInfo<S>, n: u32) -> Result<S> {
    if n == 0 {
        return Err(Error::TokenIndex);
    }
    let first = first_token_deadline(req)?;
    let tbt = req
        .qos
        .slo_tbt()
        .expect("interactive request has a TBT target");
    Ok(first + S::tokens(n as u64 - 1) * tbt)
}

/// `t_arrival + SLO_TTLT`; non-interactive requests only.
pub fn completion_deadline<S: Scalar>(req: &RequestInfo<S>) -> Result<S> {
    req.qos
        .slo_ttlt()
        .map(|ttlt| req.t_arrival + ttlt)
        .ok_or(Error::WrongClass {
            id: req.id,
            class: "interactive",
        })
}

/// The deadline a request's prefill races against: first token for
/// interactive requests, completion otherwise.
pub fn slo_deadline<S: Scalar>(req: &RequestInfo<S>) -> S {
    match (req.qos.slo_ttft(), req.qos.slo_ttlt()) {
        (Some(ttft), _) => req.t_arrival + ttft,
        (None, Some(ttlt)) => req.t_arrival + ttlt,
        (None, None) => unreachable!("QosSpec always carries one target"),
    }
}
