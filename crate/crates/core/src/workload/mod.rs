//! Requests, QoS buckets and workload synthesis.

mod dataset;
mod generate;
mod request;
pub mod rng;
mod trace_io;

pub use dataset::{fit_lognormal, DatasetStats, LogNormalFit};
pub use generate::{generate_trace, ArrivalRate, BucketShare, TraceSpec};
pub use request::{
    AppId, AppPriority, BucketId, QosClass, QosSpec, Request, RequestId, RequestInfo,
};
pub use trace_io::{load_trace, read_trace, save_trace, write_trace, BucketTable, TRACE_HEADER};

/// The three QoS buckets used throughout the evaluation: one interactive
/// bucket (TTFT 6 s, TBT 50 ms) and two non-interactive buckets with TTLT
/// targets of 600 s and 1800 s, mixed in equal thirds.
pub fn standard_buckets() -> Vec<BucketShare> {
    let third = 1.0 / 3.0;
    vec![
        BucketShare {
            qos: QosSpec::interactive(0, 6.0, 0.050).expect("valid"),
            fraction: third,
        },
        BucketShare {
            qos: QosSpec::non_interactive(1, 600.0).expect("valid"),
            fraction: third,
        },
        BucketShare {
            qos: QosSpec::non_interactive(2, 1800.0).expect("valid"),
            fraction: third,
        },
    ]
}
