use crate::policy::{JobProgress, PriorityKey};
use crate::workload::{Request, RequestId, RequestInfo};

/// A request as the scheduler tracks it, from admission to its last token.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub info: RequestInfo,
    /// Ground-truth output length; hidden from every estimate.
    pub decode_tokens: u32,
    pub progress: JobProgress,
    pub relegated: bool,
    pub t_prefill_done: Option<f64>,
    pub token_times: Vec<f64>,
    pub(crate) key: PriorityKey,
}

impl Job {
    pub fn new(req: Request) -> Self {
        let (info, decode_tokens) = req.into_parts();
        let key = PriorityKey {
            value: info.t_arrival,
            t_arrival: info.t_arrival,
            id: info.id,
        };
        Job {
            info,
            decode_tokens,
            progress: JobProgress::default(),
            relegated: false,
            t_prefill_done: None,
            token_times: Vec::new(),
            key,
        }
    }

    pub fn id(&self) -> RequestId {
        self.info.id
    }

    pub fn key(&self) -> PriorityKey {
        self.key
    }

    pub fn prefill_remaining(&self) -> u32 {
        self.progress.prefill_remaining(&self.info)
    }

    pub fn kv_context_len(&self) -> u32 {
        self.info.prompt_tokens + self.progress.decoded
    }

    /// Time of the most recent output token, or of prefill completion before
    /// the first one.
    pub fn last_token_time(&self) -> Option<f64> {
        self.token_times.last().copied().or(self.t_prefill_done)
    }

    pub fn is_complete(&self) -> bool {
        self.progress.decoded >= self.decode_tokens
    }
}
