//! Serves recorded backend responses without any network access.

use std::collections::{HashMap, VecDeque};

use super::{CallKind, GenerateRequest, GeneratorBackend, RefineRequest, Transcript};
use crate::error::{Error, Result};

/// Answers each call with the next recorded outcome for the same call kind
/// and prompt text. Recorded failures are replayed as backend errors.
#[derive(Clone, Debug, Default)]
pub struct ReplayBackend {
    queue: HashMap<(CallKind, String), VecDeque<std::result::Result<String, String>>>,
}

impl ReplayBackend {
    pub fn new(transcripts: impl IntoIterator<Item = Transcript>) -> Self {
        let mut queue: HashMap<_, VecDeque<_>> = HashMap::new();
        for t in transcripts {
            let outcome = match (t.response, t.error) {
                (Some(r), _) => Ok(r),
                (None, e) => Err(e.unwrap_or_else(|| "recorded call has no response".into())),
            };
            queue.entry((t.kind, t.prompt)).or_default().push_back(outcome);
        }
        Self { queue }
    }

    /// Recorded calls not consumed yet.
    pub fn remaining(&self) -> usize {
        self.queue.values().map(VecDeque::len).sum()
    }

    fn next(&mut self, kind: CallKind, prompt: &str) -> Result<String> {
        let outcome = self
            .queue
            .get_mut(&(kind, prompt.to_string()))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| Error::Backend(format!("no recorded {kind:?} response for this prompt")))?;
        outcome.map_err(Error::Backend)
    }
}

impl GeneratorBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn generate(&mut self, req: &GenerateRequest<'_>) -> Result<String> {
        self.next(CallKind::Generate, req.prompt)
    }

    fn refine_rules(&mut self, req: &RefineRequest<'_>) -> Result<String> {
        self.next(CallKind::Refine, req.prompt)
    }
}
