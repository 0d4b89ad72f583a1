use std::sync::Arc;

use super::{John, PerformerDescriptor, PerformerError, Role};
use crate::rng;
use crate::textdata::{john_iid_next, john_sequential_next, CorpusHandle, Instance};

/// Registry name `john-iid`: uniform draws with replacement. Draw `i` uses
/// the stream `(seed, "john-iid", i)`.
pub struct JohnIid {
    corpus: Arc<CorpusHandle>,
    seed: u64,
    draws: u64,
    descriptor: PerformerDescriptor,
}

impl JohnIid {
    pub const NAME: &'static str = "john-iid";

    pub fn new(corpus: Arc<CorpusHandle>, seed: u64) -> Result<Self, PerformerError> {
        let descriptor = PerformerDescriptor::new(
            Role::John,
            Self::NAME,
            format!("{} ({} instances)", corpus.provenance(), corpus.len()),
        )?;
        Ok(JohnIid { corpus, seed, draws: 0, descriptor })
    }
}

impl John for JohnIid {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn next_instance(&mut self, _round: u64) -> Result<Instance, PerformerError> {
        let mut rng = rng::stream(self.seed, Self::NAME, self.draws);
        self.draws += 1;
        Ok(john_iid_next(&self.corpus, &mut rng)?.clone())
    }
}

/// Registry name `john-sequential`: corpus order, wrapping at the end.
pub struct JohnSequential {
    corpus: Arc<CorpusHandle>,
    cursor: usize,
    descriptor: PerformerDescriptor,
}

impl JohnSequential {
    pub const NAME: &'static str = "john-sequential";

    pub fn new(corpus: Arc<CorpusHandle>, start: usize) -> Result<Self, PerformerError> {
        let descriptor = PerformerDescriptor::new(
            Role::John,
            Self::NAME,
            format!("{} ({} instances)", corpus.provenance(), corpus.len()),
        )?;
        Ok(JohnSequential { cursor: start % corpus.len().max(1), corpus, descriptor })
    }
}

impl John for JohnSequential {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn next_instance(&mut self, _round: u64) -> Result<Instance, PerformerError> {
        let draw = john_sequential_next(&self.corpus, self.cursor)?;
        self.cursor = draw.next;
        Ok(draw.instance.clone())
    }
}
