use crate::backends::{Backends, EmbeddingService, Llm};
use crate::prompts::PromptSet;
use crate::taxonomy::Taxonomy;

/// Shared read-only services handed to every pipeline stage.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub taxonomy: &'a Taxonomy,
    pub prompts: &'a PromptSet,
    pub llm: &'a Llm,
    pub embedder: &'a EmbeddingService,
}

impl<'a> Context<'a> {
    pub fn new(taxonomy: &'a Taxonomy, prompts: &'a PromptSet, backends: &'a Backends) -> Self {
        Context { taxonomy, prompts, llm: &backends.llm, embedder: &backends.embedder }
    }
}
