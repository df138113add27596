//! Label-text embeddings, attention refinement, and fusion.

pub mod attention;
pub mod cache;
pub mod fusion;

pub use attention::{
    attention_weights, combine, combine_on_tape, mhsa_forward, mhsa_on_tape, MhsaVars, MhsaWeights, TokenMatrix,
    TokenRole,
};
pub use cache::{
    load_embedding_cache, pseudo_cache, pseudo_embed, write_embedding_cache, EmbeddingCache,
    PromptStrategy,
};
pub use fusion::{fuse, fuse_batch, fuse_on_tape, FusionConfig, FusionParams, Pooling, TextBranch, TextBranchVars};
