//! Ranks a repository of relational database schemas by how likely each one
//! is to answer a natural-language question.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`).
//! The aliases below fix the scalar to `f32`, which is what the CLI and
//! server use.

pub mod scalar;
pub mod schema;
pub mod synth;
pub mod embedding;
pub mod adapter;
pub mod retrieval;
pub mod rerank;
pub mod eval;

pub type Real = f32;
pub type Embedding = embedding::EmbeddingVector<Real>;
pub type Adapter = adapter::LinearAdapter<Real>;
pub type Adapters = retrieval::AdapterSet<Real>;
pub type Index = retrieval::RepositoryIndex<Real>;
pub type DbRouter = retrieval::Router<Real>;
pub type LlmReranker = rerank::Reranker<Real>;
