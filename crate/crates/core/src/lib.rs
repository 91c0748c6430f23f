//! Knowledge-specific LoRA experts on a frozen decoder, fused by a per-layer
//! router, for session bundle generation.

pub mod backbone;
pub mod checkpoint;
pub mod decode;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod lora;
pub mod manifest;
pub mod numerics;
pub mod training;
pub mod worldgen;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Backbone(#[from] backbone::BackboneError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Decode(#[from] decode::DecodeError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Fusion(#[from] fusion::FusionError),
    #[error(transparent)]
    Config(#[from] manifest::ConfigError),
    #[error(transparent)]
    Lora(#[from] lora::LoraError),
    #[error(transparent)]
    World(#[from] worldgen::WorldError),
    #[error("no {0}")]
    EmptyData(&'static str),
}
