//! Rewriting flagged slots: GRU decoder, translation memory, and edit
//! application.

mod apply;
mod decoder;
mod gru;
mod tm;

pub use apply::{
    apply_corrections, fills_from, order_pairs, reference_fills, replay_edits, Correction, Edit, EditOp, NoDecoder,
    SpanDecoder,
};
pub use decoder::{DecodeOutput, Decoder, DecoderConfig};
pub use gru::{gru_step, GruParams};
pub use tm::{jaccard, TmHit, TranslationMemory};
