//! Learning to pronounce a logographic script from two non-parallel corpora:
//! a stream of written characters and a stream of spoken syllables.
//!
//! Two unsupervised routes are provided and can be combined:
//!
//! * [`channel`] trains a noisy-channel substitution model with EM over
//!   character trigrams, explained by a syllable trigram prior from [`lm`];
//!   [`decoder`] then pronounces text with Viterbi search.
//! * [`embed`] and [`vecmap`] train embeddings for written and spoken words,
//!   align the two spaces with an orthogonal map, and read pronunciations off
//!   nearest neighbours.
//!
//! [`combine`] distills the pairs both routes agree on and feeds them back as
//! hints and constraints. [`eval`] holds the metrics and supervised reference
//! points, [`synth`] generates corpora with known answers, and [`pipeline`]
//! runs the whole thing from a config file.

pub mod error;
pub mod symbols;
pub mod phonology;
pub mod pinyinizer;
pub mod lm;
pub mod channel;
pub mod decoder;
pub mod embed;
pub mod vecmap;
pub mod combine;
pub mod eval;
pub mod synth;
pub mod pipeline;

pub use channel::{ChannelTable, EmConfig, EmMode, LikelihoodTrace};
pub use combine::ConfidentPairs;
pub use decoder::DecodeConfig;
pub use embed::{EmbedConfig, EmbeddingMatrix};
pub use error::{Error, Result};
pub use eval::{EvalMode, EvalReport};
pub use lm::{train_lm, NgramLM, NgramPrior, Smoothing};
pub use phonology::{DecompositionTable, Syllable};
pub use pinyinizer::{pinyinize, PronDictionary};
pub use pipeline::{RunConfig, RunManifest};
pub use symbols::{build_vocab, count_ngrams, count_ngrams_padded, top_k, Domain, NgramCounts, SymbolId, SymbolTable, TokenStream};
pub use synth::{SynthConfig, SynthCorpus};
pub use vecmap::{MappingMatrix, VecmapConfig, WordPronTable};
