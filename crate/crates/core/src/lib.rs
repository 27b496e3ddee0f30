//! Rule mining over (question, attended region, answer) transactions.
//!
//! The pipeline: tokenize the question, crop the attention grid to the
//! smallest box holding a fraction `tau` of its mass, map the region feature
//! to its nearest visual codeword, encode the triplet as a transaction, mine
//! frequent itemsets, and keep the association rules that run from question
//! and visual words to answers.

pub mod codebook;
pub mod crop;
pub mod error;
pub mod miner;
pub mod pipeline;
pub mod report;
pub mod rules;
pub mod synth;
pub mod vocab;

pub use codebook::{assign_codeword, train_codebook, Codebook, CodebookConfig};
pub use crop::{min_enclosing_box, num_bboxes, AttentionMap, BoundingBox, CropConfig};
pub use error::{Error, Result};
pub use miner::{build_bitmap_index, mine_frequent, BitmapIndex, FrequentItemsets, Itemset, SupportThreshold};
pub use rules::{causal_filter, generate_rules, query_rules, AssociationRule, ConfidenceThreshold, RuleConfig, RuleSet};
pub use vocab::{IngestRecord, ItemId, Modality, Transaction, TransactionDb, Vocabulary};
