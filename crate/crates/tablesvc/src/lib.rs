//! `tablesvc` is a self-contained benchmark for table-service suggestion:
//! deciding, from overhead observations of a restaurant table, whether staff
//! should refill a drink, clear trash, offer dessert, or flag a lost item.
//!
//! The crate has no external model dependencies. A small scripted world
//! simulator ([`synthworld`]) produces episodes with known ground truth and
//! emits the kind of feature bundles a frozen perception stack would: a
//! backbone grid, encoder tokens, and per-region descriptors. Lightweight
//! trainable heads ([`learner`]) aggregate those features (average, max, or
//! learned attention), combine sources, and classify either exclusively
//! (softmax over four service classes plus all-clear) or as independent
//! multi-label flags. Active-learning strategies ([`selection`]) pick which
//! pool frames to label under a budget, [`metrics`] scores predictions with
//! macro F1 and ROC AUC, and [`harness`] wires everything into reproducible
//! command-line experiments.
//!
//! Everything is deterministic given a seed: dataset generation, train/eval
//! splits, weight initialization, batch order, and selection.

pub mod aggregation;
pub mod dataset;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod selection;
pub mod synthworld;
