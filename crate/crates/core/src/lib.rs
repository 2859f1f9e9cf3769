//! Noise-robust music auto-tagging with domain-adversarial training.

mod codec;
pub mod corpus;
pub mod evalkit;
pub mod netlab;
pub mod seeding;
pub mod signal;
pub mod trainer;
