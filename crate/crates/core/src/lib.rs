pub mod cli;
pub mod codegraph;
pub mod corpus;
pub mod embed;
pub mod gnn;
pub mod labeler;
pub mod lexer;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod trainer;
