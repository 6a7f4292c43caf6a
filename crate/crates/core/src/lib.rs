//! Counter-exploit synthesis against a miniature EVM and a simulated chain.
//!
//! Two strategies are implemented. *Preemptive hijack* takes a freshly deployed
//! exploit contract, enumerates its forced execution paths and turns each into a
//! program we can run ourselves. *Attack backrunning* takes a confirmed attack
//! transaction, rebuilds it as a list of semantic actions and re-targets it at
//! similar, still vulnerable contracts. Both feed a rule-based rewriter and a
//! profit-guided fuzzer; the result is submitted to a simulated block builder.

pub mod contracts;
pub mod corpus;
pub mod funcx;
pub mod fuzz;
pub mod minivm;
pub mod pipeline;
pub mod program;
pub mod hijack;
pub mod traits;
pub mod backrun;
pub mod rewrite;
pub mod chainsim;
pub mod types;

pub use types::{Address, Word};
