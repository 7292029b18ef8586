//! Human-readable `.tir` syntax for programs at every dialect level.
//!
//! ```text
//! module {
//!   func @main(%arg0: tensor<?x3xf32>, %arg1: tensor<3x?xf32>) -> (tensor<?x?xf32>) {
//!     %0 = fe.matmul(%arg0, %arg1) : (tensor<?x3xf32>, tensor<3x?xf32>) -> tensor<?x?xf32>
//!     return %0 : tensor<?x?xf32>
//!   }
//! }
//! ```

mod parser;
mod printer;

use std::fmt;

use thiserror::Error;

use crate::ir::{Diagnostic, SourceLocation};

pub use parser::parse_module;
pub use printer::print_module;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at {loc}: {message}")]
    Syntax { loc: SourceLocation, message: String },
    #[error("verification failed:\n{}", DiagList(.0))]
    VerificationFailed(Vec<Diagnostic>),
}

struct DiagList<'a>(&'a [Diagnostic]);

impl fmt::Display for DiagList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {d}")?;
        }
        Ok(())
    }
}
