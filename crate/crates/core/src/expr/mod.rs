//! Restricted expression algebra.
//!
//! Two families are supported: [`LinLogExpr`], a rational combination of the
//! basis `{1, ln n, n, n ln n}`, and [`PsiExpr`], a finite sum of terms
//! `mu * c^nu * ln(c)^xi` with `xi` in `{0, 1}`.

mod linlog;
mod psi;

pub use linlog::{fmt_rational, parse_rational, Basis, LinLogExpr, LinLogF64};
pub(crate) use linlog::rat_to_f64;
pub use psi::{PsiExpr, PsiTerm};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("expression is not linear in the basis {{1, ln n, n, n ln n}}: {0}")]
    NonLinear(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expression is empty")]
    EmptyExpr,
    #[error("leading coefficient must be positive")]
    NonPositiveLeadingCoefficient,
    #[error("cannot divide the zero expression")]
    ZeroExpr,
}
