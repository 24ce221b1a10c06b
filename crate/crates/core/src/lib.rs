//! Solver for 1D elliptic problems `-(a_ε u')' = f` on `(0, 1)` with homogeneous
//! Dirichlet data and rapidly oscillating coefficients.
//!
//! Every grid vector and matrix lives in the quantized tensor-train (QTT) format,
//! so a grid with `N = 2^L` interior nodes costs `O(L r^2)` storage and the
//! iteration cost grows with `L`, not `N`. The crate is organised as
//!
//! * [`qtt`]: QTT vectors and matrices, rounding, arithmetic and explicit
//!   low-rank constructions (shift, masks, trigonometric and polynomial samples);
//! * [`fem`]: the uniform P1 Galerkin discretization, coefficient and load
//!   descriptions, dense and QTT stiffness assembly, and the explicit QTT
//!   Green's function of the constant-coefficient preconditioner;
//! * [`contraction`]: step parameter, contraction factor and choice of the
//!   simplified coefficient `a₀`;
//! * [`solver`]: fixed-point and preconditioned steepest descent iterations with
//!   rank truncation;
//! * [`error_control`]: functional majorants and two-sided error bounds;
//! * [`homogenize`]: the 1D homogenization baseline.

pub mod contraction;
pub mod error_control;
pub mod fem;
pub mod homogenize;
pub mod qtt;
pub mod quadrature;
pub mod solver;

mod error;

pub use error::{Error, Result};
