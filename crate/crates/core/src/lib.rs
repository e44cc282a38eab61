//! Spectral Navier-Stokes solver on the two-dimensional periodic torus with
//! continuous data assimilation, Reynolds-number sensitivities and
//! difference-quotient diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod experiments;
pub mod interp;
pub mod io;
pub mod par;
pub mod random;
pub mod spectral;
pub mod stepper;
