//! Deep ReLU network surrogates for parametric linear transport.
//!
//! Modules:
//! - [`relu_net`]: networks, exact size accounting and composition algebra
//! - [`lip_interp`]: hat functions, product networks, Lipschitz-stable interpolants
//! - [`comp_calculus`]: compositional representations, growth functions, implantation
//! - [`transport_core`]: characteristic and solution network pipelines
//! - [`oracle`]: RK4 and quadrature references
//! - [`harness`]: experiment driver behind the `transnet` binary

pub mod relu_net;
pub mod lip_interp;
pub mod comp_calculus;
pub mod oracle;
pub mod transport_core;
pub mod harness;
