//! Exact symbolic library for deciding whether a completely integrable
//! second-order PDE system in n >= 2 independent variables and one dependent
//! variable is point-equivalent to the flat system whose right-hand sides
//! all vanish.
//!
//! Everything is computed in exact rational arithmetic; every verdict is an
//! exact identity of canonical rational functions, never a numerical check.

pub mod symcore;

pub mod jetspace;

pub mod cubic;

pub mod transform;

pub mod auxiliary;

pub mod corpus;
