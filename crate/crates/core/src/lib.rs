//! Thinned Bernoulli fields on `Z^d`: the map removing isolated ones, exact
//! finite-volume kernels of the thinned field, constrained Monte Carlo,
//! contours of the checkerboard phases and Dobrushin bounds.

pub mod config;
pub mod constrained_sampler;
pub mod contour;
pub mod dobrushin;
pub mod exact_oracle;
pub mod experiments;
pub mod lattice;
pub mod record;
pub mod runtime;
