//! Core of the network state service: the potential-function classifier, the
//! counter feature pipeline and the on-disk stores.

pub mod classifier;
pub mod features;
pub mod store;
pub mod training;
