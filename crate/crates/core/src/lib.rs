pub mod controller;
pub mod identity;
pub mod rpsl;
pub mod ledger;
pub mod skau;
pub mod iirr;
pub mod runtime;
pub mod interdomain;
pub mod cli;
