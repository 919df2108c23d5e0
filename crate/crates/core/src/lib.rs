//! Energy-data model for Module Type Package manifests.
//!
//! - [`caex`]: order-preserving CAEX/AutomationML tree, parser and serializer
//! - [`enrg`]: the EnRGView record, validation, accuracy and measurement IDs
//! - [`mtp`]: library/instance injection, registry extraction, manifest validation
//! - [`tagbus`]: line-oriented JSON tag protocol
//! - [`sim`]: deterministic simulated PEA serving the tag protocol
//! - [`pol`]: monitoring client, sample logs and energy KPI reports
//! - [`cli`]: the `mtpenergy` command line

pub mod caex;
pub mod cli;
pub mod enrg;
pub mod mtp;
pub mod pol;
pub mod sim;
pub mod tagbus;
