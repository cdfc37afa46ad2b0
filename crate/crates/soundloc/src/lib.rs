//! IO, file formats, and evaluation sweeps around [`soundloc_core`].
//!
//! The core crate is `no_std`-compatible and carries the signal processing;
//! this companion holds everything that touches the filesystem: multichannel
//! WAV reading and writing, the array geometry config format, line-delimited
//! detection records, and the simulation sweeps behind `soundloc eval`.

pub mod eval;
pub mod io;
