//! Joint transmit beamforming and RIS reflection design for multi-user
//! downlinks, built on fractional-programming block updates.
//!
//! - [`channel`]: Rician channel synthesis over ULA geometry.
//! - [`optimizer`]: the alternating closed-form updates (exact or estimated CSI).
//! - [`estimation`]: DFT pilots and least-squares cascaded channel estimation.
//! - [`baselines`]: ZF/MMSE/MF precoding with simple reflectors and a grid oracle.
//! - [`experiments`]: seeded Monte-Carlo scenarios and their CSV/JSON output.
//! - [`config`]: the run configuration file.

pub mod baselines;
pub mod channel;
pub mod config;
pub mod estimation;
pub mod experiments;
pub mod optimizer;
pub mod units;

mod error;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMat = nalgebra::DMatrix<C64>;
pub type CVec = nalgebra::DVector<C64>;

/// Comma-separated, header row, LF line endings.
pub(crate) fn csv_writer<W: std::io::Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}
