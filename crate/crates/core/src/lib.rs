//! Coded-excitation ultrasound array imaging toolkit.
//!
//! The crate synthesizes channel data for point-scatterer phantoms insonified
//! with linear FM pulses and reconstructs scan lines three ways:
//!
//! * time-domain beamforming with per-channel matched filtering
//!   ([`tdbf::beamform_pre_compression`]), the reference result;
//! * time-domain beamforming followed by one matched filter
//!   ([`tdbf::beamform_post_compression`]), the cheap but distorted baseline;
//! * frequency-domain beamforming with the matched filter folded into the
//!   beamforming weights ([`fdbf`]), which reproduces the reference at a
//!   fraction of the multiplication count.
//!
//! [`metrics`] measures axial and lateral point-spread functions and evaluates the
//! closed-form multiplication counts, [`imaging`] turns fans of scan lines into
//! B-mode sector images, and [`cli`] drives config-based experiments.

pub mod cli;
pub mod dsp;
pub mod error;
pub mod fdbf;
pub mod imaging;
pub mod metrics;
pub mod scene;
pub mod tdbf;
pub mod waveform;

pub use error::{Error, Result};
