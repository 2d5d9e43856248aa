//! Rhythm band-pass filters, zero-phase filtering and analytic signals.

mod butterworth;
mod filtfilt;
mod hilbert;

pub use butterworth::{design_bandpass, design_bandpass_hz, BandSpec, Biquad, FilterSpec, Rhythm};
pub use filtfilt::{filtfilt, pad_len};
pub use hilbert::{analytic_signal, instantaneous_phase, AnalyticSignal};

/// Default broadband cleanup range applied before MVAR fitting.
pub const BROADBAND_HZ: (f64, f64) = (0.5, 45.0);

/// Default band-pass order per filtering pass.
pub const DEFAULT_ORDER: usize = 4;
