//! Excitation signals and sampled input/output datasets.

mod dataset;
mod prbs;

pub use dataset::{fmt_f64, Dataset};
pub use prbs::{
    default_taps, measure_period, prbs_channels, prbs_generate, prbs_generate_shifted, Lfsr, PrbsSpec,
    MAX_REGISTER_LENGTH, MIN_REGISTER_LENGTH,
};
