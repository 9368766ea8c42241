//! Maximal-length pseudo-random binary sequences from a Fibonacci linear
//! feedback shift register.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Known primitive feedback taps for register lengths 2..=16. Entry `i`
/// holds the taps for an `i + 2` stage register.
const PRIMITIVE_TAPS: [&[u32]; 15] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 11, 10, 4],
    &[13, 12, 11, 8],
    &[14, 13, 12, 2],
    &[15, 14],
    &[16, 15, 13, 4],
];

pub const MIN_REGISTER_LENGTH: u32 = 2;
pub const MAX_REGISTER_LENGTH: u32 = 16;

/// Built-in primitive taps for a register of `n` stages.
pub fn default_taps(n: u32) -> Option<&'static [u32]> {
    if (MIN_REGISTER_LENGTH..=MAX_REGISTER_LENGTH).contains(&n) {
        Some(PRIMITIVE_TAPS[(n - MIN_REGISTER_LENGTH) as usize])
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrbsSpec {
    pub register_length: u32,
    /// 1-based stage positions XORed into the feedback bit.
    pub taps: Vec<u32>,
    /// `(low, high)`; bit 1 maps to `high`.
    pub levels: (f64, f64),
    /// Samples each bit is held for.
    pub clock_period: usize,
    pub total_length: usize,
    pub seed: u32,
}

impl PrbsSpec {
    /// Spec with the built-in taps for `register_length`, unit clock, seed 1.
    pub fn new(register_length: u32, levels: (f64, f64), total_length: usize) -> Result<Self> {
        let taps = default_taps(register_length)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no built-in taps for a {register_length}-stage register (supported: 2..=16)"
                ))
            })?
            .to_vec();
        Ok(PrbsSpec {
            register_length,
            taps,
            levels,
            clock_period: 1,
            total_length,
            seed: 1,
        })
    }

    pub fn with_clock_period(mut self, clock_period: usize) -> Self {
        self.clock_period = clock_period;
        self
    }

    pub fn with_seed(mut self, seed: u32) -> Self {
        self.seed = seed;
        self
    }

    /// Period of the underlying bit sequence, `2^n - 1`.
    pub fn period(&self) -> u64 {
        (1u64 << self.register_length) - 1
    }

    /// Checks every invariant, including the measured register period.
    pub fn validate(&self) -> Result<()> {
        let n = self.register_length;
        if !(MIN_REGISTER_LENGTH..=MAX_REGISTER_LENGTH).contains(&n) {
            return Err(Error::InvalidArgument(format!(
                "register length {n} outside supported range 2..=16"
            )));
        }
        if self.taps.is_empty() || self.taps.iter().any(|&t| t == 0 || t > n) {
            return Err(Error::InvalidArgument(format!(
                "taps {:?} must be stage positions in 1..={n}",
                self.taps
            )));
        }
        let (low, high) = self.levels;
        if !(low < high) {
            return Err(Error::InvalidArgument(format!(
                "PRBS levels must satisfy low < high, got ({low}, {high})"
            )));
        }
        if self.clock_period == 0 {
            return Err(Error::InvalidArgument("clock period must be at least 1".into()));
        }
        if self.total_length == 0 {
            return Err(Error::InvalidArgument("total length must be at least 1".into()));
        }
        if self.seed == 0 {
            return Err(Error::ZeroSeed);
        }
        if self.seed >= (1u32 << n) {
            return Err(Error::InvalidArgument(format!(
                "seed {:#x} does not fit in a {n}-stage register",
                self.seed
            )));
        }
        let measured = measure_period(n, &self.taps, self.seed);
        if measured != self.period() {
            return Err(Error::NonPrimitiveTaps {
                register_length: n,
                taps: self.taps.clone(),
                measured,
                expected: self.period(),
            });
        }
        Ok(())
    }

    /// The raw register output bits, `count` of them, before level mapping
    /// and clock expansion.
    pub fn bits(&self, count: usize) -> Result<Vec<bool>> {
        self.validate()?;
        let mut lfsr = Lfsr::new(self.register_length, &self.taps, self.seed);
        Ok((0..count).map(|_| lfsr.next_bit()).collect())
    }
}

/// Fibonacci shift register; bit `i - 1` of `state` is stage `i`.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u32,
    mask: u32,
    tap_mask: u32,
    out_stage: u32,
}

impl Lfsr {
    pub fn new(register_length: u32, taps: &[u32], seed: u32) -> Self {
        let mask = ((1u64 << register_length) - 1) as u32;
        let tap_mask = taps.iter().fold(0u32, |acc, &t| acc | (1 << (t - 1)));
        Lfsr {
            state: seed & mask,
            mask,
            tap_mask,
            out_stage: register_length - 1,
        }
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    pub fn next_bit(&mut self) -> bool {
        let out = (self.state >> self.out_stage) & 1 == 1;
        let feedback = (self.state & self.tap_mask).count_ones() & 1;
        self.state = ((self.state << 1) | feedback) & self.mask;
        out
    }
}

/// Steps the register from `seed` until the state recurs. Returns 0 when it
/// never comes back within `2^n` steps (non-invertible feedback).
pub fn measure_period(register_length: u32, taps: &[u32], seed: u32) -> u64 {
    let mut lfsr = Lfsr::new(register_length, taps, seed);
    let start = lfsr.state();
    let cap = 1u64 << register_length;
    for step in 1..=cap {
        lfsr.next_bit();
        if lfsr.state() == start {
            return step;
        }
    }
    0
}

/// Generates `total_length` samples taking only the two level values; each
/// register bit is held for `clock_period` samples.
pub fn prbs_generate(spec: &PrbsSpec) -> Result<Vec<f64>> {
    prbs_generate_shifted(spec, 0)
}

/// Like [`prbs_generate`] but starting `bit_offset` bits into the sequence.
pub fn prbs_generate_shifted(spec: &PrbsSpec, bit_offset: usize) -> Result<Vec<f64>> {
    let bits_needed = spec.total_length.div_ceil(spec.clock_period.max(1));
    let bits = spec.bits(bits_needed + bit_offset)?;
    let (low, high) = spec.levels;
    Ok(bits[bit_offset..]
        .iter()
        .flat_map(|&b| std::iter::repeat_n(if b { high } else { low }, spec.clock_period))
        .take(spec.total_length)
        .collect())
}

/// Multi-channel excitation: channel `j` reuses the register sequence
/// circularly shifted by `j · period / channels` bits, so the channels are
/// mutually uncorrelated over one period. `levels[j]` gives the channel's
/// `(low, high)`.
pub fn prbs_channels(spec: &PrbsSpec, levels: &[(f64, f64)]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let channels = levels.len();
    if channels == 0 {
        return Err(Error::InvalidArgument("at least one excitation channel required".into()));
    }
    let stride = (spec.period() as usize) / channels;
    let mut out = DMatrix::zeros(spec.total_length, channels);
    for (j, &lv) in levels.iter().enumerate() {
        let channel_spec = PrbsSpec {
            levels: lv,
            ..spec.clone()
        };
        let col = prbs_generate_shifted(&channel_spec, j * stride)?;
        out.column_mut(j).copy_from_slice(&col);
    }
    Ok(out)
}
