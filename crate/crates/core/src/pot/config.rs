use crate::error::{PotError, Result};

/// Bit-width of a PoT code: one sign bit plus `n - 1` exponent bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitWidth(u8);

impl BitWidth {
    pub const MIN: u32 = 2;
    pub const MAX: u32 = 4;

    pub fn new(n: u32) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&n) {
            Ok(BitWidth(n as u8))
        } else {
            Err(PotError::UnsupportedBitWidth(n))
        }
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0 as u32
    }

    /// Largest exponent code, `2^(n-1) - 1`.
    #[inline]
    pub fn q_max(self) -> u8 {
        (1u8 << (self.0 - 1)) - 1
    }

    /// Mask selecting the exponent bits of a code slot.
    #[inline]
    pub fn exponent_mask(self) -> u8 {
        self.q_max()
    }

    /// Number of distinct code slots, `2^n`.
    #[inline]
    pub fn slot_count(self) -> u32 {
        1 << self.0
    }
}

/// Step-1 configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    pub bits: BitWidth,
    pub group_size: usize,
    pub grid_step: f64,
    pub grid_count: usize,
}

impl QuantConfig {
    pub const DEFAULT_GROUP_SIZE: usize = 128;
    pub const DEFAULT_GRID_STEP: f64 = 0.01;
    pub const DEFAULT_GRID_COUNT: usize = 200;

    pub fn new(bits: u32, group_size: usize) -> Result<Self> {
        let cfg = QuantConfig {
            bits: BitWidth::new(bits)?,
            group_size,
            grid_step: Self::DEFAULT_GRID_STEP,
            grid_count: Self::DEFAULT_GRID_COUNT,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_grid(mut self, step: f64, count: usize) -> Result<Self> {
        self.grid_step = step;
        self.grid_count = count;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(PotError::InvalidConfig(
                "group size must be at least 1".into(),
            ));
        }
        if !(self.grid_step.is_finite() && self.grid_step > 0.0) {
            return Err(PotError::InvalidConfig(format!(
                "grid step must be positive, got {}",
                self.grid_step
            )));
        }
        if self.grid_count == 0 {
            return Err(PotError::InvalidConfig(
                "grid count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn q_max(&self) -> u8 {
        self.bits.q_max()
    }

    /// The `i`-th multiplier, `i` in `1..=grid_count`.
    #[inline]
    pub fn multiplier(&self, i: usize) -> f64 {
        i as f64 * self.grid_step
    }

    pub fn multipliers(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.grid_count).map(|i| self.multiplier(i))
    }

    /// Storage cost: code bits plus one FP16 scale amortized over a group.
    pub fn bits_per_weight(&self) -> f64 {
        self.bits.get() as f64 + 16.0 / self.group_size as f64
    }
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig::new(3, Self::DEFAULT_GROUP_SIZE).expect("default config is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_max_per_width() {
        assert_eq!(BitWidth::new(2).unwrap().q_max(), 1);
        assert_eq!(BitWidth::new(3).unwrap().q_max(), 3);
        assert_eq!(BitWidth::new(4).unwrap().q_max(), 7);
        assert!(matches!(
            BitWidth::new(5),
            Err(PotError::UnsupportedBitWidth(5))
        ));
        assert!(BitWidth::new(1).is_err());
    }

    #[test]
    fn default_grid() {
        let cfg = QuantConfig::default();
        assert_eq!(cfg.bits.get(), 3);
        assert_eq!(cfg.group_size, 128);
        let b: Vec<f64> = cfg.multipliers().collect();
        assert_eq!(b.len(), 200);
        assert_eq!(b[0], 0.01);
        assert_eq!(b[99], 1.0);
        assert_eq!(b[174], 1.75);
        assert_eq!(b[199], 2.0);
        assert!(b.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn bits_accounting() {
        assert_eq!(QuantConfig::new(3, 128).unwrap().bits_per_weight(), 3.125);
        assert_eq!(QuantConfig::new(2, 64).unwrap().bits_per_weight(), 2.25);
    }

    #[test]
    fn invalid_configs() {
        assert!(QuantConfig::new(3, 0).is_err());
        assert!(QuantConfig::default().with_grid(0.0, 10).is_err());
        assert!(QuantConfig::default().with_grid(0.01, 0).is_err());
    }
}
