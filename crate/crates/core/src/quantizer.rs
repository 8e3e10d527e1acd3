//! Uniform hypercube quantizers.
//!
//! The hypercube `{v : |v - center|_inf <= E}` is cut into `N^d` equal
//! boxes. A box is identified by a mixed-radix index with axis 0 as the
//! least significant digit; only that index crosses the channel, and the
//! receiver reconstructs the box center.

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Points this far outside the hypercube, relative to its half-width, are
/// still accepted and clamped into the outer boxes. It absorbs the last-ulp
/// disagreement between a bound and the value it bounds.
pub const SATURATION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HypercubeQuantizer {
    center: Vector,
    half_width: f64,
    levels: u64,
}

impl HypercubeQuantizer {
    pub fn new(center: Vector, half_width: f64, levels: u64) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Argument(format!("levels must be >= 2, got {levels}")));
        }
        if !(half_width >= 0.0 && half_width.is_finite()) {
            return Err(Error::Argument(format!(
                "half-width must be finite and nonnegative, got {half_width}"
            )));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("quantizer center is not finite".into()));
        }
        let dim = u32::try_from(center.len())
            .map_err(|_| Error::Argument("quantizer dimension too large".into()))?;
        if levels.checked_pow(dim).is_none() {
            return Err(Error::Argument(format!(
                "{levels}^{dim} boxes do not fit in a 64-bit index"
            )));
        }
        Ok(Self {
            center,
            half_width,
            levels,
        })
    }

    /// Hypercube around the origin.
    pub fn origin(dim: usize, half_width: f64, levels: u64) -> Result<Self> {
        Self::new(Vector::zeros(dim), half_width, levels)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn levels(&self) -> u64 {
        self.levels
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn box_count(&self) -> u64 {
        self.levels.pow(self.dim() as u32)
    }

    fn axis_bin(&self, offset: f64) -> u64 {
        if self.half_width == 0.0 {
            return 0;
        }
        let n = self.levels as f64;
        let raw = ((offset + self.half_width) * n / (2.0 * self.half_width)).floor();
        (raw.max(0.0) as u64).min(self.levels - 1)
    }

    /// Index of the box containing `v`.
    pub fn encode(&self, v: &Vector) -> Result<u64> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "quantizer has dimension {}, value has {}",
                self.dim(),
                v.len()
            )));
        }
        let limit = self.half_width * (1.0 + SATURATION_SLACK);
        let mut index = 0u64;
        let mut radix = 1u64;
        for (axis, (&x, &c)) in v.iter().zip(self.center.iter()).enumerate() {
            let offset = x - c;
            // negated comparison so NaN also saturates
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(offset.abs() <= limit) {
                return Err(Error::Saturation {
                    axis,
                    excess: offset.abs() - self.half_width,
                });
            }
            index += self.axis_bin(offset) * radix;
            radix = radix.wrapping_mul(self.levels);
        }
        Ok(index)
    }

    /// Center of box `index`.
    pub fn decode(&self, index: u64) -> Result<Vector> {
        if index >= self.box_count() {
            return Err(Error::Argument(format!(
                "box index {index} out of range 0..{}",
                self.box_count()
            )));
        }
        if self.half_width == 0.0 {
            return Ok(self.center.clone());
        }
        let n = self.levels as f64;
        let mut rest = index;
        let out = Vector::from_iterator(
            self.dim(),
            self.center.iter().map(|&c| {
                let bin = rest % self.levels;
                rest /= self.levels;
                // odd offsets from the middle keep the central box exact
                let offset = (2 * bin + 1) as f64 - n;
                c + self.half_width * offset / n
            }),
        );
        Ok(out)
    }

    /// Encode followed by decode.
    pub fn quantize(&self, v: &Vector) -> Result<(u64, Vector)> {
        let index = self.encode(v)?;
        Ok((index, self.decode(index)?))
    }

    /// `E / N`: worst-case distance from an in-range value to its box center.
    pub fn quantization_error_bound(&self) -> f64 {
        self.half_width / self.levels as f64
    }

    /// `(N - 1) E / N`: worst-case distance from a box center to the
    /// hypercube center.
    pub fn center_offset_bound(&self) -> f64 {
        (self.levels - 1) as f64 * self.half_width / self.levels as f64
    }
}
