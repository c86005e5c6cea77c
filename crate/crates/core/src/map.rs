use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, Tensor};

/// A `height × width` grid of confidences in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionnessMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ActionnessMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("actionness map dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("actionness value {v} outside [0, 1]")));
        }
        Ok(ActionnessMap {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// # Panics
    /// Panics on a zero dimension or a value outside `[0, 1]`.
    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0);
        assert!((0.0..=1.0).contains(&value));
        ActionnessMap {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// # Panics
    /// Panics if `f` yields a value outside `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values).expect("map values must lie in [0, 1]")
    }

    /// Take one channel of a tensor; values are clamped into `[0, 1]`.
    pub fn from_tensor_channel(t: &Tensor<f32>, channel: usize) -> Result<Self> {
        let ch = t.channel(channel)?;
        if !ch.is_finite() {
            return Err(Error::NonFinite("actionness map".into()));
        }
        let values = ch.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(t.height(), t.width(), values)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(self.height, self.width, 1, self.values.clone()).expect("map dims are positive")
    }

    /// Corner-aligned bilinear resize.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let t = bilinear_resize(&self.to_tensor(), height, width)?;
        Self::from_tensor_channel(&t, 0)
    }

    /// Nearest-neighbour resize (keeps binary maps binary). Output cell `i`
    /// reads the source cell containing its centre.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("resize target must be positive"));
        }
        let pick = |i: usize, src: usize, dst: usize| ((2 * i + 1) * src / (2 * dst)).min(src - 1);
        Ok(Self::from_fn(height, width, |r, c| {
            self.get(pick(r, self.height, height), pick(c, self.width, width))
        }))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}
