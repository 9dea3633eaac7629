use crate::{Error, Result};
use rand::Rng;

/// Dense row-major tensor of `f64`.
///
/// Kept deliberately small: the model needs rank-1 through rank-3 tensors,
/// elementwise access, and nothing clever. All shape checks are explicit so
/// a mismatch surfaces as an [`Error::Shape`] instead of a silent
/// out-of-bounds panic deep in a loop.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform values in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Glorot-uniform initialization: `U(-a, a)` with `a = sqrt(6/(fan_in+fan_out))`.
    pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::uniform(shape, -a, a, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major offset of `[i, j]` in a rank-2 tensor.
    #[inline]
    pub(crate) fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        debug_assert!(i < self.shape[0] && j < self.shape[1]);
        i * self.shape[1] + j
    }

    /// Row-major offset of `[i, j, l]` in a rank-3 tensor.
    #[inline]
    pub(crate) fn idx3(&self, i: usize, j: usize, l: usize) -> usize {
        debug_assert_eq!(self.rank(), 3);
        debug_assert!(i < self.shape[0] && j < self.shape[1] && l < self.shape[2]);
        (i * self.shape[1] + j) * self.shape[2] + l
    }

    #[inline]
    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx2(i, j)]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx2(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn get3(&self, i: usize, j: usize, l: usize) -> f64 {
        self.data[self.idx3(i, j, l)]
    }

    /// Errors unless every element is finite. Layer entry points call this
    /// so NaN/inf poisoning is caught at the boundary where it appeared.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {v} at flat index {i} in {context}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn row_major_layout() {
        let t = Tensor::from_vec(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.get2(0, 2), 2.0);
        assert_eq!(t.get2(1, 0), 3.0);
        let t3 = Tensor::from_vec(&[2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t3.get3(1, 0, 1), 5.0);
        assert_eq!(t3.get3(0, 1, 0), 2.0);
    }

    #[test]
    fn uniform_respects_bounds_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::uniform(&[100], -0.5, 0.5, &mut rng);
        assert!(a.data().iter().all(|v| (-0.5..0.5).contains(v)));
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let b = Tensor::uniform(&[100], -0.5, 0.5, &mut rng2);
        assert_eq!(a, b);
    }

    #[test]
    fn glorot_bound_matches_fan_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::glorot(&[50, 20], 50, 20, &mut rng);
        let a = (6.0f64 / 70.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < a));
        // Values should actually use the range, not cluster at zero.
        assert!(t.data().iter().any(|v| v.abs() > 0.5 * a));
    }

    #[test]
    fn ensure_finite_catches_nan() {
        let mut t = Tensor::zeros(&[3]);
        assert!(t.ensure_finite("test").is_ok());
        t.data_mut()[1] = f64::NAN;
        let err = t.ensure_finite("test").unwrap_err();
        assert!(err.to_string().contains("flat index 1"));
    }
}
