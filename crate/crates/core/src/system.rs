//! Continuous-time LTI systems `x' = A x + B u` and the bundled example systems.

use crate::error::{Error, Result};
use crate::matrix::{from_rows, Mat, MatrixJson};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: Mat,
    pub b: Mat,
}

impl LtiSystem {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Parameter(format!(
                "A must be square and nonempty, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Parameter(format!(
                "B has {} rows but A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("system matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// JSON form of a system: `{ "a": {rows, cols, data}, "b": {...} }`.
#[derive(Debug, Clone, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SystemJson {
    pub a: MatrixJson,
    pub b: MatrixJson,
}

impl SystemJson {
    pub fn to_system(&self) -> Result<LtiSystem> {
        LtiSystem::new(self.a.to_mat()?, self.b.to_mat_allow_empty()?)
    }
}

impl From<&LtiSystem> for SystemJson {
    fn from(s: &LtiSystem) -> Self {
        SystemJson {
            a: (&s.a).into(),
            b: (&s.b).into(),
        }
    }
}

/// Cart with two inverted pendulums (pendulum lengths 30 and 35).
///
/// The second input gain is `-0.0033 / 7`; its 4-digit rounding is `-0.0005`.
pub fn cart() -> LtiSystem {
    let a = from_rows(&[
        &[0.0, 1.0, 0.0, 0.0],
        &[0.392, 0.0, -0.0327, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
        &[0.056, 0.0, 0.2753, 0.0],
    ]);
    let b = from_rows(&[&[0.0], &[-0.0033], &[0.0], &[-0.0033 / 7.0]]);
    LtiSystem { a, b }
}

/// Single-input 4D example used for the coupling-versus-delta sweep.
pub fn example_4d() -> LtiSystem {
    let a = from_rows(&[
        &[1.5072, 3.3984, 0.1300, -0.0884],
        &[5.0644, -2.6683, 0.0227, 0.1689],
        &[0.1156, -0.1863, 0.5686, 0.2648],
        &[-0.0808, 0.0229, 0.4915, 0.5949],
    ]);
    let b = from_rows(&[&[-0.7433], &[-2.2528], &[-0.9075], &[0.6036]]);
    LtiSystem { a, b }
}

/// Two-input 6D two-time-scale example.
pub fn example_6d() -> LtiSystem {
    let a = from_rows(&[
        &[-0.3557, -0.3078, -0.6097, 2.0275, -1.3636, -0.4131],
        &[0.1233, -1.6441, 0.2404, -0.6431, 0.0517, -0.1454],
        &[1.8857, -1.1748, -1.2502, -0.7252, -0.7801, -0.3972],
        &[-0.0194, -0.0779, -0.0208, 0.0160, -0.0465, 0.0535],
        &[-0.0486, -0.0192, 0.0781, 0.1017, 0.0838, -0.0518],
        &[0.0043, -0.0849, -0.0228, -0.0901, -0.0319, -0.1143],
    ]);
    let b = from_rows(&[
        &[1.0720, -0.8153],
        &[-1.7390, -0.7181],
        &[-0.8292, -0.4906],
        &[0.0156, 0.0540],
        &[-0.0960, 0.0875],
        &[-0.0347, -0.0054],
    ]);
    LtiSystem { a, b }
}

/// Shared-input 2D system `x1' = x1 + u`, `x2' = x2 - u`.
pub fn shared_input_2d() -> LtiSystem {
    LtiSystem {
        a: Mat::identity(2, 2),
        b: from_rows(&[&[1.0], &[-1.0]]),
    }
}

/// Random two-time-scale system: standard normal entries, with the lower
/// `n - k` rows of A and B scaled by `eps`.
pub fn random_two_time_scale<R: Rng>(
    rng: &mut R,
    n: usize,
    k: usize,
    p: usize,
    eps: f64,
) -> LtiSystem {
    let mut a = Mat::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let mut b = Mat::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    for r in k..n {
        a.row_mut(r).scale_mut(eps);
        b.row_mut(r).scale_mut(eps);
    }
    LtiSystem { a, b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn validation() {
        assert!(LtiSystem::new(Mat::zeros(2, 3), Mat::zeros(2, 1)).is_err());
        assert!(LtiSystem::new(Mat::zeros(2, 2), Mat::zeros(3, 1)).is_err());
        assert!(LtiSystem::new(Mat::zeros(2, 2), Mat::zeros(2, 0)).is_ok());
    }

    #[test]
    fn presets_have_expected_shapes() {
        assert_eq!(cart().states(), 4);
        assert_eq!(example_4d().inputs(), 1);
        assert_eq!(example_6d().inputs(), 2);
        assert!((cart().b[(3, 0)] - (-0.0005)).abs() < 5e-5);
    }

    #[test]
    fn random_systems_are_scaled() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = random_two_time_scale(&mut rng, 6, 3, 2, 0.1);
        assert_eq!(s.a.shape(), (6, 6));
        let upper = s.a.rows(0, 3).iter().map(|v| v.abs()).sum::<f64>();
        let lower = s.a.rows(3, 3).iter().map(|v| v.abs()).sum::<f64>();
        assert!(lower < upper);
    }

    #[test]
    fn json_round_trip() {
        let s = cart();
        let j = SystemJson::from(&s);
        let back = serde_json::from_str::<SystemJson>(&serde_json::to_string(&j).unwrap()).unwrap();
        assert_eq!(back.to_system().unwrap(), s);
    }
}
