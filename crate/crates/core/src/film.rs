//! Gated FiLM fusion of 2D and 3D feature maps:
//! `out = g · ((1 + Δγ) · F3 + β) + (1 − g) · F2`, with the gate `g`
//! shared across channels.

use ndarray::{Array3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Pre-sigmoid gate value used at initialization; `σ(−4) ≈ 0.018`, so the
/// fused map starts close to the 2D features.
pub const PRE_GATE_INIT: f64 = -4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilmError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite feature values")]
    NonFinite,
}

/// `H × W × C` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid(pub Array3<f64>);

impl FeatureGrid {
    pub fn new(values: Array3<f64>) -> Result<Self, FilmError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FilmError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self(Array3::zeros((h, w, c)))
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.0.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationParams {
    pub delta_gamma: Array3<f64>,
    pub beta: Array3<f64>,
    /// `H × W × 1`, entries in (0, 1).
    pub gate: Array3<f64>,
}

impl ModulationParams {
    /// Identity modulation with a nearly closed gate.
    pub fn init(h: usize, w: usize, c: usize) -> Self {
        Self {
            delta_gamma: Array3::zeros((h, w, c)),
            beta: Array3::zeros((h, w, c)),
            gate: Array3::from_elem((h, w, 1), sigmoid(PRE_GATE_INIT)),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_shapes(f2d: &FeatureGrid, f3d: &FeatureGrid, p: &ModulationParams) -> Result<(), FilmError> {
    let d = f2d.dim();
    if f3d.dim() != d {
        return Err(FilmError::ShapeMismatch(format!("F2d {:?} vs F3d {:?}", d, f3d.dim())));
    }
    if p.delta_gamma.dim() != d || p.beta.dim() != d {
        return Err(FilmError::ShapeMismatch(format!(
            "features {:?}, Δγ {:?}, β {:?}",
            d,
            p.delta_gamma.dim(),
            p.beta.dim()
        )));
    }
    if p.gate.dim() != (d.0, d.1, 1) {
        return Err(FilmError::ShapeMismatch(format!("gate {:?}, expected {:?}", p.gate.dim(), (d.0, d.1, 1))));
    }
    Ok(())
}

pub fn fuse(f2d: &FeatureGrid, f3d: &FeatureGrid, p: &ModulationParams) -> Result<FeatureGrid, FilmError> {
    check_shapes(f2d, f3d, p)?;
    let gate = p.gate.broadcast(f2d.0.dim()).expect("gate shape checked");
    let mut out = Array3::zeros(f2d.0.dim());
    Zip::from(&mut out)
        .and(&f2d.0)
        .and(&f3d.0)
        .and(&p.delta_gamma)
        .and(&p.beta)
        .and(&gate)
        .for_each(|o, &a, &b, &dg, &be, &g| {
            *o = g * ((1.0 + dg) * b + be) + (1.0 - g) * a;
        });
    Ok(FeatureGrid(out))
}

/// Element-wise partial derivatives of the fused output. The fusion is
/// local, so each output element depends only on the inputs at the same
/// index (and on the gate at the same pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    pub d_f2d: Array3<f64>,
    pub d_f3d: Array3<f64>,
    pub d_delta_gamma: Array3<f64>,
    pub d_beta: Array3<f64>,
    /// Per output channel; the gate's own gradient is the channel sum.
    pub d_gate: Array3<f64>,
}

pub fn fuse_partials(f2d: &FeatureGrid, f3d: &FeatureGrid, p: &ModulationParams) -> Result<Partials, FilmError> {
    check_shapes(f2d, f3d, p)?;
    let dim = f2d.0.dim();
    let gate = p.gate.broadcast(dim).expect("gate shape checked");
    let d_f2d = gate.mapv(|g| 1.0 - g);
    let d_f3d = Zip::from(&gate).and(&p.delta_gamma).map_collect(|&g, &dg| g * (1.0 + dg));
    let d_delta_gamma = Zip::from(&gate).and(&f3d.0).map_collect(|&g, &b| g * b);
    let d_beta = gate.to_owned();
    let d_gate = Zip::from(&f2d.0)
        .and(&f3d.0)
        .and(&p.delta_gamma)
        .and(&p.beta)
        .map_collect(|&a, &b, &dg, &be| (1.0 + dg) * b + be - a);
    Ok(Partials { d_f2d, d_f3d, d_delta_gamma, d_beta, d_gate })
}

/// Denominator floor for the relative error, so entries whose true value is
/// ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Random inputs for `(h, w, c)` drawn from `seed`: features and coefficients
/// in [−1, 1], gate in (0.05, 0.95).
pub fn random_inputs(h: usize, w: usize, c: usize, seed: u64) -> (FeatureGrid, FeatureGrid, ModulationParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shape: (usize, usize, usize), lo: f64, hi: f64| {
        Array3::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
    };
    let f2d = FeatureGrid(draw((h, w, c), -1.0, 1.0));
    let f3d = FeatureGrid(draw((h, w, c), -1.0, 1.0));
    let delta_gamma = draw((h, w, c), -1.0, 1.0);
    let beta = draw((h, w, c), -1.0, 1.0);
    let gate = draw((h, w, 1), 0.05, 0.95);
    (f2d, f3d, ModulationParams { delta_gamma, beta, gate })
}

/// Compares [`fuse_partials`] against central finite differences over every
/// input element and every output element; returns the max relative error.
pub fn fuse_jacobian_check(h: usize, w: usize, c: usize, seed: u64) -> f64 {
    let (f2d, f3d, p) = random_inputs(h, w, c, seed);
    jacobian_error(&f2d, &f3d, &p)
}

pub fn jacobian_error(f2d: &FeatureGrid, f3d: &FeatureGrid, p: &ModulationParams) -> f64 {
    let partials = fuse_partials(f2d, f3d, p).expect("shapes");
    let dim = f2d.dim();
    let mut worst: f64 = 0.0;

    // Full Jacobian column per input element: analytic value on the diagonal
    // positions, zero elsewhere.
    let mut column = |plus: FeatureGrid, minus: FeatureGrid, expected: &dyn Fn((usize, usize, usize)) -> f64| {
        for ((idx, &a), &b) in plus.0.indexed_iter().zip(minus.0.iter()) {
            let numeric = (a - b) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(expected(idx), numeric));
        }
    };

    for i in 0..dim.0 {
        for j in 0..dim.1 {
            for k in 0..dim.2 {
                let at = (i, j, k);
                let on = |idx: (usize, usize, usize), v: f64| if idx == at { v } else { 0.0 };

                let bump = |x: &Array3<f64>, s: f64| {
                    let mut y = x.clone();
                    y[at] += s;
                    y
                };
                let run2 = |s| fuse(&FeatureGrid(bump(&f2d.0, s)), f3d, p).unwrap();
                column(run2(FD_STEP), run2(-FD_STEP), &|idx| on(idx, partials.d_f2d[at]));

                let run3 = |s| fuse(f2d, &FeatureGrid(bump(&f3d.0, s)), p).unwrap();
                column(run3(FD_STEP), run3(-FD_STEP), &|idx| on(idx, partials.d_f3d[at]));

                let rung = |s| {
                    let q = ModulationParams { delta_gamma: bump(&p.delta_gamma, s), ..p.clone() };
                    fuse(f2d, f3d, &q).unwrap()
                };
                column(rung(FD_STEP), rung(-FD_STEP), &|idx| on(idx, partials.d_delta_gamma[at]));

                let runb = |s| {
                    let q = ModulationParams { beta: bump(&p.beta, s), ..p.clone() };
                    fuse(f2d, f3d, &q).unwrap()
                };
                column(runb(FD_STEP), runb(-FD_STEP), &|idx| on(idx, partials.d_beta[at]));
            }
            // The gate at (i, j) drives every channel at that pixel.
            let run = |s: f64| {
                let mut gate = p.gate.clone();
                gate[(i, j, 0)] += s;
                fuse(f2d, f3d, &ModulationParams { gate, ..p.clone() }).unwrap()
            };
            column(run(FD_STEP), run(-FD_STEP), &|idx| {
                if idx.0 == i && idx.1 == j {
                    partials.d_gate[idx]
                } else {
                    0.0
                }
            });
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Array3<f64> {
        Array3::from_elem((1, 1, 1), v)
    }

    #[test]
    fn scalar_cell() {
        let p = ModulationParams { delta_gamma: scalar(0.5), beta: scalar(1.0), gate: scalar(0.5) };
        let out = fuse(&FeatureGrid(scalar(2.0)), &FeatureGrid(scalar(4.0)), &p).unwrap();
        assert_eq!(out.0[(0, 0, 0)], 4.5);
    }

    #[test]
    fn closed_and_open_gate() {
        let (f2d, f3d, mut p) = random_inputs(3, 4, 2, 7);
        p.gate.fill(0.0);
        assert_eq!(fuse(&f2d, &f3d, &p).unwrap(), f2d);
        p.gate.fill(1.0);
        p.delta_gamma.fill(0.0);
        p.beta.fill(0.0);
        assert_eq!(fuse(&f2d, &f3d, &p).unwrap(), f3d);
    }

    #[test]
    fn linear_case_partials() {
        let (f2d, f3d, _) = random_inputs(2, 2, 3, 1);
        let p = ModulationParams {
            delta_gamma: Array3::zeros((2, 2, 3)),
            beta: Array3::zeros((2, 2, 3)),
            gate: Array3::from_elem((2, 2, 1), 0.5),
        };
        let d = fuse_partials(&f2d, &f3d, &p).unwrap();
        assert!(d.d_f2d.iter().all(|&v| v == 0.5));
        assert!(d.d_beta.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn init_stays_near_2d_features() {
        let (f2d, f3d, _) = random_inputs(4, 4, 2, 3);
        let out = fuse(&f2d, &f3d, &ModulationParams::init(4, 4, 2)).unwrap();
        let g = sigmoid(PRE_GATE_INIT);
        for (o, a) in out.0.iter().zip(f2d.0.iter()) {
            assert!((o - a).abs() <= 2.0 * g + 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = FeatureGrid::zeros(2, 2, 2);
        let b = FeatureGrid::zeros(2, 3, 2);
        let p = ModulationParams::init(2, 2, 2);
        assert!(matches!(fuse(&a, &b, &p), Err(FilmError::ShapeMismatch(_))));
        let bad_gate = ModulationParams { gate: Array3::zeros((2, 2, 2)), ..p };
        assert!(matches!(fuse(&a, &a, &bad_gate), Err(FilmError::ShapeMismatch(_))));
        assert_eq!(FeatureGrid::new(array![[[f64::NAN]]]), Err(FilmError::NonFinite));
    }

    #[test]
    fn jacobian_small() {
        assert!(fuse_jacobian_check(3, 2, 2, 11) < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn affine_in_f2d(seed in 0u64..1000, t in 0.0f64..1.0) {
            let (a, f3d, p) = random_inputs(2, 3, 2, seed);
            let (b, _, _) = random_inputs(2, 3, 2, seed + 1);
            let mix = FeatureGrid(&a.0 * t + &b.0 * (1.0 - t));
            let lhs = fuse(&mix, &f3d, &p).unwrap().0;
            let rhs = fuse(&a, &f3d, &p).unwrap().0 * t + fuse(&b, &f3d, &p).unwrap().0 * (1.0 - t);
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn plain_blend_is_between_inputs(seed in 0u64..1000) {
            let (f2d, f3d, mut p) = random_inputs(3, 3, 2, seed);
            p.delta_gamma.fill(0.0);
            p.beta.fill(0.0);
            let out = fuse(&f2d, &f3d, &p).unwrap();
            for ((o, a), b) in out.0.iter().zip(f2d.0.iter()).zip(f3d.0.iter()) {
                prop_assert!(*o >= a.min(*b) - 1e-15 && *o <= a.max(*b) + 1e-15);
            }
        }
    }
}
