//! Error norms, convergence fits and reference sampling.

use crate::error::{Error, Result};
use crate::oracles::{FdmGrid, FdmSolution};
use crate::Vec3;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("error norms need at least one value"));
    }
    Ok(())
}

/// `√(Σ (sim − ref)² / N)`.
pub fn rmse(sim: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(sim, reference)?;
    let sum: f64 = sim
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / sim.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct L2Report {
    /// Root-mean-square of the absolute differences over all points.
    pub l2: f64,
    /// `(sim − ref) / ref` per point; `None` where `|ref| ≤ 1e-12`.
    pub relative: Vec<Option<f64>>,
    /// Points left out of the relative field.
    pub excluded: usize,
}

pub fn l2_error(sim: &[f64], reference: &[f64]) -> Result<L2Report> {
    let l2 = rmse(sim, reference)?;
    let relative: Vec<Option<f64>> = sim
        .iter()
        .zip(reference)
        .map(|(&s, &r)| (r.abs() > 1e-12).then(|| (s - r) / r))
        .collect();
    let excluded = relative.iter().filter(|v| v.is_none()).count();
    Ok(L2Report {
        l2,
        relative,
        excluded,
    })
}

/// Least-squares slope of `log(error)` against `log(h)`; an error that
/// scales like `h²` gives 2.
pub fn fit_convergence_rate(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::invalid(format!(
            "a convergence fit needs at least 3 points, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|&(h, e)| !(h > 0.0) || !(e > 0.0)) {
        return Err(Error::invalid("mesh sizes and errors must be positive"));
    }
    let mut hs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    hs.sort_by(f64::total_cmp);
    if hs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("mesh sizes must be distinct"));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Map from simulation coordinates into the reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    Identity,
    /// Undo a rotation by `angle` radians about `center`.
    InverseRotation {
        center: [f64; 2],
        angle: f64,
    },
}

impl Frame {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        match *self {
            Frame::Identity => *x,
            Frame::InverseRotation { center, angle } => {
                let (s, c) = (-angle).sin_cos();
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                [
                    center[0] + c * dx - s * dy,
                    center[1] + s * dx + c * dy,
                    x[2],
                ]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    /// Reference value per particle; `None` outside the reference grid.
    pub values: Vec<Option<f64>>,
    pub excluded: usize,
}

impl Sampled {
    /// Simulated and reference values at the covered particles.
    pub fn pairs(&self, sim: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.values
            .iter()
            .zip(sim)
            .filter_map(|(r, s)| r.map(|r| (*s, r)))
            .unzip()
    }
}

/// Reference snapshot `k` evaluated at every particle.
///
/// Positions first go through `frame`, then are measured from `anchor`:
/// radial references see `‖x − anchor‖`, planar ones `x − anchor`.
pub fn sample_reference_at_particles(
    fdm: &FdmSolution,
    k: usize,
    positions: &[Vec3],
    anchor: Vec3,
    frame: Frame,
) -> Sampled {
    let values: Vec<Option<f64>> = positions
        .iter()
        .map(|x| {
            let y = frame.apply(x);
            let d = [y[0] - anchor[0], y[1] - anchor[1], y[2] - anchor[2]];
            match fdm.grid {
                FdmGrid::Radial { .. } => {
                    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    fdm.sample(k, &[r])
                }
                FdmGrid::Planar { .. } => fdm.sample(k, &d[..2]),
            }
        })
        .collect();
    let excluded = values.iter().filter(|v| v.is_none()).count();
    if excluded * 100 > positions.len() {
        log::warn!(
            "{excluded} of {} particles fall outside the reference grid",
            positions.len()
        );
    }
    Sampled { values, excluded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryKind;
    use crate::oracles::{fdm_ring, fdm_square, FdmConfig};
    use crate::solver::MaterialParams;
    use proptest::prelude::*;

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn l2_guard() {
        let r = l2_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.l2, 0.0);
        let r = l2_error(&[0.5, 3.0], &[0.0, 2.0]).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.relative, vec![None, Some(0.5)]);
        assert!((r.l2 - (0.5f64.powi(2) / 2.0 + 0.5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fit_synthetic() {
        let hs = [0.5, 0.2, 0.1, 0.05];
        let quad: Vec<_> = hs.iter().map(|&h| (h, 3.0 * h * h)).collect();
        assert!((fit_convergence_rate(&quad).unwrap() - 2.0).abs() < 1e-10);
        let flat: Vec<_> = hs.iter().map(|&h| (h, 0.7)).collect();
        assert!(fit_convergence_rate(&flat).unwrap().abs() < 1e-12);
        assert!(fit_convergence_rate(&quad[..2]).is_err());
        assert!(fit_convergence_rate(&[(0.1, 1.0), (0.1, 2.0), (0.2, 3.0)]).is_err());
    }

    fn square() -> FdmSolution {
        let cfg = FdmConfig {
            material: MaterialParams::new(1.0, 1.0, 1.0).unwrap(),
            initial: 0.0,
            bc: BoundaryKind::Convective {
                gamma: 1.0,
                ambient: 1.0,
            },
            dt: 0.02,
            times: vec![1.0],
        };
        fdm_square(5.0, 0.5, &cfg).unwrap()
    }

    #[test]
    fn sampling_on_nodes_and_uniform_fields() {
        let s = square();
        let got =
            sample_reference_at_particles(&s, 0, &[[0.5, 1.0, 0.0]], [0.0; 3], Frame::Identity);
        assert_eq!(got.values[0], Some(s.fields[0][1 + 11 * 2]));

        let cfg = FdmConfig {
            material: MaterialParams::new(1.0, 1.0, 1.0).unwrap(),
            initial: 4.0,
            bc: BoundaryKind::ConstantFlux { q_s: 0.0 },
            dt: 0.004,
            times: vec![0.5],
        };
        let ring = fdm_ring(1.0, 2.0, 0.1, &cfg).unwrap();
        let pts = [[1.2, 0.3, 0.0], [0.0, -1.9, 0.0], [0.1, 0.1, 0.0]];
        let got = sample_reference_at_particles(&ring, 0, &pts, [0.0; 3], Frame::Identity);
        assert!((got.values[0].unwrap() - 4.0).abs() < 1e-12);
        assert!((got.values[1].unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(got.values[2], None);
        assert_eq!(got.excluded, 1);
        let (a, b) = got.pairs(&[1.0, 2.0, 3.0]);
        assert_eq!(a, vec![1.0, 2.0]);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn rotated_frame_reproduces_unrotated_sampling() {
        let s = square();
        let center = [2.5, 2.5];
        let angle: f64 = 0.7;
        let pts: Vec<Vec3> = (0..50)
            .map(|i| [0.3 + 0.09 * i as f64, 4.6 - 0.08 * i as f64, 0.0])
            .collect();
        let (sn, cs) = angle.sin_cos();
        let rotated: Vec<Vec3> = pts
            .iter()
            .map(|x| {
                let (dx, dy) = (x[0] - 2.5, x[1] - 2.5);
                [2.5 + cs * dx - sn * dy, 2.5 + sn * dx + cs * dy, 0.0]
            })
            .collect();
        let plain = sample_reference_at_particles(&s, 0, &pts, [0.0; 3], Frame::Identity);
        let back = sample_reference_at_particles(
            &s,
            0,
            &rotated,
            [0.0; 3],
            Frame::InverseRotation { center, angle },
        );
        for (a, b) in plain.values.iter().zip(&back.values) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rmse_symmetric_and_permutation_invariant(
            v in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let (a, b): (Vec<f64>, Vec<f64>) = v.iter().cloned().unzip();
            prop_assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
            let mut idx: Vec<usize> = (0..a.len()).collect();
            idx.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
            let pa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let pb: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
            let x = rmse(&a, &b).unwrap();
            prop_assert!((rmse(&pa, &pb).unwrap() - x).abs() <= 1e-12 * x.max(1.0));
        }

        #[test]
        fn fit_ignores_error_scale(
            errs in proptest::collection::vec(1e-6f64..1.0, 4),
            scale in 1e-3f64..1e3,
        ) {
            let hs = [0.5, 0.2, 0.1, 0.05];
            let a: Vec<_> = hs.iter().zip(&errs).map(|(&h, &e)| (h, e)).collect();
            let b: Vec<_> = hs.iter().zip(&errs).map(|(&h, &e)| (h, e * scale)).collect();
            let (sa, sb) = (fit_convergence_rate(&a).unwrap(), fit_convergence_rate(&b).unwrap());
            prop_assert!((sa - sb).abs() < 1e-9);
        }
    }
}
