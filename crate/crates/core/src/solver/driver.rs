use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::rng::path_rng;

/// Generator `(t, y, z, η) ↦ out`.
///
/// `y` has `n` entries, `z` is the `d×n` matrix in row-major order
/// (`z[j * n + i]`), `η` holds the block diagonals (`η[i * d + j]`). The
/// output has `n` entries for `f` and `n·d` entries (same order as `η`)
/// for `g`.
pub trait Driver: Sync {
    fn eval(&self, t: f64, y: &[f64], z: &[f64], eta: &[f64], out: &mut [f64]);

    /// Constant `C` with `|Δout| ≤ C(|Δy| + |Δz| + |Δη|)` for an output of
    /// `width` entries.
    fn lipschitz(&self, n: usize, d: usize, width: usize) -> f64;
}

/// Built-in drivers. Output entry `o` belongs to component
/// `i = o / (width / n)`, so the same entry serves as `f` or as `g`.
#[derive(Clone, Debug, PartialEq)]
pub enum DriverSpec {
    Zero,
    Constant { c: f64 },
    /// `r yᵢ`.
    LinearInY { r: f64 },
    /// `Σ_j a_j Z_{j,i}`.
    LinearInZ { a: Vec<f64> },
    /// Constant `γ`, intended for `g`.
    QvConstant { gamma: f64 },
    /// `clamp(c0 + cy yᵢ + cz Σ_j Z_{j,i} + ceta Σ_j ηⁱ_jj, lo, hi)`.
    ClampedAffine {
        c0: f64,
        cy: f64,
        cz: f64,
        ceta: f64,
        lo: f64,
        hi: f64,
    },
}

impl DriverSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            DriverSpec::Zero => true,
            DriverSpec::Constant { c } => c.is_finite(),
            DriverSpec::LinearInY { r } => r.is_finite(),
            DriverSpec::LinearInZ { a } => !a.is_empty() && finite(a),
            DriverSpec::QvConstant { gamma } => gamma.is_finite(),
            DriverSpec::ClampedAffine {
                c0,
                cy,
                cz,
                ceta,
                lo,
                hi,
            } => finite(&[*c0, *cy, *cz, *ceta]) && !lo.is_nan() && !hi.is_nan() && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input("driver parameters must be finite (and lo ≤ hi)"))
        }
    }
}

impl Driver for DriverSpec {
    fn eval(&self, _t: f64, y: &[f64], z: &[f64], eta: &[f64], out: &mut [f64]) {
        let n = y.len().max(1);
        let rep = (out.len() / n).max(1);
        let d = if n == 0 { 0 } else { z.len() / n };
        for (o, v) in out.iter_mut().enumerate() {
            let i = o / rep;
            *v = match self {
                DriverSpec::Zero => 0.0,
                DriverSpec::Constant { c } => *c,
                DriverSpec::QvConstant { gamma } => *gamma,
                DriverSpec::LinearInY { r } => r * y[i],
                DriverSpec::LinearInZ { a } => (0..d).map(|j| a.get(j).copied().unwrap_or(0.0) * z[j * n + i]).sum(),
                DriverSpec::ClampedAffine {
                    c0,
                    cy,
                    cz,
                    ceta,
                    lo,
                    hi,
                } => {
                    let zs: f64 = (0..d).map(|j| z[j * n + i]).sum();
                    let es: f64 = eta[i * d..(i + 1) * d].iter().sum();
                    (c0 + cy * y[i] + cz * zs + ceta * es).clamp(*lo, *hi)
                }
            };
        }
    }

    fn lipschitz(&self, n: usize, d: usize, width: usize) -> f64 {
        let rep = (width / n.max(1)).max(1) as f64;
        let sd = sqrt(d as f64);
        match self {
            DriverSpec::Zero | DriverSpec::Constant { .. } | DriverSpec::QvConstant { .. } => 0.0,
            DriverSpec::LinearInY { r } => r.abs() * sqrt(rep),
            DriverSpec::LinearInZ { a } => sqrt(a.iter().take(d).map(|v| v * v).sum::<f64>() * rep),
            DriverSpec::ClampedAffine { cy, cz, ceta, .. } => {
                let c = cy.abs().max(cz.abs() * sd).max(ceta.abs() * sd);
                c * sqrt(3.0 * rep)
            }
        }
    }
}

/// Driver from a closure with a declared Lipschitz constant.
pub struct FnDriver<F> {
    f: F,
    lipschitz: f64,
}

impl<F> FnDriver<F>
where
    F: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Sync,
{
    pub fn new(lipschitz: f64, f: F) -> Self {
        Self { f, lipschitz }
    }
}

impl<F> Driver for FnDriver<F>
where
    F: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Sync,
{
    fn eval(&self, t: f64, y: &[f64], z: &[f64], eta: &[f64], out: &mut [f64]) {
        (self.f)(t, y, z, eta, out)
    }

    fn lipschitz(&self, _n: usize, _d: usize, _width: usize) -> f64 {
        self.lipschitz
    }
}

const PROBES: u64 = 256;
const PROBE_RANGE: f64 = 10.0;

/// Samples random pairs of arguments and checks the Lipschitz bound.
pub(crate) fn spot_check(
    driver: &dyn Driver,
    c: f64,
    n: usize,
    d: usize,
    width: usize,
    horizon: f64,
) -> Result<()> {
    let mut rng = path_rng(0x5eed_1195, width as u64);
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| rng.random_range(-PROBE_RANGE..PROBE_RANGE))
            .collect()
    };
    let mut o1 = vec![0.0; width];
    let mut o2 = vec![0.0; width];
    let dist = |a: &[f64], b: &[f64]| sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    for p in 0..PROBES {
        let t = horizon * p as f64 / PROBES as f64;
        let (y1, z1, e1) = (draw(n), draw(n * d), draw(n * d));
        let (y2, z2, e2) = if p % 2 == 0 {
            (draw(n), draw(n * d), draw(n * d))
        } else {
            // small perturbations probe local slopes
            let s = 1e-3;
            (
                y1.iter().map(|v| v + s * libm::sin(p as f64)).collect(),
                z1.iter().map(|v| v - s).collect(),
                e1.iter().map(|v| v + 0.5 * s).collect(),
            )
        };
        driver.eval(t, &y1, &z1, &e1, &mut o1);
        driver.eval(t, &y2, &z2, &e2, &mut o2);
        if o1.iter().chain(&o2).any(|v| !v.is_finite()) {
            return Err(Error::Driver {
                t,
                y: y1,
                z: z1,
                eta: e1,
            });
        }
        let lhs = dist(&o1, &o2);
        let rhs = c * (dist(&y1, &y2) + dist(&z1, &z2) + dist(&e1, &e2));
        if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::input(alloc::format!(
                "driver violates its Lipschitz constant {c}: |Δout| = {lhs} at t = {t}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_values() {
        let mut out = [0.0; 2];
        DriverSpec::LinearInY { r: -0.5 }.eval(0.0, &[2.0, 4.0], &[1.0, 1.0], &[0.0, 0.0], &mut out);
        assert_eq!(out, [-1.0, -2.0]);
        // g of one component in d = 2 replicates across the diagonal
        DriverSpec::LinearInY { r: 2.0 }.eval(0.0, &[3.0], &[0.0, 0.0], &[0.0, 0.0], &mut out);
        assert_eq!(out, [6.0, 6.0]);
        let mut one = [0.0];
        DriverSpec::LinearInZ { a: vec![1.0, -1.0] }.eval(0.0, &[0.0], &[3.0, 5.0], &[0.0, 0.0], &mut one);
        assert_eq!(one, [-2.0]);
        let clamp = DriverSpec::ClampedAffine {
            c0: 0.0,
            cy: 1.0,
            cz: 0.0,
            ceta: 0.0,
            lo: -1.0,
            hi: 1.0,
        };
        clamp.eval(0.0, &[5.0], &[0.0], &[0.0], &mut one);
        assert_eq!(one, [1.0]);
    }

    #[test]
    fn declared_constants_survive_spot_checks() {
        let specs = [
            DriverSpec::Zero,
            DriverSpec::Constant { c: 0.1 },
            DriverSpec::LinearInY { r: -0.5 },
            DriverSpec::LinearInZ { a: vec![0.3, -0.2] },
            DriverSpec::QvConstant { gamma: 0.2 },
            DriverSpec::ClampedAffine {
                c0: 0.1,
                cy: 0.4,
                cz: -0.3,
                ceta: 0.2,
                lo: -2.0,
                hi: 2.0,
            },
        ];
        for s in &specs {
            for (n, d) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
                for width in [n, n * d] {
                    let c = s.lipschitz(n, d, width);
                    spot_check(s, c, n, d, width, 1.0).unwrap();
                }
            }
        }
    }

    #[test]
    fn understated_constant_is_caught() {
        let s = DriverSpec::LinearInY { r: 2.0 };
        assert!(spot_check(&s, 1.0, 1, 1, 1, 1.0).is_err());
        let nan = FnDriver::new(0.0, |_t: f64, _y: &[f64], _z: &[f64], _e: &[f64], o: &mut [f64]| o.fill(f64::NAN));
        assert!(matches!(spot_check(&nan, 0.0, 1, 1, 1, 1.0), Err(Error::Driver { .. })));
    }
}
