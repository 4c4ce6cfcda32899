use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{pos, sqrt};

/// `ξ = φ(B_{t₁}, B_T)` with values in `Rⁿ`, at most one monitoring time
/// besides `T`.
pub trait TerminalFunctional: Sync {
    fn components(&self) -> usize;

    fn monitor_time(&self) -> Option<f64> {
        None
    }

    /// Writes `φ(monitored, terminal)` into `out`; `monitored` is present
    /// exactly when [`monitor_time`](Self::monitor_time) is.
    fn evaluate(&self, monitored: Option<&[f64]>, terminal: &[f64], out: &mut [f64]);

    /// Lipschitz constant on the ball of the given radius in `R^dim`.
    fn lipschitz(&self, radius: f64, dim: usize) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PayoffKind {
    Constant,
    /// `Σ x_j`.
    Linear,
    /// `Σ x_j²`.
    Quadratic,
    /// `−Σ x_j²`.
    NegQuadratic,
    /// `Σ |x_j|`.
    Abs,
    /// `(Σ x_j − K)⁺`.
    Call { strike: f64 },
    /// Tent `(min(s − a, b − s))⁺` on `s = Σ x_j`.
    Butterfly { lower: f64, upper: f64 },
    /// `min(Σ x_j², cap)`.
    CappedQuadratic { cap: f64 },
    /// `Σ (x_j − B_{t₁,j})²`.
    ForwardQuadratic { monitor_time: f64 },
}

/// Catalog payoff plus a constant shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Payoff {
    kind: PayoffKind,
    shift: f64,
}

impl Payoff {
    pub fn new(kind: PayoffKind, shift: f64) -> Result<Self> {
        let finite = |v: f64| v.is_finite();
        let ok = finite(shift)
            && match kind {
                PayoffKind::Call { strike } => finite(strike),
                PayoffKind::Butterfly { lower, upper } => finite(lower) && finite(upper) && lower < upper,
                PayoffKind::CappedQuadratic { cap } => finite(cap) && cap >= 0.0,
                PayoffKind::ForwardQuadratic { monitor_time } => finite(monitor_time) && monitor_time >= 0.0,
                _ => true,
            };
        if !ok {
            return Err(Error::input("payoff parameters must be finite (butterfly needs a < b, cap ≥ 0)"));
        }
        Ok(Self { kind, shift })
    }

    pub fn of(kind: PayoffKind) -> Result<Self> {
        Self::new(kind, 0.0)
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(PayoffKind::Constant, c)
    }

    pub fn kind(&self) -> PayoffKind {
        self.kind
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Same payoff shifted by `c`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.kind, self.shift + c)
    }

    pub fn value(&self, monitored: Option<&[f64]>, x: &[f64]) -> f64 {
        let sum = || x.iter().sum::<f64>();
        let sq = || x.iter().map(|v| v * v).sum::<f64>();
        let v = match self.kind {
            PayoffKind::Constant => 0.0,
            PayoffKind::Linear => sum(),
            PayoffKind::Quadratic => sq(),
            PayoffKind::NegQuadratic => -sq(),
            PayoffKind::Abs => x.iter().map(|v| v.abs()).sum(),
            PayoffKind::Call { strike } => pos(sum() - strike),
            PayoffKind::Butterfly { lower, upper } => {
                let s = sum();
                pos((s - lower).min(upper - s))
            }
            PayoffKind::CappedQuadratic { cap } => sq().min(cap),
            PayoffKind::ForwardQuadratic { .. } => {
                let m = monitored.unwrap_or(&[]);
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let e = v - m.get(j).copied().unwrap_or(0.0);
                        e * e
                    })
                    .sum()
            }
        };
        v + self.shift
    }

    fn lipschitz_in(&self, radius: f64, d: usize) -> f64 {
        let rd = sqrt(d as f64);
        match self.kind {
            PayoffKind::Constant => 0.0,
            PayoffKind::Linear | PayoffKind::Abs | PayoffKind::Call { .. } | PayoffKind::Butterfly { .. } => rd,
            PayoffKind::Quadratic | PayoffKind::NegQuadratic => 2.0 * radius,
            PayoffKind::CappedQuadratic { cap } => 2.0 * radius.min(sqrt(cap)),
            // gradient in (x, B_{t₁}) is 2(x − m, m − x)
            PayoffKind::ForwardQuadratic { .. } => 4.0 * sqrt(2.0) * radius,
        }
    }
}

impl TerminalFunctional for Payoff {
    fn components(&self) -> usize {
        1
    }

    fn monitor_time(&self) -> Option<f64> {
        match self.kind {
            PayoffKind::ForwardQuadratic { monitor_time } => Some(monitor_time),
            _ => None,
        }
    }

    fn evaluate(&self, monitored: Option<&[f64]>, terminal: &[f64], out: &mut [f64]) {
        out[0] = self.value(monitored, terminal);
    }

    fn lipschitz(&self, radius: f64, dim: usize) -> f64 {
        self.lipschitz_in(radius, dim)
    }
}

/// Component-wise vector of catalog payoffs.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffVector {
    parts: Vec<Payoff>,
    monitor: Option<f64>,
}

impl PayoffVector {
    pub fn new(parts: Vec<Payoff>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::input("payoff vector needs at least one component"));
        }
        if parts.len() > super::MAX_COMPONENTS {
            return Err(Error::Capacity {
                what: "payoff components",
                value: parts.len(),
                cap: super::MAX_COMPONENTS,
            });
        }
        let mut monitor = None;
        for p in &parts {
            if let Some(t) = p.monitor_time() {
                if monitor.is_some_and(|m| m != t) {
                    return Err(Error::input("components must share one monitoring time"));
                }
                monitor = Some(t);
            }
        }
        Ok(Self { parts, monitor })
    }

    pub fn parts(&self) -> &[Payoff] {
        &self.parts
    }

    /// Same vector with every component shifted by `c`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.parts.iter().map(|p| p.shifted(c)).collect::<Result<_>>()?)
    }
}

impl TerminalFunctional for PayoffVector {
    fn components(&self) -> usize {
        self.parts.len()
    }

    fn monitor_time(&self) -> Option<f64> {
        self.monitor
    }

    fn evaluate(&self, monitored: Option<&[f64]>, terminal: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.parts) {
            *o = p.value(monitored, terminal);
        }
    }

    fn lipschitz(&self, radius: f64, dim: usize) -> f64 {
        sqrt(
            self.parts
                .iter()
                .map(|p| {
                    let l = p.lipschitz(radius, dim);
                    l * l
                })
                .sum(),
        )
    }
}

/// Terminal functional given by a closure of the terminal state.
pub struct FnTerminal<F> {
    components: usize,
    lipschitz: f64,
    f: F,
}

impl<F> FnTerminal<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(components: usize, lipschitz: f64, f: F) -> Self {
        Self {
            components,
            lipschitz,
            f,
        }
    }
}

impl<F> TerminalFunctional for FnTerminal<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn components(&self) -> usize {
        self.components
    }

    fn evaluate(&self, _monitored: Option<&[f64]>, terminal: &[f64], out: &mut [f64]) {
        (self.f)(terminal, out)
    }

    fn lipschitz(&self, _radius: f64, _dim: usize) -> f64 {
        self.lipschitz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn catalog_values() {
        let x = [1.0, -2.0];
        let v = |k| Payoff::of(k).unwrap().value(None, &x);
        assert_eq!(v(PayoffKind::Constant), 0.0);
        assert_eq!(v(PayoffKind::Linear), -1.0);
        assert_eq!(v(PayoffKind::Quadratic), 5.0);
        assert_eq!(v(PayoffKind::NegQuadratic), -5.0);
        assert_eq!(v(PayoffKind::Abs), 3.0);
        assert_eq!(v(PayoffKind::Call { strike: -3.0 }), 2.0);
        assert_eq!(v(PayoffKind::CappedQuadratic { cap: 4.0 }), 4.0);
        let fly = Payoff::of(PayoffKind::Butterfly { lower: -1.0, upper: 1.0 }).unwrap();
        assert_eq!(fly.value(None, &[0.0]), 1.0);
        assert_eq!(fly.value(None, &[0.5]), 0.5);
        assert_eq!(fly.value(None, &[2.0]), 0.0);
        let fwd = Payoff::of(PayoffKind::ForwardQuadratic { monitor_time: 0.5 }).unwrap();
        assert_eq!(fwd.value(Some(&[1.0]), &[3.0]), 4.0);
        assert_eq!(Payoff::constant(2.5).unwrap().value(None, &x), 2.5);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Payoff::of(PayoffKind::Butterfly { lower: 1.0, upper: 1.0 }).is_err());
        assert!(Payoff::of(PayoffKind::Call { strike: f64::NAN }).is_err());
        assert!(Payoff::constant(f64::INFINITY).is_err());
        let a = Payoff::of(PayoffKind::ForwardQuadratic { monitor_time: 0.5 }).unwrap();
        let b = Payoff::of(PayoffKind::ForwardQuadratic { monitor_time: 0.25 }).unwrap();
        assert!(PayoffVector::new(vec![a, b]).is_err());
        assert!(PayoffVector::new(vec![]).is_err());
    }

    #[test]
    fn lipschitz_bounds_hold_on_samples() {
        let r = 3.0;
        let kinds = [
            PayoffKind::Linear,
            PayoffKind::Quadratic,
            PayoffKind::Abs,
            PayoffKind::Call { strike: 0.3 },
            PayoffKind::Butterfly { lower: -1.0, upper: 2.0 },
            PayoffKind::CappedQuadratic { cap: 2.0 },
        ];
        let pts: Vec<[f64; 2]> = (0..15)
            .flat_map(|i| (0..15).map(move |j| [-2.0 + 0.29 * i as f64, -2.1 + 0.3 * j as f64]))
            .collect();
        for k in kinds {
            let p = Payoff::of(k).unwrap();
            let l = p.lipschitz(r, 2);
            for a in &pts {
                for b in &pts {
                    let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                    let diff = (p.value(None, a) - p.value(None, b)).abs();
                    assert!(diff <= l * dist + 1e-12, "{k:?}");
                }
            }
        }
    }
}
