use gcalc_core::scenario::{
    build_lattice, lower_expectation, sublinear_expectation, Lattice, Payoff, PayoffKind, SpaceGrid, TimeGrid,
};
use gcalc_core::gtensor::VolatilityBox;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn lattice(d: usize, lo: f64, hi: f64, steps: usize, points: usize) -> Lattice {
    let vol = VolatilityBox::uniform(d, lo, hi, 5).unwrap();
    let space = SpaceGrid::for_box(points, 6.0, &vol, 1.0).unwrap();
    build_lattice(TimeGrid::new(1.0, steps).unwrap(), space, vol).unwrap()
}

fn upper(lat: &Lattice, kind: PayoffKind) -> f64 {
    sublinear_expectation(lat, &Payoff::of(kind).unwrap()).unwrap()[0]
}

fn lower(lat: &Lattice, kind: PayoffKind) -> f64 {
    lower_expectation(lat, &Payoff::of(kind).unwrap()).unwrap()[0]
}

#[test]
fn convex_payoffs_take_the_extreme_variances() {
    let lat = lattice(1, 1.0, 4.0, 200, 401);
    // E|B_T| = σ √(2T/π) at either constant volatility
    assert!((upper(&lat, PayoffKind::Abs) - 2.0 * SQRT_2_OVER_PI).abs() < 0.01);
    assert!((lower(&lat, PayoffKind::Abs) - SQRT_2_OVER_PI).abs() < 0.01);
    // at-the-money call: σ √(T/2π)
    let call = upper(&lat, PayoffKind::Call { strike: 0.0 });
    assert!((call - SQRT_2_OVER_PI).abs() < 0.01, "{call}");
}

#[test]
fn linear_payoff_has_no_mean_uncertainty() {
    let lat = lattice(1, 1.0, 4.0, 100, 241);
    let (u, l) = (upper(&lat, PayoffKind::Linear), lower(&lat, PayoffKind::Linear));
    // clamped edges leak into the centre
    assert!(u.abs() < 1e-8 && l.abs() < 1e-8, "{u} {l}");
}

#[test]
fn quadratic_adds_across_independent_axes() {
    let lat = lattice(2, 1.0, 2.0, 40, 161);
    let e = upper(&lat, PayoffKind::Quadratic);
    assert!((e - 4.0).abs() < 0.02, "{e}");
    let l = lower(&lat, PayoffKind::Quadratic);
    assert!((l - 2.0).abs() < 0.02, "{l}");
}

#[test]
fn forward_quadratic_sees_only_the_second_half() {
    let lat = lattice(1, 1.0, 4.0, 100, 241);
    let e = upper(&lat, PayoffKind::ForwardQuadratic { monitor_time: 0.5 });
    assert!((e - 2.0).abs() < 0.05, "{e}");
}
