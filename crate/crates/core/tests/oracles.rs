//! Self-checks of the reference solutions themselves.

mod common;

use common::*;
use levy_burgers::spectral::apply_semigroup;
use levy_burgers::SpectralField;

#[test]
fn cole_hopf_reproduces_initial_data() {
    let phi = SpectralField::from_trig(16, &[(1, 0.0, 0.4), (3, 0.2, -0.1)]);
    let back = cole_hopf(&phi, 0.0, 16);
    assert!(back.sub(&phi).norm(0.0) < 1e-12);
}

#[test]
fn cole_hopf_small_data_is_nearly_linear() {
    let phi = SpectralField::from_trig(8, &[(2, 1e-6, 0.0)]);
    let u = cole_hopf(&phi, 0.3, 8);
    let lin = apply_semigroup(&phi, 0.3).unwrap();
    assert!(u.sub(&lin).norm(0.0) < 1e-11);
}

#[test]
fn mellin_identity_at_zero_order() {
    for alpha in [1.2, 1.5, 1.8] {
        assert!((stable_negative_moment(alpha, 0.0) - 1.0).abs() < 1e-14);
    }
    // α = 2 degenerates to S_1 = 1 with Laplace exponent η: moment 1.
    assert!((stable_negative_moment(2.0, 0.7) - 1.0).abs() < 1e-12);
}
