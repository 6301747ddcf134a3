mod common;

use common::{attack_fixture, conv_fixture, violations};
use rand::Rng;
use relaxprune::attacks::{fgsm, ifgsm, AttackSpec};
use relaxprune::model::Mode;
use relaxprune::rng::seeded;
use relaxprune::tensor::Tensor;

#[test]
fn random_attacks_stay_inside_ball_and_range() {
    let mut rng = seeded(77);
    for i in 0..1000 {
        let (m, x, y) = attack_fixture(i);
        let eps = rng.gen_range(0.0..0.3);
        let spec = if rng.gen_bool(0.5) {
            AttackSpec::fgsm(eps)
        } else {
            let alpha = rng.gen_range(0.0..0.2);
            AttackSpec::ifgsm(eps, alpha, rng.gen_range(1..6), rng.gen_bool(0.5))
        };
        let adv = spec.apply(&m, &x, &y, Mode::Eval, &mut rng).unwrap();
        let (ball, clamp) = violations(&x, &adv, eps, spec.clamp);
        assert!(ball <= 0.0, "instance {i}: outside the ε-ball by {ball:e}");
        assert!(
            clamp <= 0.0,
            "instance {i}: outside the clamp range by {clamp:e}"
        );
    }
}

#[test]
fn one_step_ifgsm_equals_fgsm_bit_for_bit() {
    for i in 0..200 {
        let (m, x, y) = attack_fixture(i);
        let eps = 0.01 + 0.002 * i as f64;
        let a = fgsm(
            &m,
            &x,
            &y,
            &AttackSpec::fgsm(eps),
            Mode::Eval,
            &mut seeded(1),
        )
        .unwrap();
        let spec = AttackSpec::ifgsm(eps, eps * (1.0 + (i % 3) as f64), 1, false);
        let b = ifgsm(&m, &x, &y, &spec, Mode::Eval, &mut seeded(2)).unwrap();
        assert_eq!(a, b, "instance {i}");
    }
}

#[test]
fn zero_radius_is_identity() {
    for i in 0..50 {
        let (m, x, y) = attack_fixture(i);
        for spec in [
            AttackSpec::fgsm(0.0),
            AttackSpec::ifgsm(0.0, 0.1, 5, true),
            AttackSpec::none(),
        ] {
            assert_eq!(
                spec.apply(&m, &x, &y, Mode::Eval, &mut seeded(i)).unwrap(),
                x
            );
        }
    }
}

#[test]
fn conv_inputs_and_custom_clamp() {
    let m = conv_fixture(3);
    let mut rng = seeded(4);
    let x = Tensor::new(
        vec![2, 1, 5, 5],
        (0..50).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    )
    .unwrap();
    let spec = AttackSpec::ifgsm(0.2, 0.05, 6, true).with_clamp(-0.5, 0.5);
    let adv = spec.apply(&m, &x, &[0, 2], Mode::Eval, &mut rng).unwrap();
    let (ball, clamp) = violations(&x, &adv, 0.2, (-0.5, 0.5));
    assert!(ball <= 0.0 && clamp <= 0.0);
    assert_ne!(adv, x);
}

#[test]
fn attacks_raise_the_loss() {
    let (m, x, y) = attack_fixture(5);
    let clean = m.loss(&x, &y, Mode::Eval, &mut seeded(0)).unwrap();
    let adv = AttackSpec::ifgsm(0.1, 0.02, 10, false)
        .apply(&m, &x, &y, Mode::Eval, &mut seeded(0))
        .unwrap();
    assert!(m.loss(&adv, &y, Mode::Eval, &mut seeded(0)).unwrap() >= clean);
}

#[test]
fn bad_specs_are_rejected() {
    let (m, x, y) = attack_fixture(0);
    for spec in [
        AttackSpec::fgsm(-0.1),
        AttackSpec::ifgsm(0.1, 0.1, 0, false),
        AttackSpec::fgsm(0.1).with_clamp(1.0, 0.0),
    ] {
        assert!(spec.apply(&m, &x, &y, Mode::Eval, &mut seeded(0)).is_err());
    }
}
