use mosaicmem::flow_ode::{gaussian_init, integrate, integrate_batch, Method};
use proptest::prelude::*;

fn growth(x: &[f64], _l: f64, _c: &()) -> Vec<f64> {
    x.to_vec()
}

fn error(steps: usize, method: Method) -> f64 {
    let x0 = [1.0, -2.0, 0.5];
    let x1 = integrate(&growth, &x0, &(), steps, method).unwrap();
    x1.iter()
        .zip(&x0)
        .map(|(a, b)| (a - b * std::f64::consts::E).abs())
        .fold(0.0, f64::max)
}

#[test]
fn euler_is_first_order_and_heun_second() {
    let euler = (error(20, Method::Euler) / error(40, Method::Euler)).log2();
    let heun = (error(20, Method::Heun) / error(40, Method::Heun)).log2();
    assert!((euler - 1.0).abs() < 0.1, "euler order {euler}");
    assert!((heun - 2.0).abs() < 0.1, "heun order {heun}");
}

#[test]
fn heun_is_exact_for_fields_linear_in_lambda() {
    // dx/dλ = 2λ + 1 integrates to x0 + 2 exactly under the trapezoid rule
    let f = |x: &[f64], l: f64, _c: &()| vec![2.0 * l + 1.0; x.len()];
    let x1 = integrate(&f, &[0.25], &(), 10, Method::Heun).unwrap();
    assert!((x1[0] - 2.25).abs() < 1e-14);
}

#[test]
fn f32_state_integrates() {
    let f = |x: &[f32], _l: f32, _c: &()| x.iter().map(|v| -v).collect();
    let x1 = integrate(&f, &[1.0f32], &(), 50, Method::Heun).unwrap();
    assert!((x1[0] - (-1.0f32).exp()).abs() < 1e-4);
}

proptest! {
    #[test]
    fn batch_members_are_independent(seed in 0u64..500, n in 1usize..6) {
        let batch: Vec<Vec<f64>> = (0..n).map(|i| gaussian_init(4, seed + i as u64)).collect();
        let k = 0.3;
        let f = move |x: &[f64], l: f64, c: &f64| x.iter().map(|v| -c * v + l).collect::<Vec<_>>();
        let all = integrate_batch(&f, &batch, &k, 16, Method::Heun).unwrap();
        for (x0, x1) in batch.iter().zip(&all) {
            prop_assert_eq!(x1, &integrate(&f, x0, &k, 16, Method::Heun).unwrap());
        }
        // reversing the batch only reverses the outputs
        let rev: Vec<Vec<f64>> = batch.iter().rev().cloned().collect();
        let out = integrate_batch(&f, &rev, &k, 16, Method::Heun).unwrap();
        prop_assert!(out.iter().rev().eq(all.iter()));
    }
}
