use hypochain_core::limit::LimitModel;
use hypochain_core::mc::{simulate, SimConfig};
use hypochain_core::model::{bs_asian, check_h1};
use hypochain_core::pricing::{
    atm_asymptotic_price, beta_samples, limit_variance, limit_variance_with, price_from_batch, to_chained_system,
    to_chained_system_with, weight_completion, Basket, BasketSpec, LocalVol, OptionKind,
};
use hypochain_core::stats::Estimate;
use hypochain_core::{CoefficientField, Error};
use nalgebra::DMatrix;

fn spec(s0: Vec<f64>, vol: Vec<f64>, rho: DMatrix<f64>, w: Vec<f64>) -> BasketSpec {
    let d = s0.len();
    BasketSpec {
        s0,
        r: vec![0.0; d],
        rho,
        w,
        vol: LocalVol::Constant(vol),
        maturity: 1.0,
    }
}

fn single() -> Basket {
    Basket::new(spec(vec![100.0], vec![0.2], DMatrix::identity(1, 1), vec![1.0])).unwrap()
}

fn pair(rho12: f64) -> Basket {
    Basket::new(spec(
        vec![100.0, 60.0],
        vec![0.2, 0.3],
        DMatrix::from_row_slice(2, 2, &[1.0, rho12, rho12, 1.0]),
        vec![0.7, 0.3],
    ))
    .unwrap()
}

#[test]
fn single_asset_basket_is_bs_asian() {
    let mut s = single().spec().clone();
    s.r = vec![0.03];
    let mapped = to_chained_system(&Basket::new(s).unwrap()).unwrap();
    let bs = bs_asian(100.0, 0.03, 0.2);
    for x in [[100.0, 0.0], [80.0, 3.0], [130.0, -1.0]] {
        for (a, b) in mapped.drift_vec(0.0, &x).iter().zip(bs.drift_vec(0.0, &x)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((mapped.sigma(0.0, &x) - bs.sigma(0.0, &x)).norm() < 1e-12);
    }
    assert_eq!(mapped.xi(), bs.xi());
}

#[test]
fn ito_drift_is_rate_times_price() {
    let mut s = pair(0.4).spec().clone();
    s.r = vec![0.02, -0.01];
    let basket = Basket::new(s.clone()).unwrap();
    let sys = to_chained_system(&basket).unwrap();
    for y in [[100.0, 60.0, 0.0, 0.0], [90.0, 75.0, 1.0, 2.0]] {
        let ito = sys.ito_drift(0.0, &y).unwrap();
        for i in 0..2 {
            assert!((ito[i] - s.r[i] * y[i]).abs() < 1e-10);
        }
    }
    // Same check with a local-volatility field and finite-difference Jacobians.
    let vol = CoefficientField::vector(2, |_, s, out| {
        out[0] = 0.2 + 0.001 * s[0];
        out[1] = 0.3 / (1.0 + 0.01 * s[1]);
    });
    s.vol = LocalVol::Field(vol);
    let sys = to_chained_system(&Basket::new(s.clone()).unwrap()).unwrap();
    let y = [95.0, 62.0, 0.0, 0.0];
    let ito = sys.ito_drift(0.0, &y).unwrap();
    for i in 0..2 {
        assert!((ito[i] - s.r[i] * y[i]).abs() < 1e-6 * y[i]);
    }
}

#[test]
fn h1_on_two_asset_basket() {
    let basket = pair(0.3);
    let sys = to_chained_system(&basket).unwrap();
    let expect = (weight_completion(&basket.spec().w) * basket.sigma0())
        .svd(false, false)
        .singular_values
        .min();
    let got = check_h1(&sys).unwrap().lambda;
    assert!(got > 0.0 && (got - expect).abs() < 1e-8 * expect);
}

#[test]
fn asymptotic_price_properties() {
    let p = atm_asymptotic_price(&single(), 0.01).unwrap();
    assert!((p - 0.46066).abs() < 1e-5);
    let base = pair(0.2);
    let mut doubled = base.spec().clone();
    doubled.w = doubled.w.iter().map(|w| 2.0 * w).collect();
    let doubled = Basket::new(doubled).unwrap();
    let (a, b) = (atm_asymptotic_price(&base, 0.1).unwrap(), atm_asymptotic_price(&doubled, 0.1).unwrap());
    assert!((b - 2.0 * a).abs() < 1e-12 * b);
}

#[test]
fn spread_of_comoving_assets_vanishes() {
    let mut prices = Vec::new();
    for rho in [0.9, 0.99, 0.9999] {
        let b = Basket::new(spec(
            vec![100.0, 100.0],
            vec![0.2, 0.2],
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            vec![1.0, -1.0],
        ))
        .unwrap();
        prices.push(atm_asymptotic_price(&b, 0.1).unwrap());
    }
    assert!(prices.windows(2).all(|w| w[1] < w[0]));
    assert!(prices[2] < 0.05 * prices[0]);
    let singular = spec(vec![1.0, 1.0], vec![0.2, 0.2], DMatrix::from_element(2, 2, 1.0), vec![1.0, -1.0]);
    assert!(matches!(Basket::new(singular), Err(Error::InvalidCorrelation(_))));
}

#[test]
fn limit_variance_routes_agree() {
    let single = limit_variance(&single()).unwrap();
    assert!((single.variance - 400.0 / 3.0).abs() < 1e-10);
    for rho in [-0.5, 0.0, 0.7] {
        let lv = limit_variance(&pair(rho)).unwrap();
        assert!(lv.max_abs_difference() < 1e-10, "{}", lv.max_abs_difference());
        assert!((lv.generic[(2, 2)] - lv.variance).abs() < 1e-10 * lv.variance);
    }
    let indep = limit_variance(&pair(0.0)).unwrap().variance;
    let parts = (0.7f64 * 100.0 * 0.2).powi(2) / 3.0 + (0.3f64 * 60.0 * 0.3).powi(2) / 3.0;
    assert!((indep - parts).abs() < 1e-10);
}

#[test]
fn limit_variance_ignores_the_completion() {
    let basket = pair(0.4);
    let other = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 2.0, -1.0]);
    let a = limit_variance(&basket).unwrap();
    let b = limit_variance_with(&basket, other.clone()).unwrap();
    assert!((a.variance - b.variance).abs() < 1e-12);
    assert!((a.generic[(2, 2)] - b.generic[(2, 2)]).abs() < 1e-10);
    assert!(b.max_abs_difference() < 1e-10);
    let sys = to_chained_system_with(&basket, other).unwrap();
    assert!(LimitModel::from_system(&sys).is_ok());
}

#[test]
fn mc_prices_and_parity() {
    let basket = single();
    let sys = to_chained_system(&basket).unwrap();
    let k = basket.atm_strike();
    let batch = simulate(&sys, SimConfig::new(0.05, 64, 100_000, 12)).unwrap();
    let call = price_from_batch(&batch, k, OptionKind::Call, None).unwrap();
    let put = price_from_batch(&batch, k, OptionKind::Put, None).unwrap();
    let asym = atm_asymptotic_price(&basket, 0.05).unwrap();
    assert!((call.value / asym - 1.0).abs() < 0.03, "{} vs {asym}", call.value);
    let avg = Estimate::from_terms(batch.terminal().chunks_exact(2).map(|r| r[1] / 0.05));
    assert!(((call.value - put.value) - (avg.value - k)).abs() < 1e-9);
    assert!(avg.z_score(k) < 4.0);
    let deep = price_from_batch(&batch, 0.0, OptionKind::Call, None).unwrap();
    assert!((deep.value - avg.value).abs() < 1e-9);
    let discounted = price_from_batch(&batch, k, OptionKind::Call, Some(0.05)).unwrap();
    assert!(discounted.value < call.value);
}

#[test]
fn beta_variance_approaches_limit() {
    let basket = pair(0.3);
    let sys = to_chained_system(&basket).unwrap();
    let batch = simulate(&sys, SimConfig::new(0.005, 32, 100_000, 13)).unwrap();
    let beta = beta_samples(&batch, &basket);
    let mean = beta.iter().sum::<f64>() / beta.len() as f64;
    let var = beta.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (beta.len() - 1) as f64;
    let target = limit_variance(&basket).unwrap().variance;
    assert!((var / target - 1.0).abs() < 0.03, "{var} vs {target}");
}
