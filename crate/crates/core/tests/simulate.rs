// SPDX-License-Identifier: MIT OR Apache-2.0

use cpd_core::simulate::{gen_piecewise_constant, skeleton};
use cpd_core::{simulate, Family, SimSpec};
use proptest::prelude::*;

fn values(spec: &SimSpec) -> Vec<f64> {
    simulate(spec).unwrap().series[0].values().to_vec()
}

#[test]
fn every_family_has_the_advertised_shape() {
    let counts = [
        (Family::PiecewiseConstant, 6),
        (Family::PiecewiseLinear, 5),
        (Family::ChangingVariance, 6),
        (Family::Autoregressive, 5),
        (Family::ExponentialDecay, 5),
        (Family::Oscillating, 11),
    ];
    for (family, cps) in counts {
        for seed in 0..5 {
            let bundle = simulate(&SimSpec::new(family, seed)).unwrap();
            let truth = bundle.truth.as_ref().unwrap();
            assert_eq!(bundle.len(), 1400, "{family}");
            assert_eq!(truth.intermediate().len(), cps, "{family}");
            assert!(truth.intermediate().windows(2).all(|w| w[0] < w[1]));
            assert!(truth.intermediate().iter().all(|&t| t > 0 && t < 1400));
        }
    }
}

#[test]
fn zero_noise_equals_skeleton() {
    for family in Family::ALL {
        let spec = SimSpec::new(family, 7).with_noise(0.0);
        let sk = skeleton(&SimSpec::new(family, 7)).unwrap();
        let v = values(&spec);
        assert!(
            v.iter()
                .zip(&sk.values)
                .all(|(a, b)| (a - b).abs() <= 1e-12),
            "{family}"
        );
    }
}

#[test]
fn noiseless_piecewise_constant_is_a_staircase() {
    let sk = skeleton(&SimSpec::new(Family::PiecewiseConstant, 3)).unwrap();
    for (a, b) in sk.truth.segments() {
        assert!(sk.values[a..b].iter().all(|v| *v == sk.values[a]));
    }
    for &t in sk.truth.intermediate() {
        assert_ne!(sk.values[t - 1], sk.values[t]);
    }
}

#[test]
fn segment_means_stay_in_range() {
    for seed in 0..10_000 {
        let sk = gen_piecewise_constant(
            &SimSpec::new(Family::PiecewiseConstant, seed)
                .with_n(70)
                .with_noise(0.0),
        );
        assert!(
            sk.values.iter().all(|v| *v > -10.0 && *v < 10.0),
            "seed {seed}"
        );
    }
}

#[test]
fn piecewise_linear_slopes_change_at_every_boundary() {
    for seed in 0..20 {
        let sk = skeleton(&SimSpec::new(Family::PiecewiseLinear, seed)).unwrap();
        assert!(sk
            .values
            .iter()
            .all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        for &t in sk.truth.intermediate() {
            let before = sk.values[t - 1] - sk.values[t - 2];
            let after = sk.values[t + 1] - sk.values[t];
            assert!(before * after < 0.0, "seed {seed} at {t}");
        }
    }
}

#[test]
fn changing_variance_has_zero_mean_and_distinct_spreads() {
    for seed in 0..20 {
        let bundle = simulate(&SimSpec::new(Family::ChangingVariance, seed)).unwrap();
        let v = bundle.series[0].values();
        let truth = bundle.truth.unwrap();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "seed {seed}: mean {mean}");
        let spreads: Vec<f64> = truth
            .segments()
            .map(|(a, b)| (v[a..b].iter().map(|x| x * x).sum::<f64>() / (b - a) as f64).sqrt())
            .collect();
        assert!(spreads.windows(2).all(|w| (w[0] / w[1] - 1.0).abs() > 0.05));
    }
}

#[test]
fn autoregressive_segments_alternate_in_persistence() {
    let acf = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / den
    };
    for seed in 0..10 {
        let spec = SimSpec::new(Family::Autoregressive, seed).with_n(12_000);
        let bundle = simulate(&spec).unwrap();
        let v = bundle.series[0].values();
        let r: Vec<f64> = bundle
            .truth
            .unwrap()
            .segments()
            .map(|(a, b)| acf(&v[a..b]))
            .collect();
        for pair in r.chunks(2) {
            assert!(pair[0] > 0.5 && pair[1] < 0.3, "seed {seed}: {r:?}");
        }
        for j in 2..r.len() {
            assert!((r[j] - r[j - 2]).abs() < 0.1, "seed {seed}: {r:?}");
        }
    }
}

#[test]
fn decay_segments_fall_monotonically() {
    for seed in 0..20 {
        let sk = skeleton(&SimSpec::new(Family::ExponentialDecay, seed)).unwrap();
        for (j, (a, b)) in sk.truth.segments().enumerate() {
            let seg = &sk.values[a..b];
            if j % 2 == 0 {
                assert!(
                    seg.windows(2).all(|w| w[1] < w[0]),
                    "seed {seed} segment {j}"
                );
            } else {
                assert!(
                    seg.windows(2).all(|w| w[1] > w[0]),
                    "seed {seed} segment {j}"
                );
            }
        }
    }
}

#[test]
fn oscillating_plateau_matches_the_sigmoid() {
    for seed in 0..10 {
        let sk = skeleton(&SimSpec::new(Family::Oscillating, seed)).unwrap();
        let segs: Vec<(usize, usize)> = sk.truth.segments().collect();
        for motif in segs.chunks(4).filter(|c| c.len() >= 3) {
            let top = sk.values[motif[0].1 - 1];
            assert!(sk.values[motif[2].0..motif[2].1].iter().all(|v| *v == top));
        }
    }
}

#[test]
fn rejects_too_many_segments() {
    assert!(simulate(&SimSpec::new(Family::PiecewiseConstant, 0).with_n(60)).is_err());
    assert!(simulate(&SimSpec::new(Family::PiecewiseConstant, 0).with_noise(-1.0)).is_err());
}

#[test]
fn families_parse_from_names() {
    for family in Family::ALL {
        assert_eq!(family.name().parse::<Family>().unwrap(), family);
    }
    assert!("nonsense".parse::<Family>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), k in 0usize..6, noise in 0.0f64..2.0) {
        let spec = SimSpec::new(Family::ALL[k], seed).with_noise(noise).with_n(400);
        let (a, b) = (simulate(&spec).unwrap(), simulate(&spec).unwrap());
        prop_assert_eq!(a.truth, b.truth);
        let (x, y) = (a.series[0].values(), b.series[0].values());
        prop_assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert_eq!(x.len(), 400);
    }
}
