use mulsmo_core::candle::{Device, Tensor};
use mulsmo_core::eval::{diversity, fid, foot_skate_ratio, r_precision, SkateThresholds};
use mulsmo_core::motion::JointTrajectory;
use mulsmo_core::rng;
use mulsmo_core::style::infonce_loss;
use proptest::prelude::*;

fn rows(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
}

/// Direct softmax cross-entropy over cosine logits.
fn oracle(t: &[Vec<f64>], s: &[Vec<f64>], tau: f64) -> f64 {
    let unit = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let (t, s): (Vec<_>, Vec<_>) = (t.iter().map(unit).collect(), s.iter().map(unit).collect());
    let n = t.len();
    let mut loss = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n).map(|k| t[i].iter().zip(&s[k]).map(|(a, b)| a * b).sum::<f64>() / tau).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        loss -= (logits[i].exp() / z).ln();
    }
    loss / n as f64
}

fn tensor(r: &[Vec<f64>]) -> Tensor {
    Tensor::from_vec(r.concat(), (r.len(), r[0].len()), &Device::Cpu).unwrap()
}

fn well_conditioned(r: &[Vec<f64>]) -> bool {
    r.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn infonce_matches_softmax_cross_entropy(t in rows(5, 4), s in rows(5, 4), tau in 0.05f64..2.0) {
        prop_assume!(well_conditioned(&t) && well_conditioned(&s));
        let l = infonce_loss(&tensor(&t), &tensor(&s), tau, false).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!((l - oracle(&t, &s, tau)).abs() < 1e-6);
        let sym = infonce_loss(&tensor(&t), &tensor(&s), tau, true).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!((sym - 0.5 * (oracle(&t, &s, tau) + oracle(&s, &t, tau))).abs() < 1e-6);
    }

    #[test]
    fn fid_is_nonnegative_and_symmetric(a in rows(12, 3), b in rows(15, 3)) {
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-6 * (1.0 + ab));
    }

    #[test]
    fn fid_of_a_shift_is_its_squared_length(a in rows(12, 3), shift in prop::collection::vec(-2.0f64..2.0, 3)) {
        let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
        let expected: f64 = shift.iter().map(|s| s * s).sum();
        prop_assert!((fid(&a, &b).unwrap() - expected).abs() < 1e-6 * (1.0 + expected));
    }

    #[test]
    fn r_precision_is_monotone_percentages(t in rows(10, 3), m in rows(10, 3), seed in 0u64..100) {
        let labels: Vec<String> = (0..10).map(|i| format!("text {}", i % 4)).collect();
        let p = r_precision(&t, &m, &labels, 5, &mut rng::seeded(seed)).unwrap();
        prop_assert!(p[0] <= p[1] && p[1] <= p[2]);
        prop_assert!(p.iter().all(|v| (0.0..=100.0).contains(v)));
    }

    #[test]
    fn skate_ratio_is_a_fraction(steps in prop::collection::vec((-0.2f64..0.2, 0.0f64..0.1), 2..30)) {
        let pos = steps
            .iter()
            .scan(0.0, |x, (dx, h)| {
                *x += dx;
                Some([[*x, *h, 0.0], [*x, *h, 0.2]])
            })
            .flatten()
            .collect();
        let traj = JointTrajectory::new(steps.len(), 2, pos).unwrap();
        let r = foot_skate_ratio(&traj, &[0, 1], SkateThresholds::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }
}

#[test]
fn identical_rows_give_log_n() {
    for n in [2usize, 5, 16] {
        let r = vec![vec![1.0, 2.0, -0.5]; n];
        let l = infonce_loss(&tensor(&r), &tensor(&r), 0.1, true).unwrap().to_scalar::<f64>().unwrap();
        assert!((l - (n as f64).ln()).abs() < 1e-6);
    }
}

#[test]
fn diversity_of_identical_features_is_zero() {
    let f = vec![vec![0.5, -1.0]; 6];
    assert_eq!(diversity(&f, 20, &mut rng::seeded(0)).unwrap(), 0.0);
}

#[test]
fn perfect_retrieval_scores_100() {
    let t: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 10.0, 0.0]).collect();
    let labels: Vec<String> = (0..8).map(|i| i.to_string()).collect();
    assert_eq!(r_precision(&t, &t, &labels, 4, &mut rng::seeded(1)).unwrap(), [100.0; 3]);
}
