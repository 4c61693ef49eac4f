use satrisk::evaluator::{evaluate, return_moments, value_vector, variance_vector};
use satrisk::lumping::{lump_all, sat_fast_lump};
use satrisk::mdp::{expected_rewards, induce};
use satrisk::sat::transform_process;
use satrisk::simulator::{run_groups, sample_return, stream_rng};
use satrisk::{fixtures, Pipeline};

const REF2_MEAN: f64 = 301.0 / 34.0;
const REF2_VARIANCE: f64 = 4092091.0 / 382636.0;
const REF2_SIMPLIFIED_VARIANCE: f64 = 1701.0 / 21964.0;
const REF2_SAMPLE_SEED42_N200: f64 = 10.20308996773178;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn ref2_sat_value_and_variance_vectors() {
    let (mdp, policy) = fixtures::ref2();
    let chain = transform_process(&mdp, &policy.unwrap()).unwrap();
    let v = value_vector(&chain).unwrap();
    let expected_v = [3049.0, 4499.0, 2459.0, 2799.0, 3389.0, 2459.0, 2709.0, 2799.0];
    for (got, want) in v.iter().zip(expected_v) {
        assert!(close(*got, want / 340.0, 1e-12), "{got} vs {}", want / 340.0);
    }
    let psi = variance_vector(&chain, &v).unwrap();
    let at_s1 = 331459371.0 / 38263600.0;
    let at_s2 = 312594471.0 / 38263600.0;
    for (k, s) in chain.aug().unwrap().iter().enumerate() {
        let want = if s.anchor() == 0 { at_s1 } else { at_s2 };
        assert!(close(psi[k], want, 1e-12), "state {k}: {} vs {want}", psi[k]);
    }
}

#[test]
fn ref2_moments_by_pipeline() {
    let (mdp, policy) = fixtures::ref2();
    let policy = policy.unwrap();
    for p in [Pipeline::Sat, Pipeline::SatLumped] {
        let r = evaluate(&mdp, &policy, p).unwrap();
        assert!(close(r.mean, REF2_MEAN, 1e-12));
        assert!(close(r.variance, REF2_VARIANCE, 1e-12));
    }
    let r = evaluate(&mdp, &policy, Pipeline::Simplified).unwrap();
    assert!(close(r.mean, REF2_MEAN, 1e-12));
    assert!(close(r.variance, REF2_SIMPLIFIED_VARIANCE, 1e-12));
    let r = expected_rewards(&mdp, &policy).unwrap();
    assert!(close(r[0], 0.7, 1e-15) && close(r[1], 1.1, 1e-15));
}

#[test]
fn ref2_lumped_classes() {
    let (mdp, policy) = fixtures::ref2();
    let chain = transform_process(&mdp, &policy.unwrap()).unwrap();
    let mut expected = vec![
        vec!["s1-a-s1-1"],
        vec!["s1-a-s2-5"],
        vec!["s1-a-s2--1", "s2-a-s2--1"],
        vec!["s1-b-s2-0", "null-s2"],
        vec!["s2-a-s1-2"],
        vec!["null-s1"],
    ];
    expected.sort();
    for report in [lump_all(&chain), sat_fast_lump(&chain).unwrap()] {
        let mut classes = report.classes.clone();
        classes.iter_mut().for_each(|c| c.sort());
        classes.sort();
        let mut want: Vec<Vec<String>> = expected
            .iter()
            .map(|c| {
                let mut c: Vec<String> = c.iter().map(|s| s.to_string()).collect();
                c.sort();
                c
            })
            .collect();
        want.sort();
        assert_eq!(classes, want);
        let (m, v) = return_moments(&report.merged_chain).unwrap();
        assert!(close(m, REF2_MEAN, 1e-12) && close(v, REF2_VARIANCE, 1e-12));
    }
}

#[test]
fn ref2_pinned_sample() {
    let (mdp, policy) = fixtures::ref2();
    let rp = induce(&mdp, &policy.unwrap()).unwrap();
    let phi = sample_return(&rp, 200, &mut stream_rng(42, 0, 0));
    assert_eq!(phi, REF2_SAMPLE_SEED42_N200);
    let groups = run_groups(&rp, 1, 1, 200, 42).unwrap();
    assert_eq!(groups.returns[0][0], REF2_SAMPLE_SEED42_N200);
}
