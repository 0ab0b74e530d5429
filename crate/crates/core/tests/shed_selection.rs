use gridbed_core::drm::{select_shed_set, ShedCandidate};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

/// Exhaustive minimum-inconvenience cover.
fn brute_force(cands: &[ShedCandidate], required: f64) -> Option<f64> {
    let n = cands.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        let (mut kw, mut w) = (0.0, 0.0);
        for (i, c) in cands.iter().enumerate() {
            if mask & (1 << i) != 0 {
                kw += c.power_kw;
                w += c.weight;
            }
        }
        if kw >= required - TOL && best.is_none_or(|b| w < b) {
            best = Some(w);
        }
    }
    best
}

fn candidates(max: usize) -> impl Strategy<Value = Vec<ShedCandidate>> {
    prop::collection::vec((0.05f64..3.0, 0.1f64..10.0), 1..=max).prop_map(|v| {
        v.into_iter().enumerate().map(|(i, (p, w))| ShedCandidate::new(format!("a{i:02}"), p, w)).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exhaustive_optimum(cands in candidates(12), frac in 0.01f64..1.2) {
        let total: f64 = cands.iter().map(|c| c.power_kw).sum();
        let required = total * frac;
        let sel = select_shed_set(&cands, required).unwrap();
        match brute_force(&cands, required) {
            Some(opt) => {
                prop_assert!(!sel.insufficient);
                prop_assert!((sel.total_inconvenience - opt).abs() <= TOL, "{} vs {}", sel.total_inconvenience, opt);
                prop_assert!(sel.shed_kw >= required - TOL);
            }
            None => {
                prop_assert!(sel.insufficient);
                prop_assert_eq!(sel.appliances.len(), cands.len());
            }
        }
    }

    #[test]
    fn more_required_never_cheaper(cands in candidates(12), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let total: f64 = cands.iter().map(|c| c.power_kw).sum();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = select_shed_set(&cands, total * lo).unwrap();
        let s_hi = select_shed_set(&cands, total * hi).unwrap();
        prop_assert!(s_lo.total_inconvenience <= s_hi.total_inconvenience + TOL);
    }

    #[test]
    fn large_sets_stay_feasible(cands in candidates(40), frac in 0.01f64..0.99) {
        let total: f64 = cands.iter().map(|c| c.power_kw).sum();
        let sel = select_shed_set(&cands, total * frac).unwrap();
        prop_assert!(!sel.insufficient);
        prop_assert!(sel.shed_kw >= total * frac - TOL);
        let mut ids = sel.appliances.clone();
        ids.dedup();
        prop_assert_eq!(ids.len(), sel.appliances.len());
    }
}
