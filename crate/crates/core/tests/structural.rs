use hslope::extrema::confirmed_extrema;
use hslope::palm::sample_palm;
use hslope::*;
use proptest::prelude::*;

fn random_path(seed: u64, mu: f64, n: usize) -> SampledPath<f64> {
    let spec = ModelSpec::new(mu, 1.0).unwrap();
    generate_one_sided(spawn_stream(seed, 0), spec, 1e-2, n, 0.0).unwrap()
}

fn knot_path(increments: &[f64]) -> SampledPath<f64> {
    let mut values = vec![0.0];
    for d in increments {
        values.push(values.last().unwrap() + d);
    }
    SampledPath::new(0.0, 1.0, values).unwrap()
}

fn check_alternation_and_height(
    ext: &[HExtremum<f64>],
    h: f64,
) -> std::result::Result<(), TestCaseError> {
    for w in ext.windows(2) {
        prop_assert_ne!(w[0].kind, w[1].kind);
        prop_assert!(w[0].grid_index < w[1].grid_index);
        prop_assert!((w[1].level - w[0].level).abs() >= h);
        match w[0].kind {
            ExtremumKind::Min => prop_assert!(w[1].level > w[0].level),
            ExtremumKind::Max => prop_assert!(w[1].level < w[0].level),
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn batch_extrema_alternate_and_clear_h(seed in any::<u64>(), mu in -2.0f64..2.0, h in 0.2f64..2.0) {
        let path = random_path(seed, mu, 2000);
        let ext = confirmed_extrema(&path, h).unwrap();
        check_alternation_and_height(&ext, h)?;
        let seq = SlopeSequence { extrema: ext, origin: 0, h };
        prop_assert!(seq.verify_definition(&path.values).is_ok());
    }

    #[test]
    fn streaming_matches_batch(seed in any::<u64>(), mu in -2.0f64..2.0, h in 0.2f64..2.0) {
        let path = random_path(seed, mu, 2000);
        let batch = confirmed_extrema(&path, h).unwrap();
        let streamed: Vec<HExtremum<f64>> = detect_stream(path.points(), h)
            .unwrap()
            .skip(1)
            .collect::<hslope::Result<_>>()
            .unwrap();
        prop_assert_eq!(streamed, batch);
    }

    #[test]
    fn knot_paths_match_too(incs in prop::collection::vec(-3.0f64..3.0, 1..200), h in 0.1f64..3.0) {
        let path = knot_path(&incs);
        let batch = confirmed_extrema(&path, h).unwrap();
        check_alternation_and_height(&batch, h)?;
        let streamed: Vec<HExtremum<f64>> = detect_stream(path.points(), h)
            .unwrap()
            .skip(1)
            .collect::<hslope::Result<_>>()
            .unwrap();
        prop_assert_eq!(streamed, batch);
    }

    #[test]
    fn slopes_have_height_at_least_h(seed in any::<u64>(), h in 0.2f64..1.5) {
        let spec = ModelSpec::new(0.5, h).unwrap();
        let two = generate_two_sided(spawn_stream(seed, 1), spec, 1e-2, 60.0).unwrap();
        if let Ok(seq) = center(&two, h) {
            for s in slopes(&seq) {
                prop_assert!(s.height >= h);
                prop_assert!((s.excess - (s.height - h)).abs() < 1e-12);
                prop_assert!(s.length > 0.0);
            }
            let cover = seq.covering_slope();
            prop_assert!(cover.start.time <= 0.0 && cover.end.time > 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn seeds_reproduce_bit_for_bit(seed in any::<u64>(), replica in any::<u64>()) {
        let spec = ModelSpec::new(1.0, 1.0).unwrap();
        let a = generate_two_sided(spawn_stream(seed, replica), spec, 1e-3, 2.0).unwrap();
        let b = generate_two_sided(spawn_stream(seed, replica), spec, 1e-3, 2.0).unwrap();
        let bits = |p: &TwoSidedPath<f64>| p.concatenated().values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
        let c = generate_two_sided(spawn_stream(seed, replica.wrapping_add(1)), spec, 1e-3, 2.0).unwrap();
        prop_assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn palm_sequences_alternate(seed in any::<u64>()) {
        let spec = ModelSpec::new(1.0, 1.0).unwrap();
        let s = sample_palm(spawn_stream(seed, 0), spec, 1e-2, 8).unwrap();
        prop_assert_eq!(s.x0(), 0.0);
        prop_assert!(s.alternates());
        for (i, m) in s.marks.iter().enumerate() {
            prop_assert!((s.points[i + 1] - s.points[i] - m.length).abs() < 1e-12);
        }
    }
}

#[test]
fn harvests_reproduce_across_runs() {
    let spec = ModelSpec::new(1.0, 1.0).unwrap();
    let config = montecarlo::HarvestConfig {
        spec,
        dt: 1e-3,
        horizon_cycles: 50,
        replicas: 4,
        master_seed: 99,
    };
    let a = montecarlo::harvest_slopes(config).unwrap();
    let b = montecarlo::harvest_slopes(config).unwrap();
    assert_eq!(a, b);
}
