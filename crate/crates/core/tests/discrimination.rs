use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seqread::discrimination::{
    default_edges, error_rates, histogram2d, overlap, qnd_probability, uniform_edges,
    AmplitudeHistogram, DecisionRegion, QndPair, ReadoutReport,
};
use seqread::hilbert::Branch;
use seqread::Error;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as GaussLaw};

fn gaussian_cloud(center: C64, sigma: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..n)
        .map(|_| center + C64::new(normal.sample(rng), normal.sample(rng)))
        .collect()
}

#[test]
fn single_sample_occupies_one_bin() {
    let edges = uniform_edges(-2.0, 2.0, 8);
    let h = histogram2d(&[C64::new(0.3, -0.7)], &edges, &edges).unwrap();
    let nonzero: Vec<usize> = (0..h.density().len()).filter(|&i| h.density()[i] > 0.0).collect();
    assert_eq!(nonzero.len(), 1);
    assert_eq!(h.n_samples(), 1);
    assert!((h.total_mass() - 1.0).abs() < 1e-12);
}

#[test]
fn bin_center_lattice_is_flat() {
    let edges = uniform_edges(-1.0, 1.0, 10);
    let mut samples = Vec::new();
    for ix in 0..10 {
        for iy in 0..10 {
            samples.push(C64::new(-0.9 + 0.2 * ix as f64, -0.9 + 0.2 * iy as f64));
        }
    }
    let h = histogram2d(&samples, &edges, &edges).unwrap();
    let expect = 1.0 / (100.0 * 0.04);
    assert!(h.density().iter().all(|&d| (d - expect).abs() < 1e-9));
}

#[test]
fn edge_and_out_of_range_conventions() {
    let edges = uniform_edges(0.0, 1.0, 4);
    // Samples exactly on the top edge fold into the last bin.
    let h = histogram2d(&[C64::new(1.0, 1.0)], &edges, &edges).unwrap();
    assert!(h.at(3, 3) > 0.0);

    // More than 0.1% outside the grid is a coverage failure.
    let mut samples = vec![C64::new(0.5, 0.5); 900];
    samples.extend(vec![C64::new(5.0, 0.5); 100]);
    match histogram2d(&samples, &edges, &edges) {
        Err(Error::CoverageDeficit { fraction, .. }) => assert!((fraction - 0.9).abs() < 1e-12),
        other => panic!("expected coverage deficit, got {other:?}"),
    }
    assert!(histogram2d(&[], &edges, &edges).is_err());
    assert!(histogram2d(&[C64::new(0.5, 0.5)], &[0.0, 0.0, 1.0], &edges).is_err());
}

#[test]
fn large_gaussian_sample_passes_goodness_of_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let samples = gaussian_cloud(C64::new(0.0, 0.0), 1.0, 100_000, &mut rng);
    let edges = uniform_edges(-4.0, 4.0, 16);
    let h = histogram2d(&samples, &edges, &edges).unwrap();

    let law = GaussLaw::new(0.0, 1.0).unwrap();
    let p1d: Vec<f64> = edges.windows(2).map(|w| law.cdf(w[1]) - law.cdf(w[0])).collect();
    let n = h.n_samples() as f64;
    // Low-expectation outer bins are pooled into one class to keep the
    // chi-square approximation valid.
    let mut chi2 = 0.0;
    let mut classes = 0usize;
    let mut rest_obs = 0.0;
    let mut rest_exp = 0.0;
    for ix in 0..16 {
        for iy in 0..16 {
            let expect = n * p1d[ix] * p1d[iy];
            let observed = h.at(ix, iy) * n * h.bin_area(ix, iy);
            if expect >= 5.0 {
                chi2 += (observed - expect).powi(2) / expect;
                classes += 1;
            } else {
                rest_obs += observed;
                rest_exp += expect;
            }
        }
    }
    if rest_exp > 0.0 {
        chi2 += (rest_obs - rest_exp).powi(2) / rest_exp;
        classes += 1;
    }
    let df = (classes - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(df).unwrap().cdf(chi2);
    assert!(p_value > 0.001, "chi2 {chi2} over {classes} classes, p {p_value}");
}

#[test]
fn overlap_limits_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let edges = uniform_edges(-8.0, 8.0, 64);
    let a = histogram2d(&gaussian_cloud(C64::new(-2.0, 0.0), 1.0, 50_000, &mut rng), &edges, &edges)
        .unwrap();
    let b = histogram2d(&gaussian_cloud(C64::new(2.0, 1.0), 1.0, 50_000, &mut rng), &edges, &edges)
        .unwrap();
    assert!((overlap(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let ab = overlap(&a, &b).unwrap();
    let ba = overlap(&b, &a).unwrap();
    assert_eq!(ab, ba);
    assert!(ab > 0.0 && ab < 1.0);

    // Fully disjoint supports.
    let left = histogram2d(&[C64::new(-4.0, 0.0); 10], &edges, &edges).unwrap();
    let right = histogram2d(&[C64::new(4.0, 0.0); 10], &edges, &edges).unwrap();
    assert_eq!(overlap(&left, &right).unwrap(), 0.0);

    let other = uniform_edges(-8.0, 8.0, 32);
    let coarse = histogram2d(&[C64::new(0.0, 0.0); 4], &other, &other).unwrap();
    assert!(matches!(overlap(&a, &coarse), Err(Error::BinningMismatch(_))));
}

#[test]
fn overlap_is_stable_under_bin_merging() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let fine = uniform_edges(-8.0, 8.0, 64);
    let coarse = uniform_edges(-8.0, 8.0, 32);
    let g = gaussian_cloud(C64::new(-1.5, 0.0), 1.0, 200_000, &mut rng);
    let e = gaussian_cloud(C64::new(1.5, 0.0), 1.0, 200_000, &mut rng);
    let ov_fine = overlap(
        &histogram2d(&g, &fine, &fine).unwrap(),
        &histogram2d(&e, &fine, &fine).unwrap(),
    )
    .unwrap();
    let ov_coarse = overlap(
        &histogram2d(&g, &coarse, &coarse).unwrap(),
        &histogram2d(&e, &coarse, &coarse).unwrap(),
    )
    .unwrap();
    // Cosine overlap of d = 3 sigma Gaussians is about exp(-9/4) = 0.105;
    // halving the resolution must not move it materially.
    assert!((ov_fine - (-2.25f64).exp()).abs() < 0.02, "fine {ov_fine}");
    assert!((ov_fine - ov_coarse).abs() < 0.01, "fine {ov_fine} coarse {ov_coarse}");
}

#[test]
fn decision_boundary_tracks_the_bisector() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let edges = uniform_edges(-8.0, 8.0, 80);
    let pg = histogram2d(&gaussian_cloud(C64::new(-2.0, 0.0), 1.0, 200_000, &mut rng), &edges, &edges)
        .unwrap();
    let pe = histogram2d(&gaussian_cloud(C64::new(2.0, 0.0), 1.0, 200_000, &mut rng), &edges, &edges)
        .unwrap();
    let region = DecisionRegion::build(&pg, &pe).unwrap();
    // Equal-weight symmetric clouds separate along x = 0; scan the rows
    // crossing the populated band and ask the flip to sit within one bin.
    let bin = 0.2;
    for iy in 30..50 {
        let y = -8.0 + (iy as f64 + 0.5) * bin;
        let mut flip = None;
        for ix in 0..79 {
            let a = region.classify(C64::new(-8.0 + (ix as f64 + 0.5) * bin, y));
            let b = region.classify(C64::new(-8.0 + (ix as f64 + 1.5) * bin, y));
            if a == Branch::Ground && b == Branch::Excited {
                flip = Some(-8.0 + (ix as f64 + 1.0) * bin);
                break;
            }
        }
        let flip = flip.expect("boundary crossing in populated band");
        assert!(flip.abs() <= bin + 1e-12, "boundary at {flip} for row y = {y}");
    }
}

#[test]
fn tie_and_support_conventions() {
    let edges = uniform_edges(-4.0, 4.0, 8);
    let pg = histogram2d(&[C64::new(-2.5, 0.0); 20], &edges, &edges).unwrap();
    let pe = histogram2d(&[C64::new(2.5, 0.0); 20], &edges, &edges).unwrap();
    let region = DecisionRegion::build(&pg, &pe).unwrap();
    // g wherever only pg lives, e wherever only pe lives.
    assert_eq!(region.classify(C64::new(-2.5, 0.0)), Branch::Ground);
    assert_eq!(region.classify(C64::new(2.5, 0.0)), Branch::Excited);
    // Bins without any density tie toward g.
    assert_eq!(region.classify(C64::new(0.0, 3.0)), Branch::Ground);

    let all_tied = DecisionRegion::build(&pg, &pg).unwrap();
    assert!(all_tied.mask().iter().all(|&m| m));
    assert!((all_tied.overlap() - 1.0).abs() < 1e-12);
}

#[test]
fn error_rates_on_separated_and_identical_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let edges = uniform_edges(-8.0, 8.0, 64);
    let g = gaussian_cloud(C64::new(-4.0, 0.0), 0.4, 20_000, &mut rng);
    let e = gaussian_cloud(C64::new(4.0, 0.0), 0.4, 20_000, &mut rng);
    let region = DecisionRegion::build(
        &histogram2d(&g, &edges, &edges).unwrap(),
        &histogram2d(&e, &edges, &edges).unwrap(),
    )
    .unwrap();
    let report = error_rates(&g, &e, &region).unwrap();
    report.validate().unwrap();
    assert_eq!(report.error_g, 0.0);
    assert_eq!(report.error_e, 0.0);
    assert_eq!(report.fidelity, 1.0);
    assert_eq!(report.n_runs, 40_000);

    // Indistinguishable preparations: chance-level fidelity. Classifying
    // the training samples themselves would overfit bin shot noise, so
    // fresh draws from the same distributions are scored.
    let c1 = gaussian_cloud(C64::new(0.0, 0.0), 1.0, 30_000, &mut rng);
    let c2 = gaussian_cloud(C64::new(0.0, 0.0), 1.0, 30_000, &mut rng);
    let region = DecisionRegion::build(
        &histogram2d(&c1, &edges, &edges).unwrap(),
        &histogram2d(&c2, &edges, &edges).unwrap(),
    )
    .unwrap();
    let f1 = gaussian_cloud(C64::new(0.0, 0.0), 1.0, 30_000, &mut rng);
    let f2 = gaussian_cloud(C64::new(0.0, 0.0), 1.0, 30_000, &mut rng);
    let report = error_rates(&f1, &f2, &region).unwrap();
    assert!((report.fidelity - 0.5).abs() < 0.01, "fidelity {}", report.fidelity);

    assert!(matches!(error_rates(&[], &e, &region), Err(Error::EmptySamples(_))));
    assert!(matches!(error_rates(&g, &[], &region), Err(Error::EmptySamples(_))));
}

#[test]
fn training_error_does_not_beat_holdout_beyond_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let edges = uniform_edges(-8.0, 8.0, 64);
    let make = |rng: &mut ChaCha8Rng| {
        (
            gaussian_cloud(C64::new(-1.0, 0.0), 1.0, 100_000, rng),
            gaussian_cloud(C64::new(1.0, 0.0), 1.0, 100_000, rng),
        )
    };
    let (train_g, train_e) = make(&mut rng);
    let (hold_g, hold_e) = make(&mut rng);
    let region = DecisionRegion::build(
        &histogram2d(&train_g, &edges, &edges).unwrap(),
        &histogram2d(&train_e, &edges, &edges).unwrap(),
    )
    .unwrap();
    let on_train = error_rates(&train_g, &train_e, &region).unwrap();
    let on_hold = error_rates(&hold_g, &hold_e, &region).unwrap();
    let err_tr = (on_train.error_g + on_train.error_e) / 2.0;
    let err_ho = (on_hold.error_g + on_hold.error_e) / 2.0;
    let sem = (err_ho * (1.0 - err_ho) * 2.0 / 100_000.0).sqrt();
    assert!(err_tr <= err_ho + 3.0 * sem, "train {err_tr} holdout {err_ho} sem {sem}");
}

#[test]
fn fidelity_is_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let edges = uniform_edges(-8.0, 8.0, 64);
    let g = gaussian_cloud(C64::new(-1.2, 0.4), 1.0, 50_000, &mut rng);
    let e = gaussian_cloud(C64::new(1.2, -0.4), 1.0, 50_000, &mut rng);
    let fidelity_of = |g: &[C64], e: &[C64]| {
        let region = DecisionRegion::build(
            &histogram2d(g, &edges, &edges).unwrap(),
            &histogram2d(e, &edges, &edges).unwrap(),
        )
        .unwrap();
        error_rates(g, e, &region).unwrap().fidelity
    };
    let base = fidelity_of(&g, &e);

    // A quarter-turn maps the square grid onto itself: exact invariance.
    let quarter = C64::new(0.0, 1.0);
    let gq: Vec<C64> = g.iter().map(|b| b * quarter).collect();
    let eq: Vec<C64> = e.iter().map(|b| b * quarter).collect();
    assert_eq!(fidelity_of(&gq, &eq), base);

    // A generic rotation re-bins the samples; the fidelity stays put to
    // discretization accuracy.
    let turn = C64::from_polar(1.0, 0.7);
    let gr: Vec<C64> = g.iter().map(|b| b * turn).collect();
    let er: Vec<C64> = e.iter().map(|b| b * turn).collect();
    assert!((fidelity_of(&gr, &er) - base).abs() < 0.01);
}

#[test]
fn qnd_probability_follows_the_herald_rule() {
    let agree = vec![
        QndPair {
            first: Branch::Ground,
            second: Branch::Ground,
            prepared: Branch::Ground,
        };
        100
    ];
    assert_eq!(qnd_probability(&agree).unwrap(), 1.0);

    // Pairs whose first outcome misses the preparation are discarded.
    let mut mixed = agree.clone();
    mixed.extend(vec![
        QndPair {
            first: Branch::Excited,
            second: Branch::Ground,
            prepared: Branch::Ground,
        };
        900
    ]);
    assert_eq!(qnd_probability(&mixed).unwrap(), 1.0);

    let unheralded = vec![
        QndPair {
            first: Branch::Excited,
            second: Branch::Excited,
            prepared: Branch::Ground,
        };
        10
    ];
    assert!(matches!(qnd_probability(&unheralded), Err(Error::NoHeraldedPairs)));
}

#[test]
fn coin_flip_second_outcome_gives_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let n = 40_000;
    let pairs: Vec<QndPair> = (0..n)
        .map(|_| QndPair {
            first: Branch::Excited,
            second: if rng.gen_bool(0.5) { Branch::Excited } else { Branch::Ground },
            prepared: Branch::Excited,
        })
        .collect();
    let q = qnd_probability(&pairs).unwrap();
    let sem = (0.25f64 / n as f64).sqrt();
    assert!((q - 0.5).abs() < 3.0 * sem, "q {q}");
}

#[test]
fn sequential_readout_qndness_matches_the_closed_form() {
    // Prepared e, heralded on a correct first readout; the second readout
    // flips when the qubit decays in the 220 ns gap or the measurement
    // demolishes the state.
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let t1 = 6.1e-6;
    let gap = 220e-9;
    let p_decay = 1.0 - f64::exp(-gap / t1);
    let p_dem = 0.02;
    let n = 100_000;
    let pairs: Vec<QndPair> = (0..n)
        .map(|_| {
            let herald_ok = rng.gen_bool(0.95);
            let first = if herald_ok { Branch::Excited } else { Branch::Ground };
            let survives = !rng.gen_bool(p_dem) && !rng.gen_bool(p_decay);
            let second = if survives { Branch::Excited } else { Branch::Ground };
            QndPair {
                first,
                second,
                prepared: Branch::Excited,
            }
        })
        .collect();
    let q = qnd_probability(&pairs).unwrap();
    let expected = (1.0 - p_dem) * (1.0 - p_decay);
    assert!((q - expected).abs() < 0.01, "q {q} expected {expected}");
    assert!((expected - (1.0 - p_dem - p_decay)).abs() < 1e-3);
}

#[test]
fn report_validation_catches_inconsistencies() {
    let good = ReadoutReport {
        overlap: 0.034,
        error_g: 0.016,
        error_e: 0.034,
        fidelity: 1.0 - (0.016 + 0.034) / 2.0,
        qndness: Some(0.95),
        n_runs: 200_000,
    };
    good.validate().unwrap();
    let mut bad = good.clone();
    bad.fidelity = 0.9;
    assert!(bad.validate().is_err());
    let mut bad = good.clone();
    bad.error_g = 1.5;
    assert!(bad.validate().is_err());
    let mut bad = good;
    bad.qndness = Some(-0.1);
    assert!(bad.validate().is_err());
}

#[test]
fn histogram_from_density_round_trip_checks() {
    let edges = uniform_edges(0.0, 1.0, 2);
    // Mass 1 over four bins of area 0.25.
    let ok = AmplitudeHistogram::from_density(edges.clone(), edges.clone(), vec![1.0; 4], 7).unwrap();
    assert_eq!(ok.n_samples(), 7);
    assert!(AmplitudeHistogram::from_density(edges.clone(), edges.clone(), vec![1.1; 4], 7).is_err());
    assert!(AmplitudeHistogram::from_density(edges.clone(), edges.clone(), vec![1.0; 3], 7).is_err());
    assert!(
        AmplitudeHistogram::from_density(edges.clone(), edges, vec![1.0, 1.0, 1.0, -1.0], 7).is_err()
    );

    let (x, y) = default_edges();
    assert_eq!(x.len(), 201);
    assert_eq!(y.len(), 201);
    assert_eq!(x[0], -12.0);
    assert_eq!(*x.last().unwrap(), 12.0);
}
