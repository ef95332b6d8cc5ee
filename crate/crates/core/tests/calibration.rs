use pipecal::*;

fn spec13() -> AdcSpec64 {
    AdcSpec::reference(5, 2.0).unwrap()
}

/// Random profile with every stage after the first made ideal, so that a
/// one-stage correction is exact up to flash quantization.
fn first_stage_only(spec: &AdcSpec64, seed: u64) -> NonidealityProfile64 {
    let mut p = random_profile(spec, 25.0, 15.0, seed).unwrap();
    for i in 1..spec.num_stages() {
        p.relative_gain_errors[i] = 0.0;
        p.dac_errors[i].iter_mut().for_each(|e| *e = 0.0);
    }
    p
}

fn generator(phase: f64) -> PairSource64 {
    PairSource::new(
        Waveform::Sine {
            frequency: 10.77e6,
            sample_rate: 100e6,
            phase,
        },
        SourceKind::Generator,
        1.0,
        0.5,
        1.0,
        0,
    )
    .unwrap()
}

fn application(amplitude: f64) -> PairSource64 {
    PairSource::new(
        Waveform::Sine {
            frequency: 1.3e6,
            sample_rate: 100e6,
            phase: 0.0,
        },
        SourceKind::Application,
        amplitude,
        0.5,
        1.0,
        0,
    )
    .unwrap()
}

fn random_source(seed: u64) -> PairSource64 {
    PairSource::new(
        Waveform::UniformRandom,
        SourceKind::Generator,
        1.0,
        0.5,
        1.0,
        seed,
    )
    .unwrap()
}

fn oracle(
    spec: &AdcSpec64,
    layout: &ParameterLayout,
    profile: &NonidealityProfile64,
    source: PairSource64,
    pairs: usize,
) -> ParameterVector64 {
    let sampler = PairSampler::new(spec, profile.clone(), layout, source).unwrap();
    let samples: Vec<_> = sampler.take(pairs).collect();
    mmse_solve(&samples).unwrap().theta0
}

#[test]
fn mean_estimate_approaches_mmse_solution() {
    let spec = spec13();
    let layout = build_layout(&spec, 3, CorrectionMode::Extended).unwrap();
    let profile = random_profile(&spec, 25.0, 15.0, 5).unwrap();
    let theta0 = oracle(&spec, &layout, &profile, random_source(1000), 200_000);
    let runs = 8;
    let checkpoints = [1_000u64, 30_000];
    let mut means = vec![vec![0.0; layout.len()]; checkpoints.len()];
    for run in 0..runs {
        let mut sampler =
            PairSampler::new(&spec, profile.clone(), &layout, random_source(run)).unwrap();
        let mut est = HeeEstimator::new(layout.clone(), 0.2, 0.5).unwrap();
        let mut done = 0;
        for (c, &k) in checkpoints.iter().enumerate() {
            run_calibration(
                sampler.by_ref(),
                &mut est,
                UpdateRule::Sgd,
                None,
                k - done,
                k,
            )
            .unwrap();
            done = k;
            for (m, v) in means[c].iter_mut().zip(est.theta().values()) {
                *m += v / runs as f64;
            }
        }
    }
    let dist: Vec<f64> = means
        .into_iter()
        .map(|m| ParameterVector::from_values(m).distance(&theta0).unwrap())
        .collect();
    assert!(dist[1] < dist[0], "{dist:?}");
}

#[test]
fn smaller_step_size_gives_smaller_steady_state_error() {
    let spec = spec13();
    let layout = build_layout(&spec, 1, CorrectionMode::Plain).unwrap();
    let profile = first_stage_only(&spec, 2);
    let theta0 = oracle(&spec, &layout, &profile, random_source(99), 200_000);
    let mut finals = Vec::new();
    for mu in [0.05, 0.2, 0.4] {
        let sampler = PairSampler::new(&spec, profile.clone(), &layout, random_source(7)).unwrap();
        let mut est = HeeEstimator::new(layout.clone(), mu, 0.5).unwrap();
        let trace = run_calibration(
            sampler,
            &mut est,
            UpdateRule::Sgd,
            Some(&theta0),
            100_000,
            100,
        )
        .unwrap();
        finals.push(trace.mean_error_norm(50_000, 100_000).unwrap());
    }
    assert!(finals[0] < finals[1] && finals[1] < finals[2], "{finals:?}");
}

#[test]
fn step_size_above_bound_diverges_without_panicking() {
    let spec = spec13();
    let layout = build_layout(&spec, 3, CorrectionMode::Plain).unwrap();
    let profile = random_profile(&spec, 25.0, 15.0, 0).unwrap();
    let bound: f64 = step_size_bound(3, 0.5, CorrectionMode::Plain).unwrap();
    assert!((bound - 2.0 / 3.75).abs() < 1e-12);
    let sampler = PairSampler::new(&spec, profile, &layout, random_source(3)).unwrap();
    let mut est = HeeEstimator::new(layout.clone(), 3.0 * bound, 0.5).unwrap();
    let result = run_calibration(sampler, &mut est, UpdateRule::Sgd, None, 20_000, 1000);
    assert!(result.is_ok());
    let norm = est.theta().norm();
    assert!(!norm.is_finite() || norm > 1.0, "{norm}");
}

#[test]
fn full_duty_background_phase_equals_plain_gradient_run() {
    let spec = spec13();
    let layout = build_layout(&spec, 3, CorrectionMode::Extended).unwrap();
    let profile = random_profile(&spec, 25.0, 15.0, 4).unwrap();
    let mk = || PairSampler::new(&spec, profile.clone(), &layout, application(0.9)).unwrap();
    let mut a = HeeEstimator::new(layout.clone(), 0.2, 0.5).unwrap();
    run_calibration(mk(), &mut a, UpdateRule::Sgd, None, 5_000, 100).unwrap();
    let mut b = HeeEstimator::new(layout.clone(), 0.2, 0.5).unwrap();
    let config = TwoPhaseConfig {
        phase1_steps: 0,
        phase2_steps: 5_000,
        duty: 1.0,
        stride: 10,
    };
    let trace = run_two_phase(std::iter::empty(), mk(), &mut b, config, |_, _| None).unwrap();
    assert_eq!(a.theta(), b.theta());
    assert_eq!(trace.phase2_samples, 5_000);
    assert_eq!(trace.phase1_samples, 0);
}

#[test]
fn reduced_duty_consumes_proportionally_more_pairs() {
    let spec = spec13();
    let layout = build_layout(&spec, 1, CorrectionMode::Plain).unwrap();
    let profile = first_stage_only(&spec, 8);
    let theta0 = oracle(&spec, &layout, &profile, generator(1.0), 100_000);
    let mut finals = Vec::new();
    for duty in [1.0, 0.1] {
        let sg = PairSampler::new(&spec, profile.clone(), &layout, generator(0.0)).unwrap();
        let sa = PairSampler::new(&spec, profile.clone(), &layout, random_source(5)).unwrap();
        let mut est = HeeEstimator::new(layout.clone(), 0.2, 0.5).unwrap();
        let config = TwoPhaseConfig {
            phase1_steps: 5_000,
            phase2_steps: 20_000,
            duty,
            stride: 1_000,
        };
        let trace = run_two_phase(sg, sa, &mut est, config, |_, _| Some(&theta0)).unwrap();
        let expected = (20_000.0 / duty) as u64;
        assert!(
            trace.phase2_samples.abs_diff(expected) <= 1,
            "{}",
            trace.phase2_samples
        );
        finals.push(trace.records.last().unwrap().error_norm.unwrap());
    }
    let lsb = spec.lsb();
    assert!((finals[0] - finals[1]).abs() < lsb, "{finals:?}");
}

#[test]
fn background_phase_tracks_a_dac_drift() {
    let spec = spec13();
    let layout = build_layout(&spec, 1, CorrectionMode::Extended).unwrap();
    let before = first_stage_only(&spec, 1);
    let mut after = before.clone();
    after.dac_errors[0][3] += 5.0 * spec.lsb();
    let t_before = oracle(&spec, &layout, &before, generator(1.0), 200_000);
    let t_after = oracle(&spec, &layout, &after, generator(1.0), 200_000);
    let drift_at = 50_000;

    let sg = PairSampler::new(&spec, before.clone(), &layout, generator(0.0)).unwrap();
    let sa = PairSampler::new(&spec, before, &layout, application(0.9))
        .unwrap()
        .with_drift(drift_at, after)
        .unwrap();
    let mut est = HeeEstimator::new(layout.clone(), 0.2, 0.5).unwrap();
    let config = TwoPhaseConfig {
        phase1_steps: 30_000,
        phase2_steps: 100_000,
        duty: 1.0,
        stride: 10,
    };
    let trace = run_two_phase(sg, sa, &mut est, config, |phase, n| {
        Some(if phase == Phase::Background && n > drift_at {
            &t_after
        } else {
            &t_before
        })
    })
    .unwrap();

    // Single records carry the gradient noise; compare window means.
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = it.collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let p1: Vec<_> = trace.phase(Phase::Initial).collect();
    let phase1_final = mean(&mut p1[p1.len() - 100..].iter().map(|r| r.error_norm.unwrap()));
    let bg: Vec<_> = trace.phase(Phase::Background).collect();
    let window = |from: u64, to: u64| {
        mean(
            &mut bg
                .iter()
                .filter(|r| r.samples > from && r.samples <= to)
                .map(|r| r.error_norm.unwrap()),
        )
    };
    let settled_before = window(drift_at - 10_000, drift_at);
    assert!(
        settled_before <= phase1_final,
        "{settled_before} vs {phase1_final}"
    );

    let spike = bg
        .iter()
        .filter(|r| r.samples > drift_at && r.samples <= drift_at + 100)
        .map(|r| r.error_norm.unwrap())
        .fold(0.0, f64::max);
    assert!(spike > 3.0 * settled_before, "{spike} vs {settled_before}");
    let end = window(90_000, 100_000);
    assert!(end < 1.5 * settled_before, "{end} vs {settled_before}");
}

#[test]
fn background_phase_keeps_unvisited_levels() {
    let spec = spec13();
    let layout = build_layout(&spec, 3, CorrectionMode::Plain).unwrap();
    let profile = random_profile(&spec, 25.0, 15.0, 6).unwrap();
    let sg = PairSampler::new(&spec, profile.clone(), &layout, generator(0.0)).unwrap();
    // +-0.3 keeps the first stage on its three middle levels.
    let sa = PairSampler::new(&spec, profile, &layout, application(0.3)).unwrap();
    let mut est = HeeEstimator::new(layout.clone(), 0.2, 0.5).unwrap();
    let phase1 = TwoPhaseConfig {
        phase1_steps: 20_000,
        phase2_steps: 0,
        duty: 1.0,
        stride: 1_000,
    };
    run_two_phase(sg, std::iter::empty(), &mut est, phase1, |_, _| None).unwrap();
    let after_phase1 = est.theta().clone();
    let phase2 = TwoPhaseConfig {
        phase1_steps: 0,
        phase2_steps: 20_000,
        duty: 1.0,
        stride: 1_000,
    };
    run_two_phase(std::iter::empty(), sa, &mut est, phase2, |_, _| None).unwrap();
    let mut changed = 0;
    for level in 0..7 {
        let Some(i) = layout.level_index(1, level) else {
            continue;
        };
        let same = est.theta().values()[i] == after_phase1.values()[i];
        if [0, 1, 5, 6].contains(&level) {
            assert!(same, "level {level} moved");
        } else if !same {
            changed += 1;
        }
    }
    assert!(changed > 0);
}
