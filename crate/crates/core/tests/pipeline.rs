use hdqkd::channel::{expected_gain, ChannelModel, DetectorModel, ReceiverLayout};
use hdqkd::finite_key::{analyze, FiniteKeyConfig, Intensities, VacuumWeakDecoy};
use hdqkd::link::{run_in_process, split_records, LinkParams};
use hdqkd::protocol::{
    sift, simulate_expected, simulate_montecarlo, McOptions, ProtocolConfig, TallyTable,
};
use hdqkd::qudit::Basis;
use proptest::prelude::*;

fn defaults() -> (ProtocolConfig, ReceiverLayout, DetectorModel) {
    (
        ProtocolConfig::default(),
        ReceiverLayout::default(),
        DetectorModel::default(),
    )
}

#[test]
fn analytic_tally_to_key_rate() {
    let (cfg, rx, det) = defaults();
    let tally = simulate_expected(&cfg, &ChannelModel::new(10.0).unwrap(), &rx, &det).unwrap();
    let r = analyze(
        &tally,
        &Intensities::from(&cfg),
        &FiniteKeyConfig::default(),
        cfg.session_duration(),
        &VacuumWeakDecoy,
    )
    .unwrap();
    assert!(r.ell > 0);
    assert!(r.rate_mbps() > 1.0 && r.rate_mbps() < 20.0, "{}", r.rate_mbps());
    assert!(r.s1 < r.n_key);
    assert!(r.lambda_u > r.qber_phase);
}

#[test]
fn montecarlo_tally_json_round_trip() {
    let (cfg, rx, det) = defaults();
    let run = simulate_montecarlo(&cfg, &ChannelModel::new(6.0).unwrap(), &rx, &det, &McOptions::new(200_000, 4))
        .unwrap();
    let back = TallyTable::from_json(&run.tally.to_json()).unwrap();
    assert_eq!(back, run.tally);
    assert!(back.ground_truth.is_some());
}

#[test]
fn simulated_records_drive_the_link() {
    let (cfg, rx, det) = defaults();
    let mut opts = McOptions::new(300_000, 11);
    opts.keep_records = true;
    opts.keep_symbols = true;
    let run = simulate_montecarlo(&cfg, &ChannelModel::new(2.0).unwrap(), &rx, &det, &opts).unwrap();
    let sifted = sift(&run.tally, Some(&run.block)).unwrap();

    let (alice, mut bob) = split_records(&run.records);
    for (a, b) in alice.iter().zip(bob.iter_mut()) {
        if a.basis == Basis::Time && b.basis == Basis::Time {
            b.symbol = a.symbol;
        }
    }
    let (oa, ob) = run_in_process(&alice, &bob, &LinkParams::default()).unwrap();
    assert!(oa.verified() && ob.verified());
    assert_eq!(oa.key, ob.key);
    assert_eq!(oa.sifted_time as f64, sifted.raw_key_total());
    assert_eq!(oa.sifted_phase as f64, run.tally.total_detections(Basis::Phase));
    assert_eq!(oa.key.len() + oa.sample_size, oa.sifted_time);
    assert!((oa.qber_phase - sifted.lambda_obs).abs() < 1e-12);
}

#[test]
fn unreconciled_records_abort() {
    let (cfg, rx, det) = defaults();
    let mut opts = McOptions::new(300_000, 12);
    opts.keep_records = true;
    let run = simulate_montecarlo(&cfg, &ChannelModel::new(2.0).unwrap(), &rx, &det, &opts).unwrap();
    let (alice, bob) = split_records(&run.records);
    let (oa, ob) = run_in_process(&alice, &bob, &LinkParams::default()).unwrap();
    assert!(!oa.verified() && !ob.verified());
    assert!(oa.qber_time_estimate > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gain_falls_and_qber_stays_bounded_with_loss(a in 0.0f64..60.0, b in 0.0f64..60.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (cfg, rx, det) = defaults();
        let t_lo = simulate_expected(&cfg, &ChannelModel::new(lo).unwrap(), &rx, &det).unwrap();
        let t_hi = simulate_expected(&cfg, &ChannelModel::new(hi).unwrap(), &rx, &det).unwrap();
        for basis in Basis::ALL {
            prop_assert!(t_hi.total_detections(basis) <= t_lo.total_detections(basis) * (1.0 + 1e-12));
            let q = t_hi.qber(basis).unwrap();
            prop_assert!((0.0..=0.75 + 1e-12).contains(&q));
        }
    }

    #[test]
    fn gain_is_monotone_in_mu_and_eta(mu in 0.0f64..2.0, eta in 0.0f64..1.0, y0 in 0.0f64..1e-3, dm in 0.0f64..1.0, de in 0.0f64..0.5) {
        let g = expected_gain(mu, eta, y0);
        prop_assert!((y0..=1.0).contains(&g));
        prop_assert!(expected_gain(mu + dm, eta, y0) >= g - 1e-15);
        prop_assert!(expected_gain(mu, (eta + de).min(1.0), y0) >= g - 1e-15);
    }
}
