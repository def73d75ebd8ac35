mod common;

use common::*;
use plts_core::engine::{run_trial, TrialConfig};
use plts_core::hazard::{ArmModel, BaselineHazard};
use plts_core::policies::{Policy, Rct, Thompson};

fn cfg(h: Vec<f64>, thetas: Vec<f64>, participants: usize) -> TrialConfig {
    let hazard = BaselineHazard::new(h, plts_core::hazard::HazardSource::Synthetic).unwrap();
    TrialConfig::constant(ArmModel::new(thetas).unwrap(), hazard, participants).unwrap()
}

#[test]
fn per_round_infection_fraction_converges() {
    // round 1 exposes only round-0 arrivals; fraction -> 1 - exp(-h_k(1))
    let h = vec![0.0, 0.08, 0.0];
    let thetas = vec![0.0, 0.7];
    let c = cfg(h, thetas.clone(), 2000);
    let mut at_risk = [0u64; 2];
    let mut infected = [0u64; 2];
    for seed in 0..300 {
        let res = run_trial(&c, &mut Rct::new(2), &mut rng(seed)).unwrap();
        let r1 = &res.rounds[0];
        for k in 0..2 {
            at_risk[k] += r1.at_risk[k];
            infected[k] += r1.infections[k];
        }
    }
    for k in 0..2 {
        let p = -(-0.08 * (-thetas[k]).exp()).exp_m1();
        let frac = infected[k] as f64 / at_risk[k] as f64;
        let se = (p * (1.0 - p) / at_risk[k] as f64).sqrt();
        assert!((frac - p).abs() < 4.0 * se, "arm {k}: {frac} vs {p}");
    }
}

#[test]
fn plts_zero_hazard_stays_uniform() {
    let c = cfg(vec![0.0; 11], DEFAULT_THETAS.to_vec(), 600);
    let mut p = Thompson::plts(6, 0.01).unwrap();
    let res = run_trial(&c, &mut p, &mut rng(1)).unwrap();
    assert!(res
        .probabilities_by_round
        .iter()
        .all(|row| row.iter().all(|&x| x == 1.0 / 6.0)));
    assert_eq!(res.recommendation, 0);
}

#[test]
fn plts_recommends_best_arm_on_long_runs() {
    // well separated arms with plenty of events
    let thetas = DEFAULT_THETAS.to_vec();
    let c = cfg(vec![0.004; 101], thetas, 6000);
    let mut hits = 0;
    let runs = 12u64;
    for seed in 0..runs {
        let mut p = Thompson::plts(6, 0.01).unwrap();
        let res = run_trial(&c, &mut p, &mut rng(seed)).unwrap();
        hits += (res.recommendation == 5) as u64;
        assert_eq!(p.diagnostics().nonconverged_solves, 0);
    }
    assert!(hits * 3 >= runs * 2, "{hits}/{runs}");
}

#[test]
fn plts_shifts_toward_best_arm_in_second_half() {
    let thetas = vec![0.0, 0.5, 3.0];
    let horizon = 100;
    let c = cfg(vec![0.003; horizon + 1], thetas, 9000);
    let runs = 16;
    let mut share = vec![0.0; horizon + 1];
    for seed in 0..runs {
        let mut p = Thompson::plts(3, 0.01).unwrap();
        let res = run_trial(&c, &mut p, &mut rng(1000 + seed)).unwrap();
        for (t, row) in res.probabilities_by_round.iter().enumerate() {
            share[t] += row[2] / runs as f64;
        }
    }
    // least-squares slope over the second half
    let xs: Vec<f64> = (horizon / 2..=horizon).map(|t| t as f64).collect();
    let ys = &share[horizon / 2..=horizon];
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(slope >= 0.0, "slope {slope}");
    assert!(share[horizon] > share[horizon / 2] - 0.01);
    assert!(share[horizon] > 0.8);
}

#[test]
fn assignment_probabilities_are_distributions() {
    let c = cfg(vec![0.01; 21], vec![0.0, 1.0, 2.0, 0.5], 400);
    let policies: Vec<Box<dyn Policy>> = vec![
        Box::new(Rct::new(4)),
        Box::new(Thompson::plts(4, 0.01).unwrap()),
        Box::new(Thompson::top_two(4, 0.01, 0.5).unwrap()),
        Box::new(plts_core::policies::Dew::new(4, 0.4).unwrap()),
    ];
    for mut p in policies {
        let res = run_trial(&c, p.as_mut(), &mut rng(5)).unwrap();
        for row in &res.probabilities_by_round {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        for part in &res.participants {
            let row = &res.probabilities_by_round[part.enroll_round];
            assert_eq!(part.assign_prob, row[part.arm], "{}", p.label());
            assert!(part.assign_prob > 0.0);
        }
    }
}
