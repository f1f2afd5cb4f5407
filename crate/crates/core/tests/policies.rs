use goalsim::channels::LinkModel;
use goalsim::policies::{run_tracking_experiment, Jump, SchedulerPolicy, TrackingConfig};
use goalsim::processes::{ProcessModel, SensorSpec};
use goalsim::simkernel::Timebase;

fn config(components: Vec<ProcessModel>, noise: &[f64], policy: SchedulerPolicy) -> TrackingConfig {
    TrackingConfig {
        timebase: Timebase::MILLIS,
        components,
        sensors: noise
            .iter()
            .enumerate()
            .map(|(c, &noise_var)| SensorSpec {
                components: vec![c],
                noise_var,
            })
            .collect(),
        link: LinkModel::ideal(),
        policy,
        shadow: None,
        epoch: 1.0,
        duration: 1000.0,
        pull_period: 1,
        pull_timeout: None,
        jumps: Vec::new(),
        retry_prob: 0.5,
        seed: 7,
    }
}

fn wiener(sigma2: &[f64]) -> Vec<ProcessModel> {
    sigma2.iter().map(|&s| ProcessModel::Wiener { sigma2: s }).collect()
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, 1.96 * (v / n).sqrt())
}

#[test]
fn homogeneous_wiener_aoi_and_voi_pulls_agree_everywhere() {
    let mut cfg = config(wiener(&[1.0; 4]), &[0.0; 4], SchedulerPolicy::VoiGreedyPull);
    cfg.shadow = Some(SchedulerPolicy::AoiGreedyPull { weights: vec![] });
    cfg.duration = 10_000.0;
    cfg.link.erasure_prob = 0.2;
    let res = run_tracking_experiment(&cfg).unwrap();
    let (agree, total) = res.agreement();
    assert_eq!(total, 10_000);
    assert_eq!(agree, total);
}

#[test]
fn weighted_aoi_matches_voi_for_heterogeneous_wiener() {
    let sigma2 = [0.5, 1.0, 2.0, 3.5];
    let mut cfg = config(wiener(&sigma2), &[0.0; 4], SchedulerPolicy::VoiGreedyPull);
    cfg.shadow = Some(SchedulerPolicy::AoiGreedyPull {
        weights: sigma2.to_vec(),
    });
    cfg.duration = 5_000.0;
    cfg.link.erasure_prob = 0.3;
    let res = run_tracking_experiment(&cfg).unwrap();
    let (agree, total) = res.agreement();
    assert!(total > 4_000);
    assert_eq!(agree, total);
}

fn ou_divergence_config() -> TrackingConfig {
    let components = [0.05, 0.2, 1.0, 5.0]
        .iter()
        .map(|&theta| ProcessModel::OrnsteinUhlenbeck {
            theta,
            mu: 0.0,
            sigma2: 1.0,
        })
        .collect();
    let mut cfg = config(components, &[0.1; 4], SchedulerPolicy::VoiGreedyPull);
    cfg.shadow = Some(SchedulerPolicy::AoiGreedyPull { weights: vec![] });
    cfg.duration = 10_000.0;
    cfg
}

#[test]
fn stateful_ou_pulls_diverge() {
    let res = run_tracking_experiment(&ou_divergence_config()).unwrap();
    let (agree, total) = res.agreement();
    let diverged = (total - agree) as f64 / total as f64;
    assert!(diverged >= 0.01, "divergence {diverged}");
}

#[test]
fn voi_greedy_beats_random_polling() {
    let mut diffs = Vec::new();
    for seed in 0..20 {
        let mut cfg = config(wiener(&[0.1, 0.5, 2.0, 8.0]), &[0.0; 4], SchedulerPolicy::RandomPull);
        cfg.duration = 500.0;
        cfg.seed = seed;
        let random = run_tracking_experiment(&cfg).unwrap().mean_sq_error;
        cfg.policy = SchedulerPolicy::VoiGreedyPull;
        let greedy = run_tracking_experiment(&cfg).unwrap().mean_sq_error;
        diffs.push(random - greedy);
    }
    let (m, half) = mean_ci(&diffs);
    assert!(m - half > 0.0, "mean {m} +- {half}");
}

#[test]
fn threshold_push_sends_less_often_for_larger_thresholds() {
    let mut gaps = Vec::new();
    for threshold in [0.5, 1.0, 2.0] {
        let mut cfg = config(wiener(&[1.0]), &[0.0], SchedulerPolicy::ThresholdPush { threshold });
        cfg.epoch = 0.1;
        cfg.duration = 2_000.0;
        let res = run_tracking_experiment(&cfg).unwrap();
        gaps.push(cfg.duration / res.deliveries as f64);
    }
    assert!(gaps[0] < gaps[1] && gaps[1] < gaps[2], "{gaps:?}");
}

#[test]
fn push_detects_unmodelled_jumps_faster_than_pull_on_equal_budget() {
    let mut push_delay = Vec::new();
    let mut pull_delay = Vec::new();
    let mut budget_ratio = Vec::new();
    for seed in 0..30u64 {
        let jump = Jump {
            time: 200.5 + 19.0 * seed as f64,
            component: 0,
            size: 5.0,
        };
        let mut cfg = config(wiener(&[0.01]), &[0.0], SchedulerPolicy::ThresholdPush { threshold: 1.0 });
        cfg.seed = seed;
        cfg.jumps = vec![jump];
        let push = run_tracking_experiment(&cfg).unwrap();
        let period = (cfg.duration / push.transmissions as f64).round().max(1.0) as u64;
        cfg.policy = SchedulerPolicy::AoiGreedyPull { weights: vec![] };
        cfg.pull_period = period;
        let pull = run_tracking_experiment(&cfg).unwrap();
        budget_ratio.push(pull.transmissions as f64 / push.transmissions as f64);
        push_delay.push(push.detection_delays[0].unwrap());
        pull_delay.push(pull.detection_delays[0].unwrap_or(cfg.duration - jump.time));
    }
    let (rm, _) = mean_ci(&budget_ratio);
    assert!((0.7..1.3).contains(&rm), "budget ratio {rm}");
    let diffs: Vec<f64> = pull_delay.iter().zip(&push_delay).map(|(a, b)| a - b).collect();
    let (m, half) = mean_ci(&diffs);
    assert!(m - half > 0.0, "mean {m} +- {half}");
    assert!(push_delay.iter().all(|&d| d <= 1.0));
}
