use branching_extremes::cloud::{walk, LineageVisitor};
use branching_extremes::kpp::*;
use branching_extremes::numerics::SQRT_2;
use branching_extremes::par::map_replicas;
use branching_extremes::sampling::SpringParams;
use branching_extremes::spine::{estimate_c, SpineConfig};
use branching_extremes::StreamRng;

struct Exceeds {
    level: f64,
    hit: bool,
}

impl LineageVisitor for Exceeds {
    fn leaf(&mut self, x: f64) {
        self.hit |= x > self.level;
    }
    fn done(&self) -> bool {
        self.hit
    }
}

#[test]
fn front_tail_matches_direct_simulation() {
    let f = solve_kpp(&KppParams {
        t_max: 1.0,
        rho_max: 2.0,
        checkpoints: vec![1.0],
        ..Default::default()
    })
    .unwrap();
    let pde = front_tail(&f, 2.0, 1.0).unwrap().exp();

    let n = 10_000_000u64;
    let spring = SpringParams::brownian(1.0).unwrap();
    let rng = StreamRng::new(11, 0);
    let hits = map_replicas(n, |k| {
        let mut v = Exceeds {
            level: 2.0 * SQRT_2,
            hit: false,
        };
        walk(spring, 0.0, 0.0, &rng.split(k), 1 << 20, &mut v).unwrap();
        v.hit as u64
    });
    let mc = hits.iter().sum::<u64>() as f64 / n as f64;
    assert!((pde / mc - 1.0).abs() < 0.15, "pde {pde} mc {mc}");
}

#[test]
fn near_critical_speed_gives_small_positive_constant() {
    let cps: Vec<f64> = (6..=12).map(f64::from).collect();
    let f = solve_kpp(&KppParams {
        t_max: 12.0,
        rho_max: 1.5,
        checkpoints: cps.clone(),
        ..Default::default()
    })
    .unwrap();
    let near = estimate_c_pde(&f, 1.05, &cps).unwrap().estimate;
    let mid = estimate_c_pde(&f, 1.5, &cps).unwrap().estimate;
    assert!(near > 0.0 && near < 0.1 && near < mid, "{near} {mid}");
}

#[test]
fn refinement_stays_within_uncertainty() {
    let cps = vec![8.0, 10.0, 12.0];
    let base = KppParams {
        t_max: 12.0,
        rho_max: 1.5,
        checkpoints: cps.clone(),
        ..Default::default()
    };
    let fine = KppParams {
        dx: base.dx / 2.0,
        dt: base.dt / 2.0,
        ..base.clone()
    };
    let fields = solve_many(&[base, fine]);
    let a = estimate_c_pde(fields[0].as_ref().unwrap(), 1.5, &cps).unwrap();
    let b = estimate_c_pde(fields[1].as_ref().unwrap(), 1.5, &cps).unwrap();
    assert!((a.estimate - b.estimate).abs() < a.stderr, "{a:?} {b:?}");
}

#[test]
fn front_moves_at_log_corrected_speed() {
    let cps: Vec<f64> = (6..=12).map(f64::from).collect();
    let f = solve_kpp(&KppParams {
        t_max: 12.0,
        rho_max: 1.0,
        checkpoints: cps,
        ..Default::default()
    })
    .unwrap();
    let mut prev = 0.0;
    for t in 7..=12 {
        let t = t as f64;
        let speed = f.median_front(t).unwrap() - f.median_front(t - 1.0).unwrap();
        let expected = SQRT_2 - 3.0 / (2.0 * SQRT_2 * (t - 0.5));
        eprintln!("t {t}: speed {speed} log-corrected {expected}");
        assert!(speed > prev && speed < SQRT_2);
        prev = speed;
    }
    let expected = SQRT_2 - 3.0 / (2.0 * SQRT_2 * 11.5);
    assert!((prev / expected - 1.0).abs() < 0.02, "{prev} vs {expected}");
}

#[test]
fn large_speed_agrees_with_spine() {
    let f = solve_kpp(&KppParams {
        t_max: 8.0,
        checkpoints: vec![4.0, 6.0, 8.0],
        ..Default::default()
    })
    .unwrap();
    let pde = estimate_c_pde(&f, 4.0, &[4.0, 6.0, 8.0]).unwrap();
    let mc = estimate_c(4.0, 6.0, 100_000, &StreamRng::new(3, 0), &SpineConfig::default()).unwrap();
    assert!(
        (pde.estimate - mc.estimate).abs() < 3.0 * mc.stderr + pde.stderr,
        "{pde:?} {mc:?}"
    );
    let phi = phi_conversion(pde.estimate, 4.0).unwrap();
    assert!(phi > 0.0 && phi < 1.0);
}

#[test]
fn csv_dump_is_reproducible() {
    let p = KppParams {
        t_max: 2.0,
        rho_max: 1.0,
        checkpoints: vec![1.0, 2.0],
        ..Default::default()
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    solve_kpp(&p).unwrap().write_csv(&mut a).unwrap();
    solve_kpp(&p).unwrap().write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,x,w\n"));
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 3));
}
