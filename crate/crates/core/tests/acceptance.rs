//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use msgn::fluctuation::{
    coupled_fluctuation, euler_maruyama, quadratic_variation, sde_rng, CouplingOptions,
};
use msgn::models;
use msgn::network::{parse_network, ReactionNetwork};
use msgn::pdmp_sim::integrate_flow;
use msgn::stats::{
    clt_compare, discrete_equality_probability, gof_test, mean_se, poisson_chi_square,
    sample_limit_sde, strong_error_sweep, variance_se, CltOptions, ConvergenceReport, Estimate,
    Law,
};
use msgn::{HybridState, Point, PrmStream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

const SWEEP_NS: [u64; 4] = [16, 64, 256, 1024];
const SWEEP_T: f64 = 5.0;
const SWEEP_M: u64 = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn z_start() -> HybridState {
    HybridState::new(vec![1.0], vec![1]).unwrap()
}

fn sweep(net: &ReactionNetwork, seed: u64) -> ConvergenceReport {
    let z0 = z_start();
    strong_error_sweep(
        net,
        &z0,
        &z0,
        SWEEP_T,
        &SWEEP_NS,
        SWEEP_M,
        seed,
        &CouplingOptions::default(),
    )
    .expect("sweep runs")
}

fn strong_rate(report: &ConvergenceReport, elapsed: Duration) -> Outcome {
    let errs: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("N={} {:.4}", r.n, r.sup_error.mean))
        .collect();
    let failed: usize = report.rows.iter().map(|r| r.failed.len()).sum();
    let Some(fit) = &report.fit else {
        return outcome(false, format!("no fit; errors {}", errs.join(", ")));
    };
    let in_band = (-0.65..=-0.35).contains(&fit.slope);
    let fast = elapsed <= Duration::from_secs(300);
    outcome(
        in_band && fast && failed == 0,
        format!(
            "slope {:.4} (95% CI [{:.4}, {:.4}]) in [-0.65, -0.35]; errors {}; failed replicas {failed}; sweep {:.1}s",
            fit.slope,
            fit.slope_ci.0,
            fit.slope_ci.1,
            errs.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

/// `max ≤ 2 · min` over the sweep, which also holds when every value is 0.
fn within_factor_two(values: &[f64]) -> (bool, f64) {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    let ratio = if max == 0.0 { 1.0 } else { max / min };
    (min >= 0.0 && max <= 2.0 * min, ratio)
}

fn scaling(report: &ConvergenceReport, label: &str) -> (bool, String) {
    let m: Vec<f64> = report.rows.iter().map(|r| r.scaled_martingale.mean).collect();
    let g: Vec<f64> = report.rows.iter().map(|r| r.scaled_gamma.mean).collect();
    let (mok, mr) = within_factor_two(&m);
    let (gok, gr) = within_factor_two(&g);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    (
        mok && gok,
        format!(
            "{label}: sqrtN*E sup|M| = [{}] ratio {mr:.3}; N*E sup|gamma| = [{}] ratio {gr:.3}",
            fmt(&m),
            fmt(&g)
        ),
    )
}

fn martingale_scaling(telegraph: &ConvergenceReport) -> Outcome {
    let (a, da) = scaling(telegraph, "telegraph");
    let burst = sweep(&models::telegraph_burst(), 4242);
    let (b, db) = scaling(&burst, "burst variant");
    outcome(a && b, format!("{da}; {db}"))
}

fn discrete_stationarity() -> Outcome {
    let net = models::telegraph_feedback();
    let z0 = z_start();
    let opts = CouplingOptions::default();
    let ns = [16u64, 256, 4096];
    let props: Vec<_> = ns
        .iter()
        .map(|&n| {
            discrete_equality_probability(&net, &z0, &z0, SWEEP_T, n, 200, 1717, &opts)
                .expect("coupled runs")
        })
        .collect();
    let mut monotone = true;
    for w in props.windows(2) {
        let se = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        monotone &= w[1].estimate >= w[0].estimate - se;
    }
    let last = props.last().unwrap().estimate;
    let fractions: Vec<String> = ns
        .iter()
        .zip(&props)
        .map(|(n, p)| format!("N={n} {:.3}±{:.3}", p.estimate, p.se))
        .collect();

    let plain = models::telegraph();
    let mut exact = true;
    for &n in &ns {
        for seed in 0..5 {
            let p = discrete_equality_probability(&plain, &z0, &z0, SWEEP_T, n, 40, seed, &opts)
                .expect("coupled runs");
            exact &= p.successes == p.trials;
        }
    }
    outcome(
        monotone && last >= 0.9 && exact,
        format!(
            "feedback equality {}; nondecreasing within 1 SE: {monotone}; at N=4096 >= 0.9: {}; \
             x-independent switching always equal (3 N x 5 seeds x 40): {exact}",
            fractions.join(", "),
            last >= 0.9
        ),
    )
}

fn combined_mean_gap(a: &Estimate, b: &Estimate) -> f64 {
    (a.mean - b.mean).abs() / (a.se.powi(2) + b.se.powi(2)).sqrt()
}

fn clt() -> Outcome {
    let net = models::telegraph();
    let z0 = z_start();
    let opts = CltOptions::default();
    let (horizon, n, batches) = (2.0, 4096, 10u64);
    let mut vn = Vec::new();
    let mut v = Vec::new();
    let mut ks_pass = 0;
    let mut pvals = Vec::new();
    let (mut batch_mean_ok, mut batch_var_ok) = (0, 0);
    for b in 0..batches {
        let block = clt_compare(&net, &z0, &z0, horizon, n, 500, 5000, 9000 + b, &opts)
            .expect("clt batch runs");
        let p = block.coordinates[0].ks.p_value;
        pvals.push(format!("{p:.3}"));
        ks_pass += u32::from(p > 0.01);
        let c = &block.coordinates[0];
        batch_mean_ok += u32::from(combined_mean_gap(&c.vn_mean, &c.v_mean) <= 3.0);
        batch_var_ok += u32::from((c.vn_var.mean - c.v_var.mean).abs() <= 0.15 * c.v_var.mean);
        vn.extend(block.vn_samples.iter().map(|s| s[0]));
        v.extend(block.v_samples.iter().map(|s| s[0]));
    }
    let (mn, m) = (mean_se(&vn), mean_se(&v));
    let (varn, var) = (variance_se(&vn), variance_se(&v));
    let gap = combined_mean_gap(&mn, &m);
    let rel_var = (varn.mean - var.mean).abs() / var.mean;

    let birth = models::pure_birth();
    let zb = HybridState::new(vec![0.0], vec![]).unwrap();
    let samples: Vec<f64> = sample_limit_sde(&birth, &zb, &[0.0], horizon, 5000, 31, &opts)
        .expect("sde runs")
        .into_iter()
        .map(|s| s[0])
        .collect();
    let anchor = gof_test(&samples, Law::Normal { mean: 0.0, var: horizon }).unwrap();

    outcome(
        gap <= 3.0 && rel_var <= 0.15 && ks_pass >= 8 && anchor.p_value > 0.01,
        format!(
            "mean V^N {:.4}±{:.4} vs V {:.4}±{:.4} ({gap:.2} SE); var {:.4} vs {:.4} ({:.1}%); \
             KS p per batch [{}] ({ks_pass}/10 > 0.01); pure-birth anchor p = {:.3}; \
             per batch: means {batch_mean_ok}/10, variances {batch_var_ok}/10",
            mn.mean,
            mn.se,
            m.mean,
            m.se,
            varn.mean,
            var.mean,
            100.0 * rel_var,
            pvals.join(", "),
            anchor.p_value
        ),
    )
}

fn filtered(points: &[Point], t0: f64, t1: f64, level: f64) -> Vec<Point> {
    points
        .iter()
        .copied()
        .filter(|p| p.s > t0 && p.s <= t1 && p.u <= level)
        .collect()
}

fn prm_law() -> Outcome {
    let counts: Vec<u64> = (0..10_000u64)
        .map(|seed| PrmStream::new(seed, 0, "r").query(0.0, 2.0, 3.0).len() as u64)
        .collect();
    let chi = poisson_chi_square(&counts, 6.0).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = Vec::new();
    for case in 0..1000 {
        let stream = PrmStream::new(rng.random(), rng.random_range(0..4), "case");
        let mut ts: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..12.0)).collect();
        ts.sort_by(f64::total_cmp);
        let [outer0, t0, t1, outer1] = [ts[0], ts[1], ts[2], ts[3]];
        let mut ls: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..40.0)).collect();
        ls.sort_by(f64::total_cmp);
        let [l1, l2, big] = [ls[0], ls[1], ls[2]];
        let outer = stream.query(outer0, outer1, big);
        let inner = stream.query(t0, t1, l1);
        if inner != filtered(&outer, t0, t1, l1) {
            bad.push(format!("case {case}: nested rectangle"));
        }
        let higher = stream.query(t0, t1, l2);
        if inner != filtered(&higher, t0, t1, l1) || higher.len() < inner.len() {
            bad.push(format!("case {case}: level monotonicity"));
        }
        let mid = rng.random_range(t0..=t1);
        let mut split = stream.query(t0, mid, l2);
        split.extend(stream.query(mid, t1, l2));
        if split != higher {
            bad.push(format!("case {case}: additivity"));
        }
        let mut cursor = stream.cursor();
        let mut walked = Vec::new();
        let mut t = t0;
        while let Some(p) = cursor.next_point(t, l2, t1) {
            walked.push(p);
            t = p.s;
        }
        if walked != higher {
            bad.push(format!("case {case}: cursor"));
        }
    }
    outcome(
        chi.p_value > 0.01 && bad.is_empty(),
        format!(
            "chi-square vs Poisson(6): stat {:.2}, p = {:.3}; mean count {:.4}; \
             1000 randomized cases, {} violations{}",
            chi.statistic,
            chi.p_value,
            counts.iter().sum::<u64>() as f64 / counts.len() as f64,
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    )
}

fn quadratic_variation_law() -> Outcome {
    let net = models::telegraph();
    let z0 = z_start();
    let (n, m) = (1024u64, 500u64);
    let opts = CouplingOptions::default();
    let cont = net.continuous_reactions().to_vec();
    let h2: Vec<f64> = cont
        .iter()
        .map(|&k| (net.reactions()[k].h[0] as f64).powi(2))
        .collect();
    let rows: Vec<(f64, f64, f64)> = (0..m)
        .into_par_iter()
        .map(|r| {
            let dec = coupled_fluctuation(&net, n, &z0, &z0, SWEEP_T, 606, r, &opts)
                .expect("coupled pair runs");
            let qv = quadratic_variation(&dec, 0, 0, SWEEP_T).unwrap();
            let jump: f64 = cont
                .iter()
                .zip(&h2)
                .map(|(&k, w)| w * dec.metrics.jump_rate_integrals[k])
                .sum();
            let limit: f64 = cont
                .iter()
                .zip(&h2)
                .map(|(&k, w)| w * dec.metrics.pdmp_rate_integrals[k])
                .sum();
            (qv, jump, limit)
        })
        .collect();
    let qv = mean_se(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let jump = mean_se(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let limit = mean_se(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    let diff = mean_se(&rows.iter().map(|r| r.0 - r.1).collect::<Vec<_>>());
    let paired = diff.mean.abs() / diff.se;
    let rel = (qv.mean - limit.mean).abs() / limit.mean;
    outcome(
        paired <= 3.0 && rel <= 0.05,
        format!(
            "E[U,U]_T = {:.4}±{:.4}; sum h^2 int lambda(Z^N) = {:.4}±{:.4} (paired gap {paired:.2} SE); \
             limit {:.4}±{:.4} ({:.2}%)",
            qv.mean,
            qv.se,
            jump.mean,
            jump.se,
            limit.mean,
            limit.se,
            100.0 * rel
        ),
    )
}

fn gradient_networks() -> Vec<ReactionNetwork> {
    vec![
        models::telegraph(),
        models::telegraph_feedback(),
        models::telegraph_burst(),
        models::pure_birth(),
        models::telegraph_feedback().truncate_rates(4.0).unwrap(),
        parse_network(
            "species continuous: A, B\nspecies discrete: G\nparam c = 0.3\nparam K = 2\n\
             range G = [0, 5]\n\
             reaction bind class=C h=[-1, +1] e=[0] rate = c*A^2*B + 0.1\n\
             reaction cubic class=C h=[+1, 0] e=[0] rate = 3*K*B^2/4 + A^3/8\n\
             reaction unbind class=C h=[+1, -1] e=[0] rate = B*(G + 1)*(1 + A)/4\n\
             reaction sw class=D h=[0, 0] e=[+1] rate = 0.5*A*B/4*(5 - G)\n",
        )
        .unwrap(),
    ]
}

fn numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_grad: f64 = 0.0;
    for net in gradient_networks() {
        for r in net.reactions() {
            let grad = net.rate_gradient(&r.id).unwrap();
            let k = net.reaction_index(&r.id).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..net.n()).map(|_| rng.random_range(1e-2..=10.0)).collect();
                let y: Vec<i64> = (0..net.d()).map(|_| rng.random_range(0..=1)).collect();
                for (i, g) in grad.iter().enumerate() {
                    let h = 1e-5 * (1.0 + x[i].abs());
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (net.rate_value(k, &xp, &y) - net.rate_value(k, &xm, &y)) / (2.0 * h);
                    let g = g.eval(&x, &y, net.param_values());
                    worst_grad = worst_grad.max((g - fd).abs() / (1.0 + g.abs()));
                }
            }
        }
    }

    let tel = models::telegraph();
    let mut worst_flow: f64 = 0.0;
    for g in [0i64, 1] {
        for x0 in [0.0, 0.7, 5.0] {
            for t in [0.25, 1.0, 3.0, 10.0] {
                let s0 = HybridState::new(vec![x0], vec![g]).unwrap();
                let got = integrate_flow(&tel, &s0, 0.0, t, 1e-10).unwrap().x()[0];
                let eq = 2.0 * g as f64;
                let exact = eq + (x0 - eq) * (-t).exp();
                worst_flow = worst_flow.max((got - exact).abs() / exact.abs().max(1e-300));
            }
        }
    }

    let horizon: f64 = 1.5;
    let exact = [(-horizon).exp(), horizon.sin().exp()];
    let steps: Vec<usize> = (4..=11).map(|k| 1usize << k).collect();
    let errors: Vec<f64> = steps
        .iter()
        .map(|&s| {
            let mut rng = sde_rng(1, 0);
            let p = euler_maruyama(2, 1, &[1.0, 1.0], horizon, s, &mut rng, |t, a, sigma| {
                a.copy_from_slice(&[-1.0, 0.0, 0.0, t.cos()]);
                sigma.iter_mut().for_each(|v| *v = 0.0);
                Ok(())
            })
            .unwrap();
            let v = p.final_value();
            (v[0] - exact[0]).abs().max((v[1] - exact[1]).abs())
        })
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let orders_ok = orders.iter().all(|o| (0.8..=1.2).contains(o));

    outcome(
        worst_grad <= 1e-6 && worst_flow <= 1e-8 && orders_ok,
        format!(
            "gradient vs finite differences {worst_grad:.2e} (<= 1e-6); flow vs closed form {worst_flow:.2e} \
             (<= 1e-8); Euler-Maruyama orders [{}]",
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn run(label: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let o = result.unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "{} {label}: {} [{secs:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn main() {
    let mut all = true;
    let start = Instant::now();
    let telegraph = panic::catch_unwind(|| sweep(&models::telegraph(), 2024)).ok();
    let sweep_time = start.elapsed();
    all &= run("AC1 strong convergence rate", || match &telegraph {
        Some(r) => strong_rate(r, sweep_time),
        None => outcome(false, "sweep failed".into()),
    });
    all &= run("AC2 martingale and remainder scaling", || match &telegraph {
        Some(r) => martingale_scaling(r),
        None => outcome(false, "sweep failed".into()),
    });
    all &= run("AC3 discrete-scale stationarity", discrete_stationarity);
    all &= run("AC4 fluctuation limit", clt);
    all &= run("AC5 Poisson random measure law", prm_law);
    all &= run("AC6 quadratic variation", quadratic_variation_law);
    all &= run("AC7 numerics", numerics);
    if !all {
        std::process::exit(1);
    }
}
