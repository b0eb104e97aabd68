//! Acceptance gate. Each criterion prints one `PASS` or `FAIL` line with the
//! measured figures; the process exits nonzero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use fedgls::config::FederationConfig;
use fedgls::experiment::{metrics_jsonl, run_experiment, write_metrics, ExperimentResult};
use fedgls::federation::{fedavg_aggregate, Federation, GlobalState, Method, Payload, RoundMetrics};
use fedgls::graph::{louvain_partition, modularity, SbmSystem};
use fedgls::losses::{contrastive_loss, cross_entropy_loss, kd_loss};
use fedgls::models::{
    adjacency_process, normalize_degrees, sparsify_top_k, symmetrize, Head, LearnerConfig, LearnerVariant, Parameters,
};
use fedgls::numerics::{Activation, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn gradient_correctness() -> Verdict {
    const FIXTURES: u64 = 24;
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, reports: Vec<fedgls::numerics::GradCheckReport>| {
        let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let failed = reports.iter().filter(|r| !r.passed()).count();
        ok &= failed == 0;
        lines.push(format!("{name}: {} fixtures, max rel err {worst:.2e}, {failed} failing", reports.len()));
    };
    record(
        "structure",
        (0..FIXTURES)
            .map(|s| {
                let variant = if s % 2 == 0 { LearnerVariant::Attentive } else { LearnerVariant::Mlp };
                StructureFixture::sample(1000 + s, variant).check()
            })
            .collect(),
    );
    record("classification", (0..FIXTURES).map(|s| ClassificationFixture::sample(2000 + s).check()).collect());
    record("distillation", (0..FIXTURES).map(|s| DistillationFixture::sample(3000 + s).check()).collect());
    let elapsed = start.elapsed();
    let detail = format!("{}; {:.1}s", lines.join("; "), elapsed.as_secs_f64());
    if ok && elapsed < Duration::from_secs(30) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn adjacency_processor() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_asym: f64 = 0.0;
    let (mut rows, mut wide_rows, mut wide_matrices, mut widest) = (0, 0, 0, 0.0f64);
    for trial in 0..200 {
        let n = rng.random_range(2..=12);
        let k = rng.random_range(1..=n);
        let s = uniform(n, n, -1.0, 1.0, &mut rng);
        let out = adjacency_process(&s, &LearnerConfig { k, ..LearnerConfig::default() }).map_err(|e| e.to_string())?.s;
        let mut wide = false;
        for i in 0..n {
            let nnz = out.row(i).iter().filter(|&&v| v != 0.0).count();
            rows += 1;
            if nnz > 2 * k {
                wide_rows += 1;
                wide = true;
                widest = widest.max(nnz as f64 / k as f64);
            }
            for j in 0..n {
                if out[(i, j)] < 0.0 {
                    return Err(format!("matrix {trial}: negative entry at ({i}, {j})"));
                }
                worst_asym = worst_asym.max((out[(i, j)] - out[(j, i)]).abs());
            }
        }
        wide_matrices += usize::from(wide);
    }
    if worst_asym > 1e-12 {
        return Err(format!("max asymmetry {worst_asym:e}"));
    }
    // every row ranks column 0 first, so after symmetrization row 0 is dense
    let hub = Matrix::from_rows(&[[1.0, 0.1, 0.1, 0.1], [1.0, 0.2, 0.1, 0.1], [1.0, 0.1, 0.2, 0.1], [1.0, 0.1, 0.1, 0.2]]);
    let hub_out = adjacency_process(&hub, &LearnerConfig { k: 1, ..LearnerConfig::default() }).map_err(|e| e.to_string())?.s;
    let hub_nnz = hub_out.row(0).iter().filter(|&&v| v != 0.0).count();
    let (sp, _) = sparsify_top_k(&Matrix::from_rows(&[[0.9, 0.1, 0.5]]), 2);
    let sym = symmetrize(&Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]), Activation::Identity);
    let (norm, _) = normalize_degrees(&Matrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]));
    let stages = [
        ("top-k", sp == Matrix::from_rows(&[[0.9, 0.0, 0.5]])),
        ("symmetrize", sym == Matrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]])),
        ("normalize", norm == Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])),
    ];
    if let Some((name, _)) = stages.iter().find(|(_, ok)| !ok) {
        return Err(format!("{name} stage example differs"));
    }
    let detail = format!(
        "200 random matrices symmetric (max asymmetry {worst_asym:.1e}) and nonnegative; 3 stage examples exact; \
         rows over 2k nonzeros: {wide_rows}/{rows} in {wide_matrices} matrices (worst {widest:.1}k); \
         4-node hub with k=1 gives row 0 {hub_nnz} nonzeros"
    );
    if wide_rows > 0 {
        Err(detail)
    } else {
        Ok(detail)
    }
}

fn loss_oracles() -> Verdict {
    let e = Matrix::identity(2);
    let (cl, _) = contrastive_loss(&e, &e, 1.0).map_err(|e| e.to_string())?;
    let cl_err = (cl - (2f64.ln() - 1.0)).abs();

    let z = Matrix::from_rows(&[[(0.7f64 / 0.3).ln(), 0.0]]);
    let h = Matrix::zeros(1, 2);
    let head = Head { w: Matrix::identity(2), b: Matrix::zeros(1, 2) };
    let (kd, _) = kd_loss(&z, &h, &head).map_err(|e| e.to_string())?;
    let kd_err = (kd - (0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln())).abs();

    let mut ce_err: f64 = 0.0;
    for p in 2..=10 {
        let labels: Vec<usize> = (0..5).map(|i| i % p).collect();
        let (ce, _) = cross_entropy_loss(&Matrix::zeros(5, p), &labels, &[0, 1, 2, 3, 4]).map_err(|e| e.to_string())?;
        ce_err = ce_err.max((ce - (p as f64).ln()).abs());
    }
    let detail = format!("contrastive err {cl_err:.1e}, kd err {kd_err:.1e}, ce err {ce_err:.1e}");
    if cl_err <= 1e-12 && kd_err <= 1e-12 && ce_err <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_system(clients: usize, nodes: usize) -> SbmSystem {
    SbmSystem { clients, nodes_per_client: nodes, feature_dim: 8, p_in: 0.2, ..SbmSystem::default() }
}

fn fedavg_algebra() -> Verdict {
    let h = |w: f64, b: f64| Head { w: Matrix::filled(1, 1, w), b: Matrix::filled(1, 1, b) };
    let agg = |p: &[Head], w: &[f64]| fedavg_aggregate(p, w).map_err(|e| e.to_string());

    let odd = h(0.1 + 0.2, 1.0 / 3.0);
    if agg(&[odd.clone(), odd.clone(), odd.clone()], &[3.0, 7.0, 11.0])? != odd {
        return Err("identical inputs changed".into());
    }
    if agg(&[h(1.0, 1.0), h(3.0, 3.0)], &[1.0, 3.0])?.w[(0, 0)] != 2.5 {
        return Err("(1, 3) weighted mean of 1.0 and 3.0 is not 2.5".into());
    }
    // sampled pair with n = (2, 6) out of a larger federation
    if agg(&[h(1.0, 0.0), h(5.0, 0.0)], &[2.0, 6.0])?.w[(0, 0)] != 4.0 {
        return Err("sampled-set renormalization".into());
    }
    let p = [h(0.5, -1.25), h(2.0, 0.75), h(-3.5, 4.0)];
    let q = [h(1.0, 0.5), h(-0.25, 2.0), h(6.0, -0.5)];
    let w = [1.0, 2.0, 1.0];
    for (a, b) in [(2.0, -0.5), (0.25, 4.0), (-1.0, 1.0)] {
        let combo: Vec<Head> = p.iter().zip(&q).map(|(x, y)| h(a * x.w[(0, 0)] + b * y.w[(0, 0)], a * x.b[(0, 0)] + b * y.b[(0, 0)])).collect();
        let (lhs, ap, aq) = (agg(&combo, &w)?, agg(&p, &w)?, agg(&q, &w)?);
        if lhs.flatten() != vec![a * ap.w[(0, 0)] + b * aq.w[(0, 0)], a * ap.b[(0, 0)] + b * aq.b[(0, 0)]] {
            return Err(format!("linearity fails for a={a}, b={b}"));
        }
    }

    let cfg = FederationConfig { k: 5, local_epochs: 2, sbm: Some(small_system(4, 40)), graphless_ids: Some(vec![1, 3]), ..Default::default() };
    let source = fedgls::experiment::Source::load(&cfg).map_err(|e| e.to_string())?;
    let data = source.clients(&cfg, 5).map_err(|e| e.to_string())?;
    let mut fed = Federation::new(Method::FedGls, &cfg, data, 5).map_err(|e| e.to_string())?;
    let GlobalState::Gls { theta, phi } = fed.global().clone() else { return Err("unexpected server state".into()) };
    let shared = theta.num_params() + phi.num_params();
    let uploads = fed.collect_uploads(&[0, 1, 2, 3]).map_err(|e| e.to_string())?;
    for u in &uploads {
        let Payload::Gls { theta, phi } = &u.payload else { return Err("fedgls upload is not (θ, φ)".into()) };
        if theta.num_params() + phi.num_params() != shared {
            return Err(format!("client {} uploaded an unexpected parameter count", u.client));
        }
        let json = serde_json::to_value(u).map_err(|e| e.to_string())?;
        let text = json.to_string();
        if text.contains("omega") || text.contains("layers") || json["payload"]["Gls"].as_object().map(|o| o.len()) != Some(2) {
            return Err(format!("client {} upload carries graph learner state", u.client));
        }
    }
    if !(fed.clients()[1].has_graph_learner() && fed.clients()[3].has_graph_learner()) {
        return Err("graphless clients lost their learner".into());
    }
    Ok(format!("fixed point, 2.5 example, sampled-set weights, 3 linearity checks exact; {} uploads carry only θ and φ", uploads.len()))
}

fn determinism() -> Verdict {
    let cfg = FederationConfig {
        method: "all".into(),
        rounds: 8,
        repeats: 2,
        k: 5,
        local_epochs: 2,
        sbm: Some(small_system(4, 45)),
        ..Default::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |cfg: &FederationConfig, name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let res = run_experiment(cfg).map_err(|e| e.to_string())?;
        write_metrics(&res, cfg, &out).map_err(|e| e.to_string())?;
        fs::read(out.join("metrics.jsonl")).map_err(|e| e.to_string())
    };
    let a = run(&cfg, "a")?;
    let b = run(&cfg, "b")?;
    let serial = run(&FederationConfig { parallel: false, ..cfg.clone() }, "serial")?;
    if a != b {
        return Err("two parallel runs differ".into());
    }
    if a != serial {
        return Err("serial and parallel runs differ".into());
    }
    Ok(format!("{} bytes of metrics.jsonl identical across 2 parallel runs and 1 serial run", a.len()))
}

fn louvain_oracle() -> Verdict {
    let mut optimal = 0;
    let mut local = Vec::new();
    for (name, g) in louvain_fixtures() {
        let p = louvain_partition(&g, 0).map_err(|e| format!("{name}: {e}"))?;
        let q = modularity_oracle(&g, &p.assignment);
        if (q - modularity(&g, &p)).abs() > 1e-12 {
            return Err(format!("{name}: library modularity disagrees with the oracle"));
        }
        let (best, _) = brute_force_max_modularity(&g);
        if q >= best - 1e-9 {
            optimal += 1;
        } else if is_single_move_local_optimum(&g, &p, 1e-12) {
            local.push(format!("{name} (Q={q:.4} vs max {best:.4})"));
        } else {
            return Err(format!("{name}: Q={q:.6} below max {best:.6} and not a local optimum"));
        }
    }
    let (_, triangles) = &louvain_fixtures()[0];
    let p = louvain_partition(triangles, 0).map_err(|e| e.to_string())?;
    if p.num_communities != 2 || p.assignment != [0, 0, 0, 1, 1, 1] {
        return Err(format!("two triangles gave {:?}", p.assignment));
    }
    let locals = if local.is_empty() { "none".to_string() } else { local.join(", ") };
    Ok(format!("{optimal} fixtures at the brute-force optimum; local optima: {locals}; two triangles -> 2 communities"))
}

fn ordering_run() -> Result<(ExperimentResult, Duration), String> {
    let cfg = FederationConfig {
        method: "fedgls,fed-mlp,fed-gnnk".into(),
        rounds: 100,
        repeats: 5,
        graphless_ratio: 0.5,
        sbm: Some(SbmSystem { clients: 4, nodes_per_client: 150, p_in: 0.1, p_out: 0.01, ..SbmSystem::default() }),
        ..Default::default()
    };
    let start = Instant::now();
    let res = run_experiment(&cfg).map_err(|e| e.to_string())?;
    Ok((res, start.elapsed()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ordering(run: &Result<(ExperimentResult, Duration), String>) -> Verdict {
    let (res, elapsed) = run.as_ref().map_err(Clone::clone)?;
    let gls = mean(&res.final_test_acc(Method::FedGls));
    let mlp = mean(&res.final_test_acc(Method::FedMlp));
    let gnnk = mean(&res.final_test_acc(Method::FedGnnK));
    let detail = format!(
        "fedgls {gls:.4}, fed-mlp {mlp:.4}, fed-gnnk {gnnk:.4} over 5 seeds; {:.1}s",
        elapsed.as_secs_f64()
    );
    let ok = (0.6..=0.8).contains(&mlp) && gls > mlp && gls >= gnnk - 0.01 && *elapsed < Duration::from_secs(300);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn convergence(run: &Result<(ExperimentResult, Duration), String>) -> Verdict {
    let (res, _) = run.as_ref().map_err(Clone::clone)?;
    let loss = |repeat: usize, round: usize| {
        res.rounds
            .iter()
            .find(|m| m.method == Method::FedGls && m.repeat == repeat && m.round == round)
            .map(|m| m.train_loss)
    };
    let mut parts = Vec::new();
    for r in 0..5 {
        let (Some(l5), Some(l50)) = (loss(r, 5), loss(r, 50)) else { return Err(format!("seed {r}: missing rounds")) };
        parts.push(format!("{l5:.3}->{l50:.3}"));
        if !(l50 < l5) {
            return Err(format!("seed {r}: round-50 loss {l50} not below round-5 loss {l5}"));
        }
    }
    Ok(format!("round 5 -> round 50 train loss per seed: {}", parts.join(", ")))
}

fn zero_rate_fixed_point() -> Verdict {
    let cfg = FederationConfig {
        method: "all".into(),
        rounds: 10,
        repeats: 1,
        k: 5,
        lr_gnn: 0.0,
        lr_encoder: 0.0,
        lr_learner: 0.0,
        sbm: Some(small_system(4, 45)),
        ..Default::default()
    };
    let res = run_experiment(&cfg).map_err(|e| e.to_string())?;
    for method in Method::ALL {
        let rows: Vec<&RoundMetrics> = res.rounds.iter().filter(|m| m.method == method).collect();
        if rows.len() != 10 {
            return Err(format!("{method}: {} rounds", rows.len()));
        }
        let strip = |m: &RoundMetrics| metrics_jsonl(&[RoundMetrics { round: 0, wall_time_s: 0.0, ..m.clone() }]);
        let first = strip(rows[0]);
        if let Some(bad) = rows.iter().find(|m| strip(m) != first) {
            return Err(format!("{method}: round {} differs from round 1", bad.round));
        }
    }
    Ok("7 methods x 10 rounds with all rates 0: metrics identical every round".into())
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Verdict| {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    };
    report("gradient correctness", &mut gradient_correctness);
    report("adjacency processor", &mut adjacency_processor);
    report("closed-form loss oracles", &mut loss_oracles);
    report("fedavg algebra and omega locality", &mut fedavg_algebra);
    report("determinism", &mut determinism);
    report("louvain oracle", &mut louvain_oracle);
    let run = ordering_run();
    report("sbm accuracy ordering", &mut || ordering(&run));
    report("fedgls convergence", &mut || convergence(&run));
    report("zero-rate fixed point", &mut zero_rate_fixed_point);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
