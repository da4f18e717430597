use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use critembed::analysis::{
    build_diagram, fingerprint_grid, group_neurons, prediction_agreement, reduce_network, spectrum, DiagramRun,
    SpectrumReport,
};
use critembed::data_io::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use critembed::embedding::{apply_embed, apply_plan, critical_subspace, EmbeddingPlan};
use critembed::network::{self, HessianMethod, HessianOptions};
use critembed::training::{self, init_params, TrainConfig, Trajectory};
use critembed::{Architecture, Dataset, Loss, NetParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::Common;

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.profile, common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_checkpoint(path: &Path, ckpt: &Checkpoint, check: bool) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(ckpt, path)?;
    if check {
        let back = load_checkpoint(path).with_context(|| format!("re-reading {}", path.display()))?;
        ensure!(back == *ckpt, "checkpoint {} does not read back identically", path.display());
    }
    Ok(())
}

fn check_json(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str::<serde_json::Value>(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    Ok(())
}

fn check_csv(path: &Path, columns: usize) -> Result<()> {
    let text = fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        ensure!(cells.len() == columns, "{} line {}: expected {columns} columns", path.display(), i + 1);
        if i > 0 {
            for c in cells {
                c.parse::<f64>().with_context(|| format!("{} line {}: '{c}' is not a number", path.display(), i + 1))?;
            }
        }
    }
    Ok(())
}

fn load_input(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Training data from the config, checked against the checkpoint's shape.
fn matching_data(cfg: &ExperimentConfig, arch: &Architecture) -> Result<Dataset> {
    let data = cfg.load_data()?;
    ensure!(
        data.input_dim() == arch.input_dim() && data.output_dim() == arch.output_dim(),
        "configured data is {}-in/{}-out but the checkpoint is {arch}; pass a matching --config",
        data.input_dim(),
        data.output_dim()
    );
    Ok(data)
}

fn probe_inputs(data: Option<&Dataset>, dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let bounds = data.map_or_else(|| vec![(-1.0, 1.0); dim], |d| d.input_bounds());
    (0..count)
        .map(|_| bounds.iter().map(|&(a, b)| if b > a { rng.random_range(a..=b) } else { a }).collect())
        .collect()
}

fn max_rel_output(p1: &NetParams, a1: &Architecture, p2: &NetParams, a2: &Architecture, xs: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in xs {
        let y1 = network::predict(p1, a1, x)?;
        let y2 = network::predict(p2, a2, x)?;
        for (u, v) in y1.iter().zip(&y2) {
            worst = worst.max((u - v).abs() / u.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn grad_l1(p: &NetParams, a: &Architecture, data: &Dataset, loss: Loss) -> Result<f64> {
    Ok(network::gradient(p, a, data, loss)?.norm_l1())
}

fn meta_from(record: &training::Record, seed: u64) -> CheckpointMeta {
    CheckpointMeta {
        seed: Some(seed),
        epoch: Some(record.epoch),
        loss: Some(record.loss),
        grad_l1: Some(record.grad_l1),
        grad_linf: Some(record.grad_linf),
        ..CheckpointMeta::default()
    }
}

fn checkpoint(arch: &Architecture, params: NetParams, loss: Loss, meta: CheckpointMeta) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(arch.clone(), params)?;
    c.loss = loss;
    c.meta = meta;
    Ok(c)
}

pub fn train(common: &Common) -> Result<bool> {
    let cfg = resolve(common)?;
    let data = cfg.load_data()?;
    let arch = cfg.architecture()?;
    let loss = cfg.model.loss;
    let init = init_params(&arch, cfg.train.init_variance, cfg.train.seed)?;
    let traj = training::train(&init, &arch, &data, loss, &cfg.train)?;
    let out = &cfg.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let log_path = out.join("trajectory.jsonl");
    let file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    traj.write_jsonl(BufWriter::new(file))?;

    let last = traj.last();
    let final_ckpt = checkpoint(&arch, traj.final_params.clone(), loss, meta_from(last, cfg.train.seed))?;
    write_checkpoint(&out.join("final.json"), &final_ckpt, common.check)?;
    let (best_rec, best_params) = &traj.best;
    let best_ckpt = checkpoint(&arch, best_params.clone(), loss, meta_from(best_rec, cfg.train.seed))?;
    write_checkpoint(&out.join("best.json"), &best_ckpt, common.check)?;
    write_file(&out.join("config.toml"), &cfg.to_toml()?)?;
    let summary = json!({
        "arch": arch.to_string(),
        "epochs": last.epoch,
        "final_loss": last.loss,
        "final_grad_l1": last.grad_l1,
        "min_grad_l1": traj.min_grad_l1(),
        "best_epoch": best_rec.epoch,
        "seed": cfg.train.seed,
    });
    write_json(&out.join("summary.json"), &summary)?;

    if common.check {
        let text = fs::read_to_string(&log_path)?;
        for (i, line) in text.lines().enumerate() {
            serde_json::from_str::<training::Record>(line)
                .with_context(|| format!("{} line {} is not a valid record", log_path.display(), i + 1))?;
        }
        check_json(&out.join("summary.json"))?;
        ExperimentConfig::load(common.profile, Some(&out.join("config.toml")))?;
    }
    println!(
        "final loss {:.6e}, min grad L1 {:.3e} (final {:.3e}) after {} epochs -> {}",
        last.loss,
        traj.min_grad_l1(),
        last.grad_l1,
        last.epoch,
        out.display()
    );
    Ok(true)
}

pub fn embed(common: &Common, input: &Path, plan_text: &str) -> Result<bool> {
    let cfg = resolve(common)?;
    let plan = EmbeddingPlan::parse(plan_text)?;
    ensure!(!plan.is_empty(), "the embedding plan is empty");
    let ckpt = load_input(input)?;
    let (params, arch) = apply_plan(&ckpt.params, &ckpt.arch, &plan)?;
    let data = matching_data(&cfg, &ckpt.arch).ok();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let probes = probe_inputs(data.as_ref(), arch.input_dim(), cfg.analysis.probe_inputs, &mut rng);
    let output_err = max_rel_output(&ckpt.params, &ckpt.arch, &params, &arch, &probes)?;
    let output_tol = common.tol.unwrap_or(cfg.analysis.output_tol);
    let mut report = json!({
        "plan": plan.to_string(),
        "from": ckpt.arch.to_string(),
        "to": arch.to_string(),
        "probe_inputs": probes.len(),
        "output_max_rel_error": output_err,
        "output_tol": output_tol,
    });
    let mut ok = output_err <= output_tol;
    println!("embedded {} -> {} with plan {plan}", ckpt.arch, arch);
    println!("  output preservation: max rel error {output_err:.3e} on {} inputs", probes.len());
    if let Some(data) = &data {
        let r0 = network::risk(&ckpt.params, &ckpt.arch, data, ckpt.loss)?;
        let r1 = network::risk(&params, &arch, data, ckpt.loss)?;
        let g0 = grad_l1(&ckpt.params, &ckpt.arch, data, ckpt.loss)?;
        let g1 = grad_l1(&params, &arch, data, ckpt.loss)?;
        let delta = (r1 - r0).abs() / r0.abs().max(f64::MIN_POSITIVE);
        ok &= delta <= cfg.analysis.risk_tol;
        println!("  risk {r0:.6e} -> {r1:.6e} (rel delta {delta:.3e})");
        println!("  grad L1 {g0:.3e} -> {g1:.3e}");
        report["risk_before"] = json!(r0);
        report["risk_after"] = json!(r1);
        report["risk_rel_delta"] = json!(delta);
        report["grad_l1_before"] = json!(g0);
        report["grad_l1_after"] = json!(g1);
    } else {
        println!("  risk and gradient skipped: configured data does not match the checkpoint");
    }
    report["pass"] = json!(ok);

    let out = common.out.clone().unwrap_or_else(|| sibling(input, "embedded"));
    let mut meta = ckpt.meta.clone();
    meta.extra.insert("plan".into(), plan.to_string());
    meta.extra.insert("embedded_from".into(), input.display().to_string());
    let wide = checkpoint(&arch, params, ckpt.loss, meta)?;
    write_checkpoint(&out, &wide, common.check)?;
    let report_path = out.with_extension("report.json");
    write_json(&report_path, &report)?;
    if common.check {
        check_json(&report_path)?;
    }
    println!("  wrote {}", out.display());
    Ok(ok)
}

/// `dir/stem-<tag>.json` next to `path`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}-{tag}.json"))
}

pub fn hessian(common: &Common, input: &Path, fd: bool, sweep: bool) -> Result<bool> {
    let cfg = resolve(common)?;
    let ckpt = load_input(input)?;
    let data = matching_data(&cfg, &ckpt.arch)?;
    let tol = common.tol.unwrap_or(cfg.analysis.zero_tol);
    let opts = HessianOptions {
        method: if fd { HessianMethod::FiniteDifference } else { HessianMethod::Analytic },
        ..HessianOptions::default()
    };
    let h = network::hessian_with(&ckpt.params, &ckpt.arch, &data, ckpt.loss, &opts)?;
    let report = spectrum(&h, tol)?;
    let csv_path = common.out.clone().unwrap_or_else(|| input.with_extension("eigenvalues.csv"));
    write_file(&csv_path, &report.to_csv())?;
    let json_path = csv_path.with_extension("json");
    let mut doc = json!({
        "checkpoint": input.display().to_string(),
        "arch": ckpt.arch.to_string(),
        "method": if fd { "finite_difference" } else { "analytic" },
        "spectrum": report,
    });
    println!("n_pos {}, n_neg {}, n_zero {} (tol {tol:e}, {} eigenvalues)", report.n_pos, report.n_neg, report.n_zero, report.eigenvalues.len());
    if sweep {
        let rows: Vec<SpectrumReport> = (-14..=-4).map(|e| report.with_tol(10f64.powi(e))).collect();
        for r in &rows {
            println!("  tol {:.0e}: n_zero {}, n_pos {}, n_neg {}", r.tol, r.n_zero, r.n_pos, r.n_neg);
        }
        doc["sweep"] = json!(rows
            .iter()
            .map(|r| json!({"tol": r.tol, "n_zero": r.n_zero, "n_pos": r.n_pos, "n_neg": r.n_neg}))
            .collect::<Vec<_>>());
    }
    write_json(&json_path, &doc)?;
    if common.check {
        check_csv(&csv_path, 2)?;
        check_json(&json_path)?;
    }
    Ok(true)
}

pub fn verify(common: &Common, input: &Path) -> Result<bool> {
    let cfg = resolve(common)?;
    let ckpt = load_input(input)?;
    let (arch, params, loss) = (&ckpt.arch, &ckpt.params, ckpt.loss);
    let data = matching_data(&cfg, arch)?;
    let a = &cfg.analysis;
    let grad_tol = common.tol.unwrap_or(a.grad_tol);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let probes = probe_inputs(Some(&data), arch.input_dim(), a.probe_inputs, &mut rng);
    let r0 = network::risk(params, arch, &data, loss)?;
    let g0 = grad_l1(params, arch, &data, loss)?;
    let critical = g0 <= a.critical_threshold;
    let hidden: Vec<usize> = (1..arch.depth()).collect();
    ensure!(!hidden.is_empty(), "checkpoint {arch} has no hidden layer to embed");

    let (mut worst_out, mut worst_risk, mut worst_grad) = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0usize;
    for _ in 0..a.verify_cases {
        let l = hidden[rng.random_range(0..hidden.len())];
        let s = rng.random_range(0..arch.width(l));
        let alpha = rng.random_range(a.alpha_range.0..=a.alpha_range.1);
        let (p, w) = apply_embed(params, arch, l, s, alpha)?;
        let out_err = max_rel_output(params, arch, &p, &w, &probes)?;
        let r1 = network::risk(&p, &w, &data, loss)?;
        let risk_err = (r1 - r0).abs() / r0.abs().max(f64::MIN_POSITIVE);
        let mut bad = out_err > a.output_tol || risk_err > a.risk_tol;
        if critical {
            let g = grad_l1(&p, &w, &data, loss)?;
            worst_grad = worst_grad.max(g);
            bad |= g > grad_tol;
        }
        worst_out = worst_out.max(out_err);
        worst_risk = worst_risk.max(risk_err);
        failures += usize::from(bad);
    }
    // Two-step critical subspace through the first hidden layer.
    let mut subspace_worst = None;
    if critical {
        let steps = [(1, rng.random_range(0..arch.width(1))), (1, rng.random_range(0..arch.width(1) + 1))];
        let sub = critical_subspace(params, arch, &steps)?;
        let mut worst: f64 = 0.0;
        for _ in 0..a.verify_cases.min(25) {
            let alphas: Vec<f64> = (0..2).map(|_| rng.random_range(a.alpha_range.0..=a.alpha_range.1)).collect();
            worst = worst.max(grad_l1(&sub.point(&alphas)?, &sub.arch, &data, loss)?);
        }
        failures += usize::from(worst > grad_tol);
        subspace_worst = Some(worst);
    }
    let pass = failures == 0;
    let report = json!({
        "checkpoint": input.display().to_string(),
        "cases": a.verify_cases,
        "grad_l1": g0,
        "critical": critical,
        "max_output_rel_error": worst_out,
        "max_risk_rel_delta": worst_risk,
        "max_grad_l1_after": if critical { json!(worst_grad) } else { json!(null) },
        "subspace_max_grad_l1": subspace_worst,
        "tolerances": {"output": a.output_tol, "risk": a.risk_tol, "grad": grad_tol},
        "failures": failures,
        "pass": pass,
    });
    println!(
        "{}: {} cases, output {worst_out:.2e}, risk {worst_risk:.2e}{}",
        if pass { "PASS" } else { "FAIL" },
        a.verify_cases,
        if critical {
            format!(", grad after embedding {worst_grad:.2e}, subspace {:.2e} (bound {grad_tol:e})", subspace_worst.unwrap_or(0.0))
        } else {
            format!(", criticality skipped (grad L1 {g0:.2e} > {:e})", a.critical_threshold)
        }
    );
    if let Some(out) = &common.out {
        write_json(out, &report)?;
        if common.check {
            check_json(out)?;
        }
    }
    Ok(pass)
}

fn with_hidden_width(arch: &Architecture, m: usize) -> Result<Architecture> {
    let mut widths = arch.widths().to_vec();
    let n = widths.len();
    for w in &mut widths[1..n - 1] {
        *w = m;
    }
    Ok(Architecture::new(widths, arch.activation())?)
}

pub fn diagram(common: &Common) -> Result<bool> {
    let cfg = resolve(common)?;
    let data = cfg.load_data()?;
    let base = cfg.architecture()?;
    let d = &cfg.diagram;
    let loss = cfg.model.loss;
    let mut runs = Vec::new();
    let mut diverged = 0;
    for &m in &d.widths {
        let arch = with_hidden_width(&base, m)?;
        let train_cfg = TrainConfig {
            init_variance: (m as f64).powi(-d.init_power),
            keep_snapshots: true,
            stop_grad_below: d.stop_grad_below,
            ..cfg.train.clone()
        };
        for k in 0..d.trials as u64 {
            let seed = cfg.train.seed * 1000 + m as u64 * 100 + k;
            let init = init_params(&arch, train_cfg.init_variance, seed)?;
            match training::train(&init, &arch, &data, loss, &train_cfg) {
                Ok(trajectory) => runs.push(DiagramRun { arch: arch.clone(), trajectory }),
                Err(critembed::Error::Diverged { .. }) => diverged += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let entries = build_diagram(&runs, &data, loss, &d.options)?;
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let mut table = String::from("cluster,loss,source_width,degeneracy,n_neg,n_pos,runs,candidates\n");
    let grid = fingerprint_grid(&data, d.options.grid_points, d.options.grid_seed);
    println!("{} runs ({diverged} diverged), {} clusters", runs.len(), entries.len());
    for (i, e) in entries.iter().enumerate() {
        writeln!(
            table,
            "{i},{:.17e},{},{},{},{},{},{}",
            e.loss, e.source_width, e.degeneracy, e.n_neg, e.n_pos, e.runs, e.candidates
        )?;
        println!(
            "  cluster {i}: loss {:.9e}, width {}, corank {} (target width {}), n_neg {}, runs {}",
            e.loss, e.source_width, e.degeneracy, d.options.target_width, e.n_neg, e.runs
        );
        if let Some((p, a)) = &e.representative {
            let din = a.input_dim();
            let dout = a.output_dim();
            let mut csv = (0..din).map(|j| format!("x{j}")).chain((0..dout).map(|j| format!("y{j}"))).collect::<Vec<_>>().join(",");
            csv.push('\n');
            for x in &grid {
                let y = network::predict(p, a, x)?;
                let row: Vec<String> = x.iter().chain(&y).map(|v| format!("{v:.17e}")).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            let path = out.join(format!("cluster_{i}.csv"));
            write_file(&path, &csv)?;
            if common.check {
                check_csv(&path, din + dout)?;
            }
        }
    }
    let table_path = out.join("diagram.csv");
    write_file(&table_path, &table)?;
    write_file(&out.join("config.toml"), &cfg.to_toml()?)?;
    if common.check {
        check_csv(&table_path, 8)?;
    }
    Ok(true)
}

pub fn reduce(
    common: &Common,
    input: &Path,
    sim: Option<f64>,
    amp: Option<f64>,
    retrain_epochs: Option<usize>,
) -> Result<bool> {
    let cfg = resolve(common)?;
    let ckpt = load_input(input)?;
    let data = matching_data(&cfg, &ckpt.arch)?;
    let test = cfg.load_test_data()?;
    let sim = sim.unwrap_or(cfg.analysis.sim_threshold);
    let amp = amp.unwrap_or(cfg.analysis.amp_threshold_rel);
    let layer = cfg.analysis.reduce_layer;
    let groups = group_neurons(&ckpt.params, &ckpt.arch, layer, sim, amp)?;
    ensure!(!groups.is_empty(), "no neuron of layer {layer} passed the amplitude threshold");
    let (mut params, arch) = reduce_network(&ckpt.params, &ckpt.arch, layer, &groups)?;
    let mut retrained: Option<Trajectory> = None;
    if let Some(epochs) = retrain_epochs.filter(|&e| e > 0) {
        let tc = TrainConfig { epochs, keep_snapshots: false, ..cfg.train.clone() };
        let traj = training::train(&params, &arch, &data, ckpt.loss, &tc)?;
        params = traj.final_params.clone();
        retrained = Some(traj);
    }
    let eval = test.as_ref().unwrap_or(&data);
    // Arg-max agreement only means something with several output classes.
    let agreement = if arch.output_dim() > 1 {
        Some(prediction_agreement(&ckpt.params, &ckpt.arch, &params, &arch, eval)?)
    } else {
        None
    };
    let xs: Vec<Vec<f64>> = (0..eval.len()).map(|i| eval.input(i).to_vec()).collect();
    let output_gap = max_rel_output(&ckpt.params, &ckpt.arch, &params, &arch, &xs)?;
    let sizes: Vec<usize> = groups.iter().map(|g| g.members.len()).collect();
    println!(
        "{} -> {}: {} groups (sizes {:?}), {}max rel output gap {output_gap:.3e} on {} {} samples",
        ckpt.arch,
        arch,
        groups.len(),
        sizes,
        agreement.as_ref().map_or(String::new(), |a| format!("agreement {:.4}, ", a.fraction)),
        eval.len(),
        if test.is_some() { "test" } else { "training" }
    );
    let out = common.out.clone().unwrap_or_else(|| sibling(input, "reduced"));
    let mut meta = CheckpointMeta::default();
    meta.extra.insert("reduced_from".into(), input.display().to_string());
    meta.extra.insert("sim_threshold".into(), sim.to_string());
    meta.extra.insert("amp_threshold_rel".into(), amp.to_string());
    write_checkpoint(&out, &checkpoint(&arch, params, ckpt.loss, meta)?, common.check)?;
    let report = json!({
        "from": ckpt.arch.to_string(),
        "to": arch.to_string(),
        "layer": layer,
        "sim_threshold": sim,
        "amp_threshold_rel": amp,
        "groups": groups.iter().map(|g| json!({
            "members": g.members, "representative": g.representative, "min_similarity": g.min_similarity
        })).collect::<Vec<_>>(),
        "agreement": agreement.as_ref().map(|a| a.fraction),
        "confusion": agreement.as_ref().map(|a| &a.confusion),
        "evaluated_on": if test.is_some() { "test" } else { "training" },
        "max_rel_output_gap": output_gap,
        "retrain_final_loss": retrained.as_ref().map(|t| t.last().loss),
    });
    let report_path = out.with_extension("report.json");
    write_json(&report_path, &report)?;
    if common.check {
        check_json(&report_path)?;
    }
    Ok(true)
}

fn dataset_csv(data: &Dataset) -> String {
    let (d, dp) = (data.input_dim(), data.output_dim());
    let mut s = (0..d).map(|j| format!("x{j}")).chain((0..dp).map(|j| format!("y{j}"))).collect::<Vec<_>>().join(",");
    s.push('\n');
    for i in 0..data.len() {
        let row: Vec<String> = data.input(i).iter().chain(data.target(i)).map(|v| format!("{v:.17e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn data_gen(common: &Common) -> Result<bool> {
    let cfg = resolve(common)?;
    let data = cfg.load_data()?;
    let csv = dataset_csv(&data);
    match &common.out {
        Some(path) => {
            write_file(path, &csv)?;
            if common.check {
                check_csv(path, data.input_dim() + data.output_dim())?;
            }
            println!("wrote {} samples ({} in, {} out) to {}", data.len(), data.input_dim(), data.output_dim(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(true)
}

pub fn data_inspect(_common: &Common, path: &Path) -> Result<bool> {
    let mut head = [0u8; 4];
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = file.read(&mut head)?;
    if n == 4 && head[0] == 0 && head[1] == 0 && head[2] == 8 && (head[3] == 1 || head[3] == 3) {
        let mut dims = vec![0u8; 4 * head[3] as usize];
        file.read_exact(&mut dims).context("truncated IDX header")?;
        let dims: Vec<u32> = dims.chunks(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]])).collect();
        let kind = if head[3] == 3 { "images" } else { "labels" };
        println!("IDX {kind}: dimensions {dims:?}");
        return Ok(true);
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext == "json" {
        let ckpt = load_input(path)?;
        let norms: Vec<String> = ckpt
            .params
            .layers()
            .iter()
            .map(|l| format!("{:.3e}", l.weights.frobenius_norm()))
            .collect();
        println!(
            "checkpoint {}: {} parameters, loss {}, layer weight norms [{}], metadata {}",
            ckpt.arch,
            ckpt.arch.param_count(),
            ckpt.loss.name(),
            norms.join(", "),
            serde_json::to_string(&ckpt.meta)?
        );
        return Ok(true);
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows = 0usize;
    let mut cols = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c = line.split(',').count();
        if cols.is_some_and(|k| k != c) {
            bail!("{}: row {} has {c} columns, expected {}", path.display(), rows + 1, cols.unwrap_or(0));
        }
        cols = Some(c);
        rows += 1;
    }
    println!("CSV: {rows} rows (including header), {} columns", cols.unwrap_or(0));
    Ok(true)
}
