use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use growlab_core::costmodel::{
    energy_and_carbon, plan_schedule, split_cost_by_language, FlopsEstimate, Registry, StageRate, ZETTA,
};
use growlab_core::evalgen;
use growlab_core::growth::{grow_checkpoint, verify_function_preservation};
use growlab_core::model::ModelConfig;
use growlab_core::stability::{coordinate_check, fit_loss_scaling, hp_grid_search, predict_loss, ProbeSettings};
use growlab_core::tokenizer::encode_bytes;
use growlab_core::trainer::{
    curve_csv, load_checkpoint, run_growth_plan, save_checkpoint, synthetic, train_stage, write_token_file, DataSource,
    GrowthPlan, Manifest, ManifestEntry, MixSpec, Mixer, TrainOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::CliError;

pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.expect("checked by dispatch")
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(rt)?;
        let p = self.out.join(name);
        fs::write(&p, text).map_err(rt)?;
        Ok(p)
    }

    fn registry(&self) -> Result<Registry, CliError> {
        match &self.config.registry {
            Some(p) => Registry::load(p).map_err(|e| CliError::Config(format!("registry: {e}"))),
            None => Ok(Registry::builtin()),
        }
    }

    fn model(&self) -> Result<&ModelConfig, CliError> {
        let m = self.config.model.as_ref().ok_or_else(|| missing("model"))?;
        m.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        Ok(m)
    }
}

pub fn rt(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("missing required key `{key}`"))
}

fn builtin_source(name: &str) -> Option<Arc<dyn DataSource>> {
    match name {
        "copy" => Some(Arc::new(synthetic::CopyTask::default())),
        "pattern_mining" => Some(Arc::new(synthetic::TaskText::pattern_mining())),
        "teacher" => Some(Arc::new(synthetic::TeacherTask)),
        _ => None,
    }
}

fn mixer(ctx: &Ctx) -> Result<Mixer, CliError> {
    let data = &ctx.config.data;
    let mut sources: Vec<(String, Arc<dyn DataSource>)> = Vec::new();
    let mut spec = MixSpec::new(data.mix.iter().map(|(k, v)| (k.clone(), *v)));
    if let Some(path) = &data.manifest {
        let manifest = Manifest::load(path).map_err(|e| CliError::Config(format!("data.manifest: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        sources.extend(manifest.open(base).map_err(rt)?);
        if spec.weights.is_empty() {
            spec = manifest.mix_spec();
        }
    }
    if spec.weights.is_empty() {
        spec = MixSpec::new([("copy", 1.0)]);
    }
    for (name, _) in &spec.weights {
        if !sources.iter().any(|(n, _)| n == name) {
            let s = builtin_source(name).ok_or_else(|| CliError::Config(format!("data.mix: unknown stream `{name}`")))?;
            sources.push((name.clone(), s));
        }
    }
    Mixer::new(&spec, sources).map_err(|e| CliError::Config(format!("data.mix: {e}")))
}

pub fn train(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.config;
    if cfg.stages.is_empty() {
        return Err(missing("stages"));
    }
    for (i, s) in cfg.stages.iter().enumerate() {
        s.validate().map_err(|e| CliError::Config(format!("stages[{i}]: {e}")))?;
    }
    cfg.optimizer.validate().map_err(|e| CliError::Config(format!("optimizer: {e}")))?;
    let data = mixer(ctx)?;
    let options = TrainOptions {
        seed: ctx.seed(),
        log_every: cfg.train.log_every,
        max_steps: cfg.train.max_steps,
        checkpoint_every: cfg.train.checkpoint_every,
        checkpoint_dir: cfg.train.checkpoint_every.map(|_| ctx.out.join("checkpoints")),
    };
    if let Some(dir) = &options.checkpoint_dir {
        fs::create_dir_all(dir).map_err(rt)?;
    }
    let mut report = String::new();
    let (ckpt, curve) = if cfg.stages.len() == 1 {
        let start = match &cfg.train.resume {
            Some(p) => Some(load_checkpoint(p).map_err(rt)?),
            None => None,
        };
        let out = train_stage(&cfg.stages[0], start, &data, &cfg.optimizer, &options).map_err(rt)?;
        (out.checkpoint, out.curve)
    } else {
        if cfg.train.resume.is_some() {
            return Err(CliError::Config("train.resume applies to single-stage runs only".into()));
        }
        let mut plan = GrowthPlan::new(cfg.stages.clone());
        plan.preservation_probes = cfg.train.preservation_probes;
        plan.preservation_tol = cfg.train.preservation_tol;
        plan.validate().map_err(|e| CliError::Config(format!("stages: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed() ^ 0x6865_6c64);
        let heldout =
            data.batch(&mut rng, cfg.train.heldout_batch_size, cfg.stages[0].model.context_len).map_err(rt)?;
        let out = run_growth_plan(&plan, &data, &cfg.optimizer, &options, Some(&heldout)).map_err(rt)?;
        for r in &out.reports {
            let _ = write!(report, "stage {} d={} l={} steps={} tokens={}", r.stage, r.config.hidden_dim, r.config.n_layers, r.steps, r.tokens);
            if let Some(p) = &r.preservation {
                let _ = write!(report, " max|dlogit|={:.3e}", p.max_abs_diff);
            }
            if let (Some(b), Some(a)) = (r.heldout_before, r.heldout_after) {
                let _ = write!(report, " heldout {b:.5} -> {a:.5}");
            }
            report.push('\n');
        }
        (out.checkpoint, out.curve)
    };
    let path = ctx.out.join("final.ckpt");
    fs::create_dir_all(&ctx.out).map_err(rt)?;
    save_checkpoint(&ckpt, &path).map_err(rt)?;
    ctx.write("curve.csv", &curve_csv(&curve))?;
    let checksum = ckpt.checksum().map_err(rt)?;
    let last = curve.last().map_or(f64::NAN, |p| p.loss);
    let _ = writeln!(report, "steps {} tokens {} final loss {last:.5}\nchecksum {checksum}", ckpt.step, ckpt.total_tokens);
    ctx.write("train.txt", &report)?;
    print!("{report}");
    Ok(())
}

pub fn grow(ctx: &Ctx) -> Result<(), CliError> {
    let g = ctx.config.grow.as_ref().ok_or_else(|| missing("grow"))?;
    g.target.validate().map_err(|e| CliError::Config(format!("grow.target: {e}")))?;
    let before = load_checkpoint(&g.checkpoint).map_err(rt)?;
    let after = grow_checkpoint(&before, &g.target, g.anneal_tokens).map_err(rt)?;
    let check =
        verify_function_preservation(&before, &after, g.probes, g.tol, before.derived_seed(0x7072_6f62)).map_err(rt)?;
    if !check.pass {
        return Err(CliError::Runtime(format!("growth is not function preserving: max |dlogit| {:e}", check.max_abs_diff)));
    }
    fs::create_dir_all(&ctx.out).map_err(rt)?;
    save_checkpoint(&after, &ctx.out.join("grown.ckpt")).map_err(rt)?;
    let text = format!(
        "grew d {} -> {}, layers {} -> {}\nmax |dlogit| {:.3e} over {} probes\nchecksum {}\n",
        before.config.hidden_dim,
        after.config.hidden_dim,
        before.config.n_layers,
        after.config.n_layers,
        check.max_abs_diff,
        check.n_probes,
        after.checksum().map_err(rt)?
    );
    ctx.write("grow.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn verify_growth(ctx: &Ctx) -> Result<(), CliError> {
    let v = ctx.config.verify.as_ref().ok_or_else(|| missing("verify"))?;
    let before = load_checkpoint(&v.before).map_err(rt)?;
    let after = load_checkpoint(&v.after).map_err(rt)?;
    let r = verify_function_preservation(&before, &after, v.probes, v.tol, ctx.seed()).map_err(rt)?;
    let text = format!(
        "{} max |dlogit| {:.3e} (tol {:.1e}, {} probes)\n",
        if r.pass { "PASS" } else { "FAIL" },
        r.max_abs_diff,
        r.tol,
        r.n_probes
    );
    ctx.write("verify.txt", &text)?;
    print!("{text}");
    if r.pass {
        Ok(())
    } else {
        Err(CliError::Runtime("function preservation check failed".into()))
    }
}

pub fn plan(ctx: &Ctx) -> Result<(), CliError> {
    let s = ctx.config.schedule.as_ref().ok_or_else(|| missing("schedule"))?;
    let stages: Vec<StageRate> = if !s.stages.is_empty() {
        s.stages.iter().map(|t| StageRate { tokens: t.tokens, tokens_per_day: t.tokens / t.days }).collect()
    } else {
        let name = s.name.as_deref().ok_or_else(|| missing("schedule.stages"))?;
        ctx.registry()?.schedule(name).map_err(|e| CliError::Config(format!("schedule.name: {e}")))?.rates()
    };
    let r = plan_schedule(&stages, s.total_tokens).map_err(|e| CliError::Config(format!("schedule: {e}")))?;
    let mut text = String::new();
    let mut csv = String::from("stage,tokens,tokens_per_day,days\n");
    for (i, (st, d)) in stages.iter().zip(&r.stage_days).enumerate() {
        let _ = writeln!(text, "stage {i}: {:.2}B tokens at {:.2}B/day -> {d:.2} days", st.tokens / 1e9, st.tokens_per_day / 1e9);
        let _ = writeln!(csv, "{i},{},{},{d}", st.tokens, st.tokens_per_day);
    }
    let _ = writeln!(
        text,
        "total {:.2} days, scratch {:.2} days, saving {:.1}%, speedup {:.2}x",
        r.total_days, r.scratch_days, r.time_saving_percent, r.speedup
    );
    ctx.write("schedule.txt", &text)?;
    ctx.write("schedule.csv", &csv)?;
    print!("{text}");
    Ok(())
}

fn pm(e: &FlopsEstimate) -> String {
    if e.half_range() == 0.0 {
        format!("{:.2} zettaFLOPs", e.mid_zetta())
    } else {
        format!("{:.2} ± {:.2} zettaFLOPs", e.mid_zetta(), e.half_range_zetta())
    }
}

pub fn cost(ctx: &Ctx) -> Result<(), CliError> {
    let c = ctx.config.cost.as_ref().ok_or_else(|| missing("cost"))?;
    let reg = ctx.registry()?;
    let mut entries = Vec::new();
    for name in &c.models {
        entries.push(reg.model(name).map_err(|e| CliError::Config(format!("cost.models: {e}")))?.clone());
    }
    entries.extend(c.entries.iter().cloned());
    if entries.is_empty() && c.split_total_zetta.is_none() {
        return Err(missing("cost.models"));
    }
    let langs: Vec<(String, f64)> = c.languages.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let mut estimates = Vec::new();
    for e in &entries {
        let est = e.training_flops().map_err(|err| CliError::Config(format!("cost entry `{}`: {err}", e.name)))?;
        estimates.push((e.name.clone(), est));
    }
    if let Some(z) = c.split_total_zetta {
        estimates.push(("total".into(), FlopsEstimate::new(z * ZETTA, z * ZETTA)));
    }
    let mut text = String::new();
    let mut csv = String::from("name,part,low_zetta,mid_zetta,high_zetta\n");
    for (name, est) in &estimates {
        let _ = writeln!(text, "{name}: {}", pm(est));
        let _ = writeln!(csv, "{name},all,{},{},{}", est.low / ZETTA, est.mid_zetta(), est.high / ZETTA);
        if !langs.is_empty() {
            for (lang, part) in split_cost_by_language(est, &langs).map_err(|e| CliError::Config(format!("cost.languages: {e}")))? {
                let _ = writeln!(text, "  {lang}: {}", pm(&part));
                let _ = writeln!(csv, "{name},{lang},{},{},{}", part.low / ZETTA, part.mid_zetta(), part.high / ZETTA);
            }
        }
    }
    ctx.write("cost.txt", &text)?;
    ctx.write("cost.csv", &csv)?;
    print!("{text}");
    Ok(())
}

pub fn carbon(ctx: &Ctx) -> Result<(), CliError> {
    let c = ctx.config.carbon.as_ref().ok_or_else(|| missing("carbon"))?;
    let reg = ctx.registry()?;
    let mut entries = Vec::new();
    for name in &c.names {
        entries.push(reg.carbon(name).map_err(|e| CliError::Config(format!("carbon.names: {e}")))?.clone());
    }
    entries.extend(c.entries.iter().cloned());
    if entries.is_empty() && c.hardware.is_empty() {
        return Err(missing("carbon.names"));
    }
    let mut text = String::new();
    let mut csv = String::from("name,gpu_hours,tdp_watts,pue,energy_mwh,net_tco2e\n");
    for e in &entries {
        let r = energy_and_carbon(e.gpu_hours, e.tdp_watts, e.pue, c.grid_intensity)
            .map_err(|err| CliError::Config(format!("carbon entry `{}`: {err}", e.name)))?;
        let co2 = r.net_tco2e.map_or("n/a".to_string(), |t| format!("{t:.1}"));
        let _ = writeln!(text, "{}: {:.1} MWh, {co2} tCO2e", e.name, r.energy_mwh);
        let _ = writeln!(csv, "{},{},{},{},{},{}", e.name, e.gpu_hours, e.tdp_watts, e.pue, r.energy_mwh, co2);
    }
    for name in &c.hardware {
        let h = reg.hardware(name).map_err(|e| CliError::Config(format!("carbon.hardware: {e}")))?;
        let u = h.utilization().map_err(|e| CliError::Config(format!("hardware `{name}`: {e}")))?;
        let _ = writeln!(text, "{name}: {:.0}/{:.0} TFLOP/s, utilization {u:.2}%", h.measured_tflops_per_gpu, h.peak_tflops_per_gpu);
    }
    ctx.write("carbon.txt", &text)?;
    ctx.write("carbon.csv", &csv)?;
    print!("{text}");
    Ok(())
}

fn probe_settings(ctx: &Ctx, steps: u64, batch_size: usize) -> ProbeSettings {
    ProbeSettings { steps, batch_size, seed: ctx.seed(), optimizer: ctx.config.optimizer.clone() }
}

pub fn hpsearch(ctx: &Ctx) -> Result<(), CliError> {
    let h = ctx.config.hpsearch.as_ref().ok_or_else(|| missing("hpsearch"))?;
    let proxy = ctx.model()?;
    let data = mixer(ctx)?;
    let out = hp_grid_search(proxy, &h.grid, &data, &probe_settings(ctx, h.steps, h.batch_size), h.threads)
        .map_err(|e| match e {
            growlab_core::stability::StabilityError::InvalidArgument(m) => CliError::Config(format!("hpsearch: {m}")),
            other => rt(other),
        })?;
    ctx.write("hpsearch.csv", &out.to_csv())?;
    let b = out.best;
    let text = format!(
        "best learning_rate={} init_std={} softmax_temperature={} smoothed loss {:.5}\n",
        b.learning_rate, b.init_std, b.softmax_temperature, out.best_loss
    );
    ctx.write("hpsearch.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn predict_loss_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let p = ctx.config.predict.as_ref().ok_or_else(|| missing("predict"))?;
    let fit = fit_loss_scaling(&p.points, p.step).map_err(|e| CliError::Config(format!("predict.points: {e}")))?;
    let mut text = format!(
        "L(w) = {:.6} * w^-{:.6} + {:.6} (max residual {:.3e}, step {})\n",
        fit.amplitude, fit.exponent, fit.irreducible_loss, fit.fit_residual, fit.step
    );
    if fit.degenerate {
        text.push_str("warning: degenerate fit\n");
    }
    if fit.non_monotone {
        text.push_str("warning: a wider model has higher loss\n");
    }
    let mut csv = String::from("width,predicted_loss\n");
    for &w in &p.widths {
        let l = predict_loss(&fit, w);
        let _ = writeln!(text, "width {w}: {l:.5}");
        let _ = writeln!(csv, "{w},{l}");
    }
    ctx.write("predict.txt", &text)?;
    ctx.write("predict.csv", &csv)?;
    ctx.write("fit.json", &serde_json::to_string_pretty(&fit).map_err(rt)?)?;
    print!("{text}");
    Ok(())
}

pub fn coord_check(ctx: &Ctx) -> Result<(), CliError> {
    let c = ctx.config.coord.as_ref().ok_or_else(|| missing("coord"))?;
    let base = ctx.model()?;
    if c.widths.is_empty() {
        return Err(missing("coord.widths"));
    }
    let configs: Vec<ModelConfig> = c.widths.iter().map(|&w| base.with_width(w)).collect();
    let data = mixer(ctx)?;
    let r = coordinate_check(&configs, c.lr, &data, &probe_settings(ctx, c.steps, c.batch_size)).map_err(|e| match e {
        growlab_core::stability::StabilityError::InvalidArgument(m) => CliError::Config(format!("coord: {m}")),
        other => rt(other),
    })?;
    ctx.write("coord.csv", &r.to_csv())?;
    let text = format!(
        "{} max RMS ratio {:.3} across widths {:?}{}\n",
        if r.pass { "PASS" } else { "FAIL" },
        r.max_ratio,
        r.widths,
        if r.diverged.is_empty() { String::new() } else { format!(", diverged {:?}", r.diverged) }
    );
    ctx.write("coord.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn gen_eval(ctx: &Ctx) -> Result<(), CliError> {
    let e = &ctx.config.eval;
    let mut all = Vec::new();
    for (i, &f) in e.families.iter().enumerate() {
        let seed = ctx.seed().wrapping_add((i as u64) << 32);
        all.extend(evalgen::generate(f, e.n, e.shots, seed).map_err(|err| CliError::Config(format!("eval: {err}")))?);
    }
    let path = ctx.write("eval.jsonl", &evalgen::to_jsonl(&all))?;
    println!("{} instances of {} families -> {}", all.len(), e.families.len(), path.display());
    Ok(())
}

pub fn eval(ctx: &Ctx) -> Result<(), CliError> {
    let e = &ctx.config.eval;
    let ipath = e.instances.as_ref().ok_or_else(|| missing("eval.instances"))?;
    let opath = e.outputs.as_ref().ok_or_else(|| missing("eval.outputs"))?;
    let instances = evalgen::from_jsonl(&fs::read_to_string(ipath).map_err(rt)?).map_err(rt)?;
    let outputs: Vec<String> = fs::read_to_string(opath).map_err(rt)?.lines().map(str::to_string).collect();
    let report = evalgen::score(&instances, &outputs, e.matching).map_err(rt)?;
    ctx.write("scores.csv", &report.to_csv())?;
    let table = report.to_table();
    ctx.write("scores.txt", &table)?;
    print!("{table}");
    Ok(())
}

pub fn tokenize(ctx: &Ctx) -> Result<(), CliError> {
    let t = ctx.config.tokenize.as_ref().ok_or_else(|| missing("tokenize"))?;
    if t.mode != "bytes" {
        return Err(CliError::Config(format!("tokenize.mode: unsupported `{}` (only `bytes`)", t.mode)));
    }
    let first = t.inputs.first().ok_or_else(|| missing("tokenize.inputs"))?;
    let name = match &t.name {
        Some(n) => n.clone(),
        None => first.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "stream".into()),
    };
    let mut tokens = Vec::new();
    for p in &t.inputs {
        tokens.extend(encode_bytes(&fs::read(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?));
    }
    let mut manifest = match &t.manifest {
        Some(p) => Manifest::load(p).map_err(rt)?,
        None => Manifest::default(),
    };
    fs::create_dir_all(&ctx.out).map_err(rt)?;
    let file = format!("{name}.tok");
    write_token_file(&ctx.out.join(&file), &tokens).map_err(rt)?;
    manifest.upsert(ManifestEntry { name: name.clone(), path: file.into(), length: tokens.len() as u64, weight: 1.0 });
    manifest.save(&ctx.out.join("manifest.toml")).map_err(rt)?;
    println!("{name}: {} tokens", tokens.len());
    Ok(())
}

/// Names of the subcommands that consume randomness.
pub fn is_stochastic(cmd: &str) -> bool {
    matches!(cmd, "train" | "verify-growth" | "hpsearch" | "coord-check" | "gen-eval")
}
