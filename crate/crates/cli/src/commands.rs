use std::path::Path;
use std::time::Instant;

use anyhow::anyhow;
use serde::{Deserialize, Serialize};

use pista_core::io::{self, Array};
use pista_core::metrics::{evaluate, mssim, rlne, ImageScore, ReconReport};
use pista_core::net::{xavier_init, Activation, NetworkParams, NetworkShape};
use pista_core::pista::{reconstruct_pista, SolverConfig};
use pista_core::sim::{
    default_center_lines, gen_mask, generate_dataset, generate_sample, mask_line_budget, zero_filled, DatasetSpec, Sample,
};
use pista_core::train::{
    grad_check_with, load_checkpoint, reconstruct_net, save_checkpoint, train_from, AdamState, GradCheckOptions, TrainConfig,
};
use pista_core::{ComplexImage, Exec};

use crate::export::{to_gray8, write_gray};
use crate::{
    usage, EvalArgs, ExportPngArgs, Failure, GradcheckArgs, MaskArgs, Method, Preset, ReconArgs, SimulateArgs, SolverArgs,
    TrainArgs,
};

type Outcome = Result<(), Failure>;

const DATASET_META: &str = "dataset.json";
const RECON_META: &str = "recon.json";

/// Sidecar written by `recon` next to the reconstructed images.
#[derive(Debug, Serialize, Deserialize)]
struct ReconMeta {
    method: String,
    indices: Vec<usize>,
    sec_per_slice: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| anyhow!("cannot write {}: {e}", path.display()))
}

pub(crate) fn simulate(a: &SimulateArgs, exec: Exec) -> Outcome {
    let spec = DatasetSpec {
        count: a.n,
        size: a.size,
        coils: a.coils,
        af: a.af,
        center_lines: a.center_lines.unwrap_or_else(|| default_center_lines(a.size)),
        noise_std: a.noise,
        smooth_phase: !a.no_phase,
        seed: a.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let samples = generate_dataset(&spec, exec)?;
    io::write_dataset(&a.out, &samples)?;
    write_json(&a.out.join(DATASET_META), &spec)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

pub(crate) fn mask(a: &MaskArgs) -> Outcome {
    let width = a.width.unwrap_or(a.size);
    let center = a.center_lines.unwrap_or_else(|| default_center_lines(a.size));
    if width == 0 {
        return Err(usage("width must be positive"));
    }
    mask_line_budget(a.size, a.af, center).map_err(|e| usage(e.to_string()))?;
    let m = gen_mask(a.size, width, a.af, center, a.seed)?;
    let binary = m.to_binary();
    io::write_array(&a.out, &Array::real(vec![a.size, width], binary.clone())?)?;
    if let Some(p) = &a.png {
        write_gray(p, width, a.size, &to_gray8(&binary, 1.0))?;
    }
    let summary = serde_json::json!({ "lines": m.lines(), "acceleration": m.acceleration() });
    println!("{summary}");
    Ok(())
}

pub(crate) fn train(a: &TrainArgs, exec: Exec) -> Outcome {
    let mut cfg = match a.preset {
        Preset::Full => TrainConfig::full(a.variant, a.seed),
        Preset::Desk => TrainConfig::desk(a.variant, a.seed),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    eprintln!("pista train resolved: {}", serde_json::to_string(&cfg)?);

    let data = io::read_dataset(&a.data)?;
    let val = match &a.val {
        Some(p) => io::read_dataset(p)?,
        None => Vec::new(),
    };
    let params = xavier_init(&cfg.shape, cfg.seed)?;
    let state = AdamState::new(&params);
    let start = Instant::now();
    let epochs = cfg.epochs;
    let out = train_from(params, state, &data, &val, &cfg, exec, |e, h| {
        let v = h.val_rlne.get(e).map(|r| format!(" val_rlne {r:.6}")).unwrap_or_default();
        eprintln!(
            "epoch {}/{epochs} loss {:.6}{v} ({:.1}s)",
            e + 1,
            h.epoch_loss[e],
            start.elapsed().as_secs_f64()
        );
    })?;
    save_checkpoint(&a.out, &out.params, &out.state, Some(&cfg))?;
    if let Some(h) = &a.history {
        write_json(h, &out.history)?;
    }
    println!("wrote checkpoint {} after {} steps", a.out.display(), out.state.step);
    Ok(())
}

fn solver_config(s: &SolverArgs) -> Result<SolverConfig, Failure> {
    let cfg = SolverConfig {
        gamma: s.gamma,
        lambda: s.lambda,
        max_iters: s.iters,
        tol: s.tol,
        momentum: false,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

type Reconstructor = Box<dyn Fn(&Sample) -> pista_core::Result<ComplexImage> + Sync + Send>;

fn reconstructor(method: Method, checkpoint: Option<&Path>, solver: &SolverArgs) -> Result<Reconstructor, Failure> {
    Ok(match method {
        Method::Zerofill => Box::new(zero_filled),
        Method::Pista => {
            let cfg = solver_config(solver)?;
            Box::new(move |s: &Sample| Ok(reconstruct_pista(&s.kspace, &s.coils, &s.mask, &cfg, None)?.0))
        }
        Method::Net => {
            let path = checkpoint.ok_or_else(|| usage("--method net requires --checkpoint"))?;
            let params: NetworkParams = load_checkpoint(path, None)?.params;
            Box::new(move |s: &Sample| reconstruct_net(s, &params))
        }
    })
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Zerofill => "zerofill",
        Method::Pista => "pista",
        Method::Net => "net",
    }
}

pub(crate) fn recon(a: &ReconArgs, exec: Exec) -> Outcome {
    let f = reconstructor(a.method, a.checkpoint.as_deref(), &a.solver)?;
    let indices = io::list_samples(&a.data)?;
    let data = io::read_dataset(&a.data)?;
    let results = exec.try_map(&data, |s| {
        let t = Instant::now();
        let x = f(s)?;
        Ok::<_, pista_core::Error>((x, t.elapsed().as_secs_f64()))
    })?;
    std::fs::create_dir_all(&a.out).map_err(|e| anyhow!("cannot create {}: {e}", a.out.display()))?;
    for (k, (x, _)) in indices.iter().zip(&results) {
        io::write_image(&io::sample_dir(&a.out, *k), x)?;
    }
    let meta = ReconMeta {
        method: method_name(a.method).into(),
        indices,
        sec_per_slice: results.iter().map(|(_, t)| t).sum::<f64>() / results.len() as f64,
    };
    write_json(&a.out.join(RECON_META), &meta)?;
    println!("reconstructed {} samples into {}", results.len(), a.out.display());
    Ok(())
}

fn read_recon_meta(dir: &Path) -> anyhow::Result<ReconMeta> {
    let path = dir.join(RECON_META);
    let text = std::fs::read_to_string(&path).map_err(|e| anyhow!("cannot read {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn eval(a: &EvalArgs, exec: Exec) -> Outcome {
    let report = match (&a.recon, a.method) {
        (Some(dir), None) => {
            let meta = read_recon_meta(dir)?;
            let indices = io::list_samples(&a.data)?;
            if indices != meta.indices {
                return Err(Failure::Runtime(anyhow!("{} does not hold reconstructions of every sample in {}", dir.display(), a.data.display())));
            }
            let data = io::read_dataset(&a.data)?;
            let scores = exec.try_map(&indices, |&k| {
                let s = &data[indices.iter().position(|&i| i == k).expect("index listed")];
                let x = io::read_image(&io::sample_dir(dir, k))?;
                Ok::<_, pista_core::Error>(ImageScore {
                    rlne: rlne(&s.truth, &x)?,
                    mssim: mssim(&s.truth, &x)?,
                })
            })?;
            let af = data.iter().map(|s| s.mask.acceleration()).sum::<f64>() / data.len() as f64;
            ReconReport::from_scores(meta.method, af, scores, meta.sec_per_slice)?
        }
        (None, Some(m)) => {
            let f = reconstructor(m, a.checkpoint.as_deref(), &a.solver)?;
            let data = io::read_dataset(&a.data)?;
            evaluate(&data, method_name(m), exec, f)?
        }
        _ => return Err(usage("exactly one of --recon or --method is required")),
    };
    let json = report.to_json();
    if let Some(p) = &a.report {
        std::fs::write(p, format!("{json}\n")).map_err(|e| anyhow!("cannot write {}: {e}", p.display()))?;
    }
    println!("{json}");
    Ok(())
}

pub(crate) fn gradcheck(a: &GradcheckArgs) -> Outcome {
    if !(a.step > 0.0 && a.step.is_finite()) {
        return Err(usage(format!("--step must be positive, got {}", a.step)));
    }
    let params = match &a.checkpoint {
        Some(p) => load_checkpoint(p, None)?.params,
        None => {
            let shape = NetworkShape {
                blocks: a.blocks,
                layers: a.layers,
                channels: a.channels,
                kernel: a.kernel,
                variant: a.variant,
                activation: Activation::Relu,
            };
            shape.validate().map_err(|e| usage(e.to_string()))?;
            xavier_init(&shape, a.seed)?
        }
    };
    let spec = DatasetSpec {
        count: 1,
        size: a.size,
        coils: a.coils,
        af: 4.0,
        center_lines: default_center_lines(a.size).min(a.size / 4).max(1),
        noise_std: 0.0,
        smooth_phase: true,
        seed: a.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let sample = generate_sample(&spec, 0)?;
    let opts = GradCheckOptions {
        entries: a.entries,
        seed: a.seed,
        ..Default::default()
    };
    let r = grad_check_with(&params, &sample, a.step, &opts)?;
    let summary = serde_json::json!({
        "max_rel_error": r.max_rel_error,
        "max_abs_error": r.max_abs_error,
        "checked": r.checked,
        "excluded": r.excluded,
        "kinds": r.kinds,
    });
    println!("{summary}");
    if r.max_rel_error > a.tol {
        return Err(Failure::Runtime(anyhow!("max relative error {:.3e} exceeds {:.3e}", r.max_rel_error, a.tol)));
    }
    Ok(())
}

pub(crate) fn export_png(a: &ExportPngArgs) -> Outcome {
    if !(a.amplify > 0.0) {
        return Err(usage("--amplify must be positive"));
    }
    let indices = io::list_samples(&a.data)?;
    let chosen: Vec<usize> = if a.index.is_empty() { indices.clone() } else { a.index.clone() };
    if let Some(k) = chosen.iter().find(|k| !indices.contains(k)) {
        return Err(usage(format!("sample {k} is not in {}", a.data.display())));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| anyhow!("cannot create {}: {e}", a.out.display()))?;
    for &k in &chosen {
        let s = io::read_sample(&io::sample_dir(&a.data, k))?;
        let (h, w) = s.truth.dims();
        let peak = s.truth.max_magnitude();
        if peak == 0.0 {
            return Err(Failure::Runtime(anyhow!("sample {k} has an all-zero reference image")));
        }
        let scale = 1.0 / peak;
        write_gray(&a.out.join(format!("sample_{k}_truth.png")), w, h, &to_gray8(&s.truth.magnitude(), scale))?;
        if let Some(dir) = &a.recon {
            let x = io::read_image(&io::sample_dir(dir, k))?;
            if x.dims() != (h, w) {
                return Err(Failure::Runtime(anyhow!("reconstruction {k} is {:?}, reference is {:?}", x.dims(), (h, w))));
            }
            write_gray(&a.out.join(format!("sample_{k}_recon.png")), w, h, &to_gray8(&x.magnitude(), scale))?;
            let err = x.sub(&s.truth).magnitude();
            write_gray(&a.out.join(format!("sample_{k}_error.png")), w, h, &to_gray8(&err, a.amplify * scale))?;
        }
    }
    println!("exported {} samples to {}", chosen.len(), a.out.display());
    Ok(())
}
