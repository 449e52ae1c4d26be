use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::config::{load_files, parse_file_specs, DataSource, RunConfig};
use super::Common;
use crate::data::{gen_rockets, gen_shapes, load_xyz, save_ply, LabeledCloud, Labels, ShapeKind};
use crate::error::{Error, Result};
use crate::geometry::{bin_count_for, KernelShape, KernelSpec, Point3};
use crate::graph::{build_pyramid, dump_pyramid, pyramid_stats, GraphPyramid, PointCloud, PyramidSpec};
use crate::network::{
    evaluate, load_checkpoint, loss_and_grad, save_checkpoint, train as run_training, LayerKind, Level, Network,
    Sample, Target, Task,
};
use crate::ops::Mode;
use crate::seed::derive_seed;

fn out_dir(common: &Common, cfg: Option<&RunConfig>) -> Option<PathBuf> {
    common.out.clone().or_else(|| cfg.map(|c| c.output.dir.clone()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub(super) fn train(cfg: &RunConfig, common: &Common) -> Result<()> {
    let net_cfg = cfg.network()?.clone();
    let data = cfg.data()?;
    let mut net = Network::build(net_cfg, cfg.network_seed())?;
    let dir = out_dir(common, Some(cfg)).expect("config present");
    create_dir(&dir)?;
    let start = Instant::now();
    let (train_set, test_set) = data.load(cfg.seed)?;

    let mut log = String::new();
    writeln!(log, "seed {}", cfg.seed).unwrap();
    writeln!(log, "train samples {} test samples {}", train_set.len(), test_set.len()).unwrap();
    writeln!(log, "parameters {}", net.parameter_count()).unwrap();
    print!("{log}");
    let history = run_training(&mut net, &train_set, Some(&test_set), &cfg.train, |r| {
        let line = format!(
            "epoch {} loss {:.6} lr {:e} oa {:.4} macc {:.4} miou {:.4}",
            r.epoch, r.loss, r.learning_rate, r.metrics.overall_accuracy, r.metrics.mean_accuracy, r.metrics.mean_iou
        );
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
        ControlFlow::Continue(())
    })?;

    save_checkpoint(&net, dir.join(&cfg.output.checkpoint))?;
    fs::write(dir.join(&cfg.output.metrics), history.metrics_csv())?;
    fs::write(dir.join(&cfg.output.log), log)?;
    let mut summary = format!("{}\n", net.summary());
    if let Some(last) = history.epochs.last() {
        write!(summary, "\nfinal test metrics (epoch {})\n{}", last.epoch, last.metrics).unwrap();
    }
    fs::write(dir.join("summary.txt"), summary)?;
    eprintln!("elapsed {:.3}s", start.elapsed().as_secs_f64());
    Ok(())
}

pub(super) fn eval(cfg: Option<&RunConfig>, common: &Common, checkpoint: &Path, inputs: &[String]) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    if let Some(expected) = cfg.and_then(|c| c.network.as_ref()) {
        if expected != net.config() {
            return Err(Error::config(
                "network",
                format!("the config's network does not match checkpoint {}", checkpoint.display()),
            ));
        }
    }
    let seed = common.seed.or(cfg.map(|c| c.seed)).unwrap_or(0);
    let data: Vec<LabeledCloud> = if !inputs.is_empty() {
        load_files(&parse_file_specs(inputs, Path::new(""))?)?
    } else {
        let c = cfg.ok_or_else(|| Error::config("--input", "give input files or a config with a data section"))?;
        c.data()?.load(c.seed)?.1
    };
    let task = net.config().task;
    for (i, c) in data.iter().enumerate() {
        let ok = match (&c.labels, task) {
            (Labels::Cloud(k), Task::Classification) => *k < net.config().classes,
            (Labels::Points(l), Task::Segmentation) => l.iter().all(|&k| k < net.config().classes),
            _ => false,
        };
        if !ok {
            return Err(Error::config(
                "--input",
                format!("cloud {i} lacks valid {task} labels for {} classes", net.config().classes),
            ));
        }
    }
    let ev = evaluate(&net, &data, derive_seed(seed, &[5]))?;
    println!("clouds {}", data.len());
    println!("loss {:.6}", ev.loss);
    print!("{}", ev.metrics);

    if let Some(dir) = out_dir(common, None) {
        create_dir(&dir)?;
        let m = &ev.metrics;
        let mut s = String::new();
        writeln!(s, "loss = {:?}", ev.loss).unwrap();
        writeln!(s, "oa = {:?}", m.overall_accuracy).unwrap();
        writeln!(s, "macc = {:?}", m.mean_accuracy).unwrap();
        writeln!(s, "miou = {:?}", m.mean_iou).unwrap();
        for (k, (a, iou)) in m.class_accuracy.iter().zip(&m.iou).enumerate() {
            let f = |v: &Option<f64>| v.map_or("none".to_string(), |x| format!("{x:?}"));
            writeln!(s, "class.{k}.accuracy = {}", f(a)).unwrap();
            writeln!(s, "class.{k}.iou = {}", f(iou)).unwrap();
        }
        fs::write(dir.join("eval.txt"), s)?;
        let mut p = String::new();
        for (i, pred) in ev.predictions.iter().enumerate() {
            let labels: Vec<String> = pred.iter().map(usize::to_string).collect();
            writeln!(p, "{i} {}", labels.join(" ")).unwrap();
        }
        fs::write(dir.join("predictions.txt"), p)?;
    }
    Ok(())
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Bytes held by a pyramid's coordinates and index arrays.
fn pyramid_bytes(p: &GraphPyramid) -> usize {
    let mut b = 0;
    for level in &p.levels {
        let g = &level.graph;
        b += level.cloud.len() * 24 + level.parent_indices.len() * 8;
        b += g.edge_count() * 8 + (g.vertex_count() + 1) * 8;
    }
    for a in &p.pool {
        b += a.edge_count() * 4 + (a.len() + 1) * 8;
    }
    for u in &p.unpool {
        b += u.adjacency.edge_count() * 12 + (u.len() + 1) * 8;
    }
    b
}

fn bench_cloud(cfg: &RunConfig, task: Task, m: usize, seed: u64) -> Result<LabeledCloud> {
    let mut v = match task {
        Task::Segmentation => gen_rockets(m, 1, seed)?,
        Task::Classification => {
            let kind = match cfg.data.as_ref().map(|d| &d.source) {
                Some(DataSource::Shapes(k)) => k[0],
                _ => ShapeKind::Sphere,
            };
            let mut c = gen_shapes(&[kind], m, 1, seed)?;
            c[0].labels = Labels::Cloud(0);
            c
        }
    };
    Ok(v.remove(0))
}

pub(super) fn bench(cfg: &RunConfig, common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let mut net = match checkpoint {
        Some(path) => load_checkpoint(path)?,
        None => Network::build(cfg.network()?.clone(), cfg.network_seed())?,
    };
    if net.config().input_channels != 3 {
        return Err(Error::config("network.input_channels", "benchmarks use coordinate-only inputs"));
    }
    let task = net.config().task;
    let b = &cfg.bench;
    let param_bytes = net.parameter_count() * 8 * 4;
    let names: Vec<String> = net.plan().iter().map(|s| s.name.clone()).collect();
    let mut table = String::from("size,pyramid_ms,forward_ms,forward_backward_ms,peak_mem_mb\n");
    let mut layer_rows: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    println!(
        "{:>7} {:>12} {:>12} {:>20} {:>12}",
        "size", "pyramid_ms", "forward_ms", "forward_backward_ms", "peak_mem_mb"
    );
    for &m in &b.sizes {
        let cloud = bench_cloud(cfg, task, m, derive_seed(cfg.seed, &[6, m as u64]))?;
        let target = Target::of(&cloud, task)?;
        let (mut t_pyr, mut t_fwd, mut t_fb) = (Vec::new(), Vec::new(), Vec::new());
        let mut per_layer: Vec<Vec<Duration>> = vec![Vec::new(); names.len()];
        let mut peak = 0usize;
        for run in 0..b.warmup + b.runs {
            let timed = run >= b.warmup;
            let t0 = Instant::now();
            let sample = Sample::from_cloud(&cloud, net.config(), derive_seed(cfg.seed, &[7, run as u64]))?;
            let d_pyr = t0.elapsed();
            let batch = [sample];

            let t1 = Instant::now();
            net.predict(&batch)?;
            let d_fwd = t1.elapsed();

            let t2 = Instant::now();
            let (logits, layers) = net.forward_timed(&batch, Mode::Training)?;
            let (_, grad) = loss_and_grad(&logits, std::slice::from_ref(&target))?;
            peak = peak.max(net.tape_bytes() + pyramid_bytes(&batch[0].pyramid) + param_bytes);
            net.backward(&grad)?;
            let d_fb = t2.elapsed();
            if timed {
                t_pyr.push(d_pyr);
                t_fwd.push(d_fwd);
                t_fb.push(d_fb);
                for (acc, d) in per_layer.iter_mut().zip(layers) {
                    acc.push(d);
                }
            }
        }
        let (p, f, fb) = (ms(median(t_pyr)), ms(median(t_fwd)), ms(median(t_fb)));
        let mb = peak as f64 / (1024.0 * 1024.0);
        println!("{m:>7} {p:>12.3} {f:>12.3} {fb:>20.3} {mb:>12.2}");
        writeln!(table, "{m},{p:.6},{f:.6},{fb:.6},{mb:.6}").unwrap();
        for (row, times) in layer_rows.iter_mut().zip(per_layer) {
            row.push(ms(median(times)));
        }
    }
    println!("\nper-layer forward ms (median)");
    let mut layer_csv = String::from("layer");
    print!("{:<14}", "layer");
    for m in &b.sizes {
        print!(" {m:>10}");
        write!(layer_csv, ",{m}").unwrap();
    }
    println!();
    layer_csv.push('\n');
    for (name, row) in names.iter().zip(&layer_rows) {
        print!("{name:<14}");
        layer_csv.push_str(name);
        for v in row {
            print!(" {v:>10.3}");
            write!(layer_csv, ",{v:.6}").unwrap();
        }
        println!();
        layer_csv.push('\n');
    }
    if let Some(dir) = common.out.clone() {
        create_dir(&dir)?;
        fs::write(dir.join("bench.csv"), table)?;
        fs::write(dir.join("bench_layers.csv"), layer_csv)?;
    }
    Ok(())
}

/// Blue through red as `t` goes from 0 to 1, in `[-1, 1]` color units.
fn ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [2.0 * t - 1.0, 1.0 - 2.0 * (2.0 * t - 1.0).abs(), 1.0 - 2.0 * t]
}

pub(super) fn inspect_kernel(common: &Common, checkpoint: &Path, layer: &str) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let idx = net
        .layer_index(layer)
        .ok_or_else(|| Error::config("--layer", format!("no layer named `{layer}`")))?;
    let step = &net.plan()[idx];
    let cfg = net.config();
    let spec: KernelSpec = match (&step.kind, step.input_level) {
        (LayerKind::Sph3d { .. }, Level::Vertex(l)) => cfg.pyramid.kernel.at_radius(cfg.pyramid.radii[l])?,
        (LayerKind::GSph3d { .. }, _) => KernelSpec::new(cfg.global_kernel.0, cfg.global_kernel.1, 1, 1.0)?,
        _ => {
            return Err(Error::config(
                "--layer",
                format!("`{layer}` is a {} layer, not a spherical convolution", step.kind.tag()),
            ))
        }
    };
    let dw = net.layer_params()[idx].depthwise.as_ref().expect("convolution layers have kernels");
    debug_assert_eq!(dw.bin_count, bin_count_for(spec.n(), spec.p(), spec.q()));
    let per_bin = dw.in_channels * dw.multiplier;
    let weights = |k: usize| &dw.weights[k * per_bin..(k + 1) * per_bin];
    let mean_abs = |k: usize| weights(k).iter().map(|w| w.abs()).sum::<f64>() / per_bin as f64;

    let mut out = String::new();
    writeln!(out, "layer {layer} kind {} level {}", step.kind, step.input_level).unwrap();
    writeln!(
        out,
        "kernel n {} p {} q {} radius {} bins {} channels {} multiplier {}",
        spec.n(),
        spec.p(),
        spec.q(),
        spec.rho(),
        dw.bin_count,
        dw.in_channels,
        dw.multiplier
    )
    .unwrap();
    writeln!(out, "bin 0 self mean_abs_weight {}", mean_abs(0)).unwrap();
    let bins = spec.bins();
    for g in &bins {
        let k = g.kappa.index();
        let c = g.center();
        writeln!(
            out,
            "bin {k} k_theta {} k_phi {} k_r {} theta [{}, {}) phi [{}, {}) r [{}, {}] center {} {} {} mean_abs_weight {}",
            g.k_theta, g.k_phi, g.k_r, g.theta.0, g.theta.1, g.phi.0, g.phi.1, g.r.0, g.r.1, c.x, c.y, c.z, mean_abs(k)
        )
        .unwrap();
    }
    writeln!(out, "weights (bin: channel-major, multiplier-minor)").unwrap();
    for k in 0..dw.bin_count {
        let w: Vec<String> = weights(k).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "w {k} : {}", w.join(" ")).unwrap();
    }
    print!("{out}");

    if let Some(dir) = &common.out {
        create_dir(dir)?;
        fs::write(dir.join(format!("{layer}_kernel.txt")), &out)?;
        let means: Vec<f64> = (0..dw.bin_count).map(mean_abs).collect();
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let mut pts = vec![Point3::ORIGIN];
        let mut colors = vec![ramp(norm(means[0]))];
        for g in &bins {
            pts.push(g.center());
            colors.push(ramp(norm(means[g.kappa.index()])));
        }
        let cloud = LabeledCloud::new(PointCloud::new(pts)?, Labels::None, Some(colors))?;
        save_ply(&cloud, dir.join(format!("{layer}_kernel.ply")))?;
    }
    Ok(())
}

pub(super) struct PyramidArgs {
    pub input: PathBuf,
    pub levels: Option<Vec<usize>>,
    pub radii: Option<Vec<f64>>,
    pub unpool_radii: Option<Vec<f64>>,
    pub cap: Option<usize>,
    pub kernel: Option<String>,
    pub ply: bool,
}

fn parse_kernel(s: &str) -> Result<KernelShape> {
    let v: Option<Vec<usize>> = s.split(['x', 'X']).map(|p| p.trim().parse().ok()).collect();
    match v.as_deref() {
        Some(&[n, p, q]) => Ok(KernelShape::new(n, p, q)),
        _ => Err(Error::config("--kernel", format!("expected `n x p x q` like `8x2x2`, got `{s}`"))),
    }
}

pub(super) fn build_pyramid_cmd(cfg: Option<&RunConfig>, common: &Common, args: PyramidArgs) -> Result<()> {
    let cloud = load_xyz(&args.input)?;
    let m = cloud.len();
    let base = cfg.and_then(|c| c.network.as_ref()).map(|n| n.pyramid.clone());
    let levels = match (&args.levels, &base) {
        (Some(l), _) => l.clone(),
        (None, Some(b)) => b.for_cloud_size(m).map_err(|e| Error::config("pyramid.level_sizes", e.to_string()))?.level_sizes,
        (None, None) => {
            let mut l = vec![m];
            while l.len() < 3 && l.last().unwrap() / 4 >= 1 {
                l.push(l.last().unwrap() / 4);
            }
            l
        }
    };
    if levels.first() != Some(&m) {
        return Err(Error::config(
            "--levels",
            format!("the first level size must equal the point count {m}, got {:?}", levels.first()),
        ));
    }
    let radii = match (&args.radii, &base) {
        (Some(r), _) => r.clone(),
        (None, Some(b)) if b.radii.len() == levels.len() => b.radii.clone(),
        _ => {
            let c = cloud.cloud.centroid();
            let reach = cloud.cloud.points().iter().map(|p| (*p - c).norm()).fold(0.0, f64::max);
            let reach = if reach > 0.0 { reach } else { 1.0 };
            (0..levels.len()).map(|l| 0.25 * reach * 2f64.powi(l as i32)).collect()
        }
    };
    let unpool_radii = match &args.unpool_radii {
        Some(r) => r.clone(),
        None => radii.iter().skip(1).copied().collect(),
    };
    let kernel = match (&args.kernel, &base) {
        (Some(k), _) => parse_kernel(k)?,
        (None, Some(b)) => b.kernel.clone(),
        (None, None) => KernelShape::new(8, 2, 2),
    };
    let spec = PyramidSpec {
        level_sizes: levels,
        radii,
        unpool_radii,
        cap: args.cap.or(base.as_ref().map(|b| b.cap)).unwrap_or(64),
        kernel,
    };
    spec.validate().map_err(|e| Error::config("--levels", e.to_string()))?;
    let seed = common.seed.or(cfg.map(|c| c.seed)).unwrap_or(0);
    let pyramid = build_pyramid(&cloud.cloud, &spec, seed)?;

    println!("{:>5} {:>9} {:>10} {:>12} {:>6} {:>6} {:>9}", "level", "vertices", "edges", "radius", "min", "max", "mean");
    for s in pyramid_stats(&pyramid) {
        println!(
            "{:>5} {:>9} {:>10} {:>12.6} {:>6} {:>6} {:>9.3}",
            s.level, s.vertices, s.edges, s.radius, s.min_degree, s.max_degree, s.mean_degree
        );
    }
    let fallbacks: usize = pyramid.unpool_fallbacks.iter().sum();
    println!("unpool fallbacks {fallbacks}");

    if let Some(dir) = out_dir(common, None) {
        create_dir(&dir)?;
        fs::write(dir.join("pyramid.txt"), dump_pyramid(&pyramid))?;
        if args.ply {
            for l in 0..pyramid.level_count() {
                let idx = pyramid.original_indices(l);
                let lc = cloud.select(&idx)?;
                save_ply(&lc, dir.join(format!("level_{l}.ply")))?;
            }
        }
    }
    Ok(())
}


