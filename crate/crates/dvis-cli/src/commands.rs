//! The five subcommands. Each builds its artifacts under the output
//! directory and finishes by writing `manifest.txt` and `timing.log`.

use log::{info, warn};

use dvis_core::cluster::{cluster_with_model_and_graph, label_grid, ClusterState};
use dvis_core::eval::{evaluate, evaluate_crown_weighted, paired_labels, CrownMap, EvalReport};
use dvis_core::graph::{knn_graph, GraphOptions, PixelGraph};
use dvis_core::hsi::{
    bicubic_downsample, extract_pixels, load_envi, normalize_spectra, write_envi, Interleave,
    PixelMask, PixelSet,
};
use dvis_core::io::{grid_csv_text, grid_pgm_bytes, read_grid_csv, IntGrid};
use dvis_core::synth::{generate, SyntheticSceneSpec};
use dvis_core::unmixing::{abundances_csv, endmembers_csv, unmix, UnmixingModel};
use dvis_core::{graph, unmixing};

use crate::artifacts::{ensure_dir, write_artifact, Manifest, Timings};
use crate::config::PipelineConfig;
use crate::error::Result;

/// Load, downsample, mask, and optionally normalize the cube named by the
/// config, recording inputs in the manifest and stages in the timing log.
fn preprocess(
    config: &PipelineConfig,
    manifest: &mut Manifest,
    timings: &mut Timings,
) -> Result<(PixelSet, usize, usize)> {
    let header = config.require_cube()?;
    manifest.input("cube", &header)?;
    let mut cube = timings.stage("load", || load_envi(&header))?;

    let factor = config.factor();
    if factor > 1 {
        cube = timings.stage("downsample", || bicubic_downsample(&cube, factor))?;
    }
    let (rows, cols) = (cube.rows(), cube.cols());

    let mask = match &config.mask {
        Some(path) => {
            manifest.input("mask", path)?;
            let grid = read_grid_csv(path)?;
            let keep = grid.values().iter().map(|&v| v != 0).collect();
            PixelMask::new(grid.rows(), grid.cols(), keep)?
        }
        None => PixelMask::full(rows, cols),
    };

    let mut pixels = timings.stage("extract", || extract_pixels(&cube, &mask))?;
    if config.normalize() {
        pixels = timings.stage("normalize", || normalize_spectra(&pixels))?;
    }
    info!(
        "{} of {} pixels kept ({} bands)",
        pixels.len(),
        rows * cols,
        pixels.dims()
    );
    Ok((pixels, rows, cols))
}

fn record_params(config: &PipelineConfig, manifest: &mut Manifest) {
    manifest
        .set("param.k", config.k())
        .set("param.n_neighbors", config.n_neighbors())
        .set("param.sigma0", config.sigma0())
        .set("param.time", config.time())
        .set("param.seed", config.seed())
        .set("param.factor", config.factor())
        .set(
            "param.eigen_tolerance",
            config.cluster_params().eigen_tolerance,
        )
        .set("param.normalize", config.normalize());
}

/// Unmixing model via the content-addressed cache unless caching is off.
fn cached_unmix(
    config: &PipelineConfig,
    no_cache: bool,
    pixels: &PixelSet,
    manifest: &mut Manifest,
    timings: &mut Timings,
) -> Result<UnmixingModel> {
    if no_cache {
        manifest.set("cache.unmix", "off");
        return Ok(timings.stage("unmix", || unmix(pixels, config.seed()))?);
    }
    let dir = config.cache_dir();
    ensure_dir(&dir)?;
    let key = unmixing::cache::cache_key(pixels, config.seed());
    if let Some(model) = unmixing::cache::load(&dir, &key, pixels)? {
        manifest.set("cache.unmix", "hit");
        return Ok(model);
    }
    let model = timings.stage("unmix", || unmix(pixels, config.seed()))?;
    unmixing::cache::store(&dir, &key, &model)?;
    manifest.set("cache.unmix", "miss");
    Ok(model)
}

/// Pixel graph via the eigenpair cache unless caching is off.
fn cached_graph(
    config: &PipelineConfig,
    no_cache: bool,
    pixels: &PixelSet,
    opts: &GraphOptions,
    manifest: &mut Manifest,
    timings: &mut Timings,
) -> Result<PixelGraph> {
    if no_cache {
        manifest.set("cache.graph", "off");
        return Ok(timings.stage("graph", || knn_graph(pixels, config.n_neighbors(), opts))?);
    }
    let dir = config.cache_dir();
    ensure_dir(&dir)?;
    let key = graph::cache::cache_key(pixels, config.n_neighbors());
    if let Some(g) = graph::cache::load(&dir, &key, opts)? {
        manifest.set("cache.graph", "hit");
        return Ok(g);
    }
    let g = timings.stage("graph", || knn_graph(pixels, config.n_neighbors(), opts))?;
    graph::cache::store(&dir, &key, &g, opts)?;
    manifest.set("cache.graph", "miss");
    Ok(g)
}

fn diagnostics_csv(pixels: &PixelSet, model: &UnmixingModel, state: &ClusterState) -> String {
    let mut out = String::from("pixel,row,col,density,purity,zeta,dt,label\n");
    for i in 0..pixels.len() {
        let (r, c) = pixels.origins()[i];
        out.push_str(&format!(
            "{i},{r},{c},{},{},{},{},{}\n",
            state.density()[i],
            model.purity()[i],
            state.zeta()[i],
            state.dt_value()[i],
            state.labels()[i],
        ));
    }
    out
}

pub fn run_cluster(config: &PipelineConfig, no_cache: bool) -> Result<()> {
    let out = config.out();
    ensure_dir(&out)?;
    let mut manifest = Manifest::new("cluster");
    let mut timings = Timings::new();
    record_params(config, &mut manifest);

    let (pixels, rows, cols) = preprocess(config, &mut manifest, &mut timings)?;
    let params = config.cluster_params();
    let model = cached_unmix(config, no_cache, &pixels, &mut manifest, &mut timings)?;
    let graph = cached_graph(
        config,
        no_cache,
        &pixels,
        &params.graph_options(),
        &mut manifest,
        &mut timings,
    )?;
    let state = timings.stage("cluster", || {
        cluster_with_model_and_graph(&pixels, &params, &model, &graph)
    })?;
    if state.fallback_count() > 0 {
        warn!("{} pixels labeled by mode fallback", state.fallback_count());
    }

    manifest
        .set("result.materials", model.material_count())
        .set("result.modes", format_indices(state.modes()))
        .set("result.fallbacks", state.fallback_count());

    let labels = label_grid(&pixels, state.labels(), rows, cols)?;
    write_artifact(
        &mut manifest,
        &out,
        "labels.csv",
        grid_csv_text(&labels, "label").as_bytes(),
    )?;
    write_artifact(&mut manifest, &out, "labels.pgm", &grid_pgm_bytes(&labels)?)?;
    write_artifact(
        &mut manifest,
        &out,
        "diagnostics.csv",
        diagnostics_csv(&pixels, &model, &state).as_bytes(),
    )?;

    if let Some(reference) = &config.reference {
        manifest.input("reference", reference)?;
        let truth = read_grid_csv(reference)?;
        let (pred, refer) = paired_labels(&labels, &truth)?;
        let report = evaluate(&pred, &refer, config.k())?;
        manifest.set("result.overall_accuracy", report.overall_acc());
        manifest.set("result.average_accuracy", report.average_acc());
        println!(
            "overall accuracy {:.2}% against {}",
            100.0 * report.overall_acc(),
            reference.display()
        );
    }

    timings.write(&out)?;
    manifest.write(&out)?;
    println!(
        "clustered {} pixels into {} groups -> {}",
        pixels.len(),
        config.k(),
        out.display()
    );
    Ok(())
}

fn format_indices(indices: &[u32]) -> String {
    let parts: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
    parts.join(" ")
}

pub fn run_unmix(config: &PipelineConfig, no_cache: bool) -> Result<()> {
    let out = config.out();
    ensure_dir(&out)?;
    let mut manifest = Manifest::new("unmix");
    let mut timings = Timings::new();
    record_params(config, &mut manifest);

    let (pixels, _, _) = preprocess(config, &mut manifest, &mut timings)?;
    let model = cached_unmix(config, no_cache, &pixels, &mut manifest, &mut timings)?;

    manifest
        .set("result.materials", model.material_count())
        .set(
            "result.endmember_pixels",
            format_indices_usize(model.endmember_indices()),
        );
    write_artifact(
        &mut manifest,
        &out,
        "endmembers.csv",
        endmembers_csv(&model).as_bytes(),
    )?;
    write_artifact(
        &mut manifest,
        &out,
        "abundances.csv",
        abundances_csv(&model).as_bytes(),
    )?;

    timings.write(&out)?;
    manifest.write(&out)?;
    println!(
        "{} materials over {} pixels -> {}",
        model.material_count(),
        pixels.len(),
        out.display()
    );
    Ok(())
}

fn format_indices_usize(indices: &[usize]) -> String {
    let parts: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
    parts.join(" ")
}

pub fn run_graph_stats(config: &PipelineConfig, no_cache: bool) -> Result<()> {
    let out = config.out();
    ensure_dir(&out)?;
    let mut manifest = Manifest::new("graph-stats");
    let mut timings = Timings::new();
    manifest
        .set("param.n_neighbors", config.n_neighbors())
        .set("param.factor", config.factor())
        .set("param.normalize", config.normalize())
        .set(
            "param.eigen_tolerance",
            config.cluster_params().eigen_tolerance,
        )
        .set("param.time", config.time());

    let (pixels, _, _) = preprocess(config, &mut manifest, &mut timings)?;
    let opts = config.cluster_params().graph_options();
    let graph = cached_graph(
        config,
        no_cache,
        &pixels,
        &opts,
        &mut manifest,
        &mut timings,
    )?;

    let pi = graph.stationary();
    let (pi_min, pi_max) = pi.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| {
        (lo.min(p), hi.max(p))
    });
    let mut stats = String::new();
    stats.push_str(&format!("nodes: {}\n", graph.len()));
    stats.push_str(&format!("edges: {}\n", graph.edge_count()));
    stats.push_str(&format!("bridges: {}\n", graph.bridges().len()));
    stats.push_str(&format!(
        "eigenpairs retained: {}\n",
        graph.eigenvalues().len()
    ));
    stats.push_str(&format!("stationary min: {pi_min}\n"));
    stats.push_str(&format!("stationary max: {pi_max}\n"));
    write_artifact(&mut manifest, &out, "graph-stats.txt", stats.as_bytes())?;

    let mut eigen = String::from("index,eigenvalue\n");
    for (i, lambda) in graph.eigenvalues().iter().enumerate() {
        eigen.push_str(&format!("{i},{lambda}\n"));
    }
    write_artifact(&mut manifest, &out, "eigenvalues.csv", eigen.as_bytes())?;

    manifest
        .set("result.nodes", graph.len())
        .set("result.edges", graph.edge_count())
        .set("result.bridges", graph.bridges().len());
    timings.write(&out)?;
    manifest.write(&out)?;
    print!("{stats}");
    Ok(())
}

/// Labels for scoring: crown-vote both maps when crowns are given, pair
/// pixels directly otherwise.
fn eval_report(
    config: &PipelineConfig,
    predicted: &IntGrid,
    reference: &IntGrid,
    manifest: &mut Manifest,
) -> Result<EvalReport> {
    let k = config.k.unwrap_or_else(|| {
        let max = |g: &IntGrid| g.values().iter().copied().max().unwrap_or(0);
        max(predicted).max(max(reference)) as usize
    });
    manifest.set("param.k", k);
    if let Some(path) = &config.crowns {
        manifest.input("crowns", path)?;
        let crowns = CrownMap::new(read_grid_csv(path)?)?;
        manifest.set("param.crowns", crowns.count());
        Ok(evaluate_crown_weighted(predicted, reference, &crowns, k)?)
    } else {
        let (pred, refer) = paired_labels(predicted, reference)?;
        Ok(evaluate(&pred, &refer, k)?)
    }
}

pub fn run_eval(config: &PipelineConfig) -> Result<()> {
    let out = config.out();
    ensure_dir(&out)?;
    let mut manifest = Manifest::new("eval");
    let mut timings = Timings::new();

    let predicted_path = config
        .predicted
        .clone()
        .ok_or_else(|| crate::error::CliError::flag("predicted", "no predicted label file"))?;
    let reference_path = config
        .reference
        .clone()
        .ok_or_else(|| crate::error::CliError::flag("reference", "no reference label file"))?;
    manifest.input("predicted", &predicted_path)?;
    manifest.input("reference", &reference_path)?;

    let predicted = read_grid_csv(&predicted_path)?;
    let reference = read_grid_csv(&reference_path)?;
    let report = timings.stage("evaluate", || {
        eval_report(config, &predicted, &reference, &mut manifest)
    })?;

    let table = report.text_table();
    write_artifact(&mut manifest, &out, "report.txt", table.as_bytes())?;
    write_artifact(&mut manifest, &out, "report.csv", report.csv().as_bytes())?;
    manifest
        .set("result.overall_accuracy", report.overall_acc())
        .set("result.average_accuracy", report.average_acc())
        .set("result.alignment", format_indices(report.alignment()));

    timings.write(&out)?;
    manifest.write(&out)?;
    print!("{table}");
    Ok(())
}

pub struct SynthOutput {
    pub spec: SyntheticSceneSpec,
    pub out: std::path::PathBuf,
}

pub fn run_synth(args: SynthOutput) -> Result<()> {
    let SynthOutput { spec, out } = args;
    ensure_dir(&out)?;
    let mut manifest = Manifest::new("synth");
    let mut timings = Timings::new();
    manifest
        .set("param.pixels", spec.pixels)
        .set("param.bands", spec.bands)
        .set("param.endmembers", spec.endmembers)
        .set("param.concentration", spec.concentration)
        .set(
            "param.snr_db",
            spec.snr_db.map_or("none".into(), |s| s.to_string()),
        )
        .set("param.cluster_sizes", {
            let parts: Vec<String> = spec.cluster_sizes.iter().map(|s| s.to_string()).collect();
            parts.join(" ")
        })
        .set("param.seed", spec.seed);

    let scene = timings.stage("generate", || generate(&spec))?;
    let hdr = write_envi(&scene.cube, &out.join("scene"), Interleave::Bsq)?;
    manifest.set(
        "output.scene.img.sha256",
        crate::artifacts::hash_file(&hdr.with_extension("img"))?,
    );
    manifest.set(
        "output.scene.hdr.sha256",
        crate::artifacts::hash_file(&hdr)?,
    );

    write_artifact(
        &mut manifest,
        &out,
        "truth.csv",
        grid_csv_text(&scene.labels, "label").as_bytes(),
    )?;
    write_artifact(
        &mut manifest,
        &out,
        "endmembers.csv",
        planted_endmembers_csv(&scene.endmembers, &scene.pure_pixels, spec.bands).as_bytes(),
    )?;
    manifest.set("result.achieved_snr_db", scene.achieved_snr_db);

    timings.write(&out)?;
    manifest.write(&out)?;
    println!(
        "synthetic scene {}x{}x{} -> {}",
        scene.cube.rows(),
        scene.cube.cols(),
        spec.bands,
        out.display()
    );
    Ok(())
}

fn planted_endmembers_csv(spectra: &[f64], pure_pixels: &[usize], bands: usize) -> String {
    let mut out = String::from("endmember,pixel_index");
    for b in 0..bands {
        out.push_str(&format!(",band_{b}"));
    }
    out.push('\n');
    for (j, &pixel) in pure_pixels.iter().enumerate() {
        out.push_str(&format!("{},{pixel}", j + 1));
        for v in &spectra[j * bands..(j + 1) * bands] {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
