//! End-to-end pipeline: every stage writes its tables as CSV (canonical) and
//! JSON (mirror) into one output directory, followed by a run manifest.

mod config;
mod figures;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::{BrayInput, Inputs, PipelineConfig, Toggles, MIN_REPORT_PERMUTATIONS};
pub use figures::{emit_figures, FIGURES};

use crate::clustering::{ethnic_profile_distance, ward_cluster, Dendrogram};
use crate::distance::{compute, DistanceMatrix, Metric};
use crate::diversity::{diversity_frame, relative_abundance, By, DiversityFrame};
use crate::error::{Error, Result};
use crate::ingest::{build_abundance_table, csv_write_err, load_households, log_transform, AbundanceTable, LoadReport, RegroupConfig};
use crate::inference::PermutationPlan;
use crate::npstats::{kruskal_wallis, pairwise_mann_whitney, write_pairwise_csv, RankTestResult};
use crate::ordination::{centroids, envfit, pcoa, write_arrows_csv, FittedArrow, Ordination};
use crate::permanova::{dispersion, pairwise_permanova, permanova, Design, PermanovaTable};

/// Name of the marker file left behind when a stage fails.
pub const FAILED_MARKER: &str = "FAILED";
pub const MANIFEST: &str = "manifest.json";

/// Output directory that remembers what has been written to it.
#[derive(Debug)]
pub struct Bundle {
    pub dir: PathBuf,
    written: Vec<String>,
}

impl Bundle {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let marker = dir.join(FAILED_MARKER);
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        }
        Ok(Self { dir, written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_json<S: Serialize + ?Sized>(&mut self, name: &str, value: &S) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("json: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    fn mark_failed(&self, err: &Error) {
        let path = self.path(FAILED_MARKER);
        if let Err(e) = fs::write(&path, format!("{err}\n")) {
            log::error!("could not write {}: {e}", path.display());
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Reads the raw tables (or a saved abundance CSV) and writes the abundance
/// table plus, for raw input, the load report.
pub fn stage_ingest(cfg: &PipelineConfig, bundle: &mut Bundle) -> Result<(AbundanceTable, Option<LoadReport>)> {
    let i = &cfg.inputs;
    let (table, report) = match (&i.abundance, &i.demographics, &i.resources, &i.regroup) {
        (Some(a), ..) => (AbundanceTable::read_csv(a, None)?, None),
        (None, Some(d), Some(r), Some(g)) => {
            let regroup = RegroupConfig::load(g)?;
            let households = load_households(d, r, &regroup)?;
            log::info!(
                "loaded {} households ({} dropped)",
                households.report.retained,
                households.report.dropped
            );
            let table = build_abundance_table(&households)?;
            (table, Some(households.report))
        }
        _ => return Err(Error::Config("incomplete inputs".into())),
    };
    bundle.write_csv("abundance.csv", |w| table.write_csv(w))?;
    bundle.write_json("abundance.json", &table)?;
    if let Some(r) = &report {
        bundle.write_json("load_report.json", r)?;
    }
    Ok((table, report))
}

/// Distance matrix between treatments for `metric`, following the config's
/// choice of log or raw input for Bray–Curtis.
pub fn treatment_distances(cfg: &PipelineConfig, table: &AbundanceTable, metric: Metric) -> Result<DistanceMatrix<f64>> {
    let rows: Array2<f64> = match (metric, cfg.bray_input) {
        (Metric::BrayCurtis, BrayInput::Raw) => table.counts_as(),
        _ => log_transform(table, cfg.log_variant),
    };
    compute(metric, &rows, Some(table.labels()))
}

fn plan(cfg: &PipelineConfig, n: usize) -> Result<PermutationPlan> {
    PermutationPlan::new(n, cfg.n_perm, cfg.seed)
}

pub fn stage_permanova(
    cfg: &PipelineConfig,
    table: &AbundanceTable,
    d: &DistanceMatrix<f64>,
    bundle: &mut Bundle,
) -> Result<PermanovaTable<f64>> {
    let terms = cfg
        .terms
        .iter()
        .map(|t| table.factor_by_name(t).ok_or_else(|| Error::Config(format!("unknown term `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let result = permanova(d, &Design::new(terms)?, &plan(cfg, d.len())?)?;
    let m = d.metric.name();
    bundle.write_csv(&format!("permanova_{m}.csv"), |w| result.write_csv(w))?;
    bundle.write_json(&format!("permanova_{m}.json"), &result)?;
    Ok(result)
}

/// Pairwise PERMANOVA and the dispersion test on the grouping factor.
pub fn stage_dispersion(cfg: &PipelineConfig, table: &AbundanceTable, d: &DistanceMatrix<f64>, bundle: &mut Bundle) -> Result<()> {
    let group = group_factor(cfg, table)?;
    let m = d.metric.name();
    let g = &cfg.group;
    let p = plan(cfg, d.len())?;
    let pairs = pairwise_permanova(d, &group, &p)?;
    bundle.write_csv(&format!("pairwise_permanova_{m}_{g}.csv"), |w| pairs.write_csv(w))?;
    bundle.write_json(&format!("pairwise_permanova_{m}_{g}.json"), &pairs)?;
    let disp = dispersion(d, &group, &p)?;
    let levels: Vec<String> = group.codes.iter().map(|&c| group.levels[c].clone()).collect();
    bundle.write_csv(&format!("dispersion_{m}_{g}_distances.csv"), |w| disp.write_distances_csv(w, &levels))?;
    bundle.write_csv(&format!("dispersion_{m}_{g}_tests.csv"), |w| disp.write_tests_csv(w))?;
    bundle.write_json(&format!("dispersion_{m}_{g}.json"), &disp)?;
    Ok(())
}

fn group_factor(cfg: &PipelineConfig, table: &AbundanceTable) -> Result<crate::factor::Factor> {
    table
        .factor_by_name(&cfg.group)
        .ok_or_else(|| Error::Config(format!("unknown group factor `{}`", cfg.group)))
}

/// PCoA scores (with the group column), eigenvalues and per-term centroids.
/// Skipped when `k = 0`.
pub fn stage_pcoa(
    cfg: &PipelineConfig,
    table: &AbundanceTable,
    d: &DistanceMatrix<f64>,
    bundle: &mut Bundle,
) -> Result<Option<Ordination<f64>>> {
    if cfg.k == 0 {
        log::warn!("k = 0: ordination skipped");
        return Ok(None);
    }
    let m = d.metric.name();
    let ord = pcoa(d, cfg.k)?;
    if ord.has_negative_eigenvalues() {
        log::info!("{m}: Gower matrix has negative eigenvalues; their axes carry zero scores");
    }
    let group = group_factor(cfg, table)?;
    let axis_labels = ord.axis_labels();
    bundle.write_csv(&format!("pcoa_{m}_scores.csv"), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["item".to_string(), cfg.group.clone()];
        header.extend(axis_labels.iter().cloned());
        wtr.write_record(&header).map_err(csv_write_err)?;
        for (i, label) in ord.labels.iter().enumerate() {
            let mut rec = vec![label.clone(), group.levels[group.codes[i]].clone()];
            rec.extend(ord.scores.row(i).iter().map(|x| x.to_string()));
            wtr.write_record(&rec).map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    })?;
    bundle.write_csv(&format!("pcoa_{m}_eigenvalues.csv"), |w| ord.write_eigenvalues_csv(w))?;
    bundle.write_json(&format!("pcoa_{m}.json"), &ord)?;

    let mut all_centroids = Vec::new();
    for term in &cfg.terms {
        let f = table
            .factor_by_name(term)
            .ok_or_else(|| Error::Config(format!("unknown term `{term}`")))?;
        let c = centroids(&ord, &f)?;
        bundle.write_csv(&format!("centroids_{m}_{term}.csv"), |w| c.write_csv(w, &axis_labels))?;
        all_centroids.push(c);
    }
    bundle.write_json(&format!("centroids_{m}.json"), &all_centroids)?;
    Ok(Some(ord))
}

/// Fitted vectors of each fuel's per-treatment share on the chosen axes.
pub fn stage_envfit(
    cfg: &PipelineConfig,
    table: &AbundanceTable,
    ord: &Ordination<f64>,
    metric: Metric,
    bundle: &mut Bundle,
) -> Result<Vec<FittedArrow<f64>>> {
    let m = metric.name();
    let shares = relative_abundance::<f64>(table, By::Treatment)?;
    let axes: Vec<usize> = cfg.envfit_axes.iter().map(|a| a - 1).collect();
    let arrows = envfit(ord, &shares.proportions, &table.fuels, &axes, &plan(cfg, table.n_treatments())?)?;
    let axis_labels = ord.axis_labels();
    let fit_labels: Vec<String> = axes.iter().map(|&a| axis_labels[a].clone()).collect();
    bundle.write_csv(&format!("envfit_{m}.csv"), |w| write_arrows_csv(&arrows, &fit_labels, w))?;
    bundle.write_json(&format!("envfit_{m}.json"), &arrows)?;
    Ok(arrows)
}

pub fn stage_clustering(cfg: &PipelineConfig, table: &AbundanceTable, bundle: &mut Bundle) -> Result<Dendrogram<f64>> {
    let d = ethnic_profile_distance::<f64>(table, cfg.log_variant)?;
    let tree = ward_cluster(&d, cfg.ward_variant)?;
    bundle.write_csv("ethnic_distance.csv", |w| d.write_csv(w))?;
    bundle.write_csv("dendrogram_merges.csv", |w| tree.write_merges_csv(w))?;
    bundle.write_csv("heatmap.csv", |w| tree.write_heatmap_csv(&d, w))?;
    bundle.write_json("dendrogram.json", &tree.to_json())?;
    Ok(tree)
}

pub fn stage_diversity(cfg: &PipelineConfig, table: &AbundanceTable, bundle: &mut Bundle) -> Result<DiversityFrame<f64>> {
    let k = table
        .factor_names
        .iter()
        .position(|f| *f == cfg.group)
        .ok_or_else(|| Error::Config(format!("unknown group factor `{}`", cfg.group)))?;
    let frame = diversity_frame::<f64>(table, k)?;
    bundle.write_csv("diversity_treatments.csv", |w| frame.write_treatments_csv(w))?;
    bundle.write_csv("diversity_groups.csv", |w| frame.write_groups_csv(w))?;
    bundle.write_json("diversity.json", &frame)?;
    for (name, by) in [("treatment", By::Treatment), ("group", By::Group(k)), ("overall", By::Overall)] {
        let r = relative_abundance::<f64>(table, by)?;
        bundle.write_csv(&format!("relative_abundance_{name}.csv"), |w| r.write_csv(w))?;
        bundle.write_json(&format!("relative_abundance_{name}.json"), &r)?;
    }
    Ok(frame)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankTestRow {
    pub variable: String,
    pub factor: String,
    pub result: RankTestResult<f64>,
}

/// Kruskal–Wallis and pairwise Mann–Whitney on the per-treatment Shannon
/// index and on each fuel's per-treatment share.
pub fn stage_tests(cfg: &PipelineConfig, table: &AbundanceTable, frame: &DiversityFrame<f64>, bundle: &mut Bundle) -> Result<Vec<RankTestRow>> {
    let group = group_factor(cfg, table)?;
    let shares = relative_abundance::<f64>(table, By::Treatment)?;
    let mut variables = vec![("shannon".to_string(), frame.values())];
    for (g, fuel) in table.fuels.iter().enumerate() {
        variables.push((format!("share_{fuel}"), shares.proportions.column(g).to_vec()));
    }
    let mut rows = Vec::new();
    let mut pairwise_json = Vec::new();
    for (name, values) in &variables {
        rows.push(RankTestRow {
            variable: name.clone(),
            factor: cfg.group.clone(),
            result: kruskal_wallis(values, &group)?,
        });
        let pairs = pairwise_mann_whitney(values, &group)?;
        bundle.write_csv(&format!("mwu_{name}.csv"), |w| write_pairwise_csv(&pairs, w))?;
        pairwise_json.push(json!({ "variable": name, "pairs": pairs }));
    }
    bundle.write_csv("kruskal_wallis.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["variable", "factor", "H", "df", "p", "tie_correction", "method"])
            .map_err(csv_write_err)?;
        for r in &rows {
            wtr.write_record([
                r.variable.clone(),
                r.factor.clone(),
                r.result.statistic.to_string(),
                r.result.df.map(|d| d.to_string()).unwrap_or_default(),
                r.result.p.to_string(),
                r.result.tie_correction.to_string(),
                r.result.method.tag().to_string(),
            ])
            .map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    })?;
    bundle.write_json("kruskal_wallis.json", &rows)?;
    bundle.write_json("mann_whitney.json", &pairwise_json)?;
    Ok(rows)
}

/// Everything a pipeline run produced, for callers that want the numbers
/// without re-reading the CSVs.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// Files written, in write order.
    pub outputs: Vec<String>,
    pub load_report: Option<LoadReport>,
    pub abundance: AbundanceTable,
    pub permanova: Vec<PermanovaTable<f64>>,
    pub dendrogram: Option<Dendrogram<f64>>,
    pub diversity: DiversityFrame<f64>,
    pub tests: Vec<RankTestRow>,
    pub figures: Vec<PathBuf>,
}

fn file_name(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref()
        .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
}

fn write_manifest(cfg: &PipelineConfig, bundle: &mut Bundle) -> Result<()> {
    let i = &cfg.inputs;
    let mut inputs = Vec::new();
    for (role, p) in [
        ("demographics", &i.demographics),
        ("resources", &i.resources),
        ("regroup", &i.regroup),
        ("abundance", &i.abundance),
    ] {
        if let Some(path) = p {
            inputs.push(json!({ "role": role, "file": file_name(p), "sha256": sha256_file(path)? }));
        }
    }
    let mut outputs: Vec<String> = bundle.written().to_vec();
    outputs.sort();
    let outputs = outputs
        .iter()
        .map(|name| Ok(json!({ "file": name, "sha256": sha256_file(&bundle.path(name))? })))
        .collect::<Result<Vec<_>>>()?;
    let manifest = json!({
        "tool": "fuelseg",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "n_perm": cfg.n_perm,
        "metrics": cfg.metrics,
        "terms": cfg.terms,
        "group": cfg.group,
        "log_variant": cfg.log_variant,
        "bray_input": cfg.bray_input,
        "ward_variant": cfg.ward_variant,
        "k": cfg.k,
        "envfit_axes": cfg.envfit_axes,
        "enable": cfg.enable,
        "inputs": inputs,
        "outputs": outputs,
    });
    bundle.write_json(MANIFEST, &manifest)
}

/// Runs every stage in order. A failing stage leaves its predecessors'
/// outputs in place, writes a `FAILED` marker, and returns
/// [`Error::Stage`].
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    stage("config", cfg.validate())?;
    let mut bundle = stage("output", Bundle::create(&cfg.out_dir))?;
    match run_stages(cfg, &mut bundle) {
        Ok(summary) => Ok(summary),
        Err(e) => {
            bundle.mark_failed(&e);
            Err(e)
        }
    }
}

fn run_stages(cfg: &PipelineConfig, bundle: &mut Bundle) -> Result<RunSummary> {
    let (abundance, load_report) = stage("ingest", stage_ingest(cfg, bundle))?;
    let mut tables = Vec::new();
    for &metric in &cfg.metrics {
        let d = stage("distance", treatment_distances(cfg, &abundance, metric))?;
        stage("distance", bundle.write_csv(&format!("distance_{}.csv", metric.name()), |w| d.write_csv(w)))?;
        tables.push(stage("permanova", stage_permanova(cfg, &abundance, &d, bundle))?);
        stage("dispersion", stage_dispersion(cfg, &abundance, &d, bundle))?;
        if let Some(ord) = stage("ordination", stage_pcoa(cfg, &abundance, &d, bundle))? {
            stage("envfit", stage_envfit(cfg, &abundance, &ord, metric, bundle))?;
        }
    }
    let dendrogram = if cfg.enable.clustering {
        Some(stage("clustering", stage_clustering(cfg, &abundance, bundle))?)
    } else {
        None
    };
    let diversity = stage("diversity", stage_diversity(cfg, &abundance, bundle))?;
    let tests = stage("tests", stage_tests(cfg, &abundance, &diversity, bundle))?;
    let figures = if cfg.enable.figures {
        stage("figures", emit_figures(bundle, cfg.metrics[0], &cfg.group))?
    } else {
        Vec::new()
    };
    stage("manifest", write_manifest(cfg, bundle))?;
    Ok(RunSummary {
        out_dir: bundle.dir.clone(),
        outputs: bundle.written().to_vec(),
        load_report,
        abundance,
        permanova: tables,
        dendrogram,
        diversity,
        tests,
        figures,
    })
}
