//! Simulation scenarios and the estimator benchmark.
//!
//! Two structure generators are provided: a fully random one (multinomial
//! clusters, an Erdős–Rényi graph and a global effect) and a frozen
//! region-ordered stand-in for a real country structure, whose first `d`
//! nodes form nested subsets. Data are drawn from `MVN(0, R)`, optionally
//! mixed with an unobserved cluster structure and thinned by a monotone
//! missingness mask.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::car::{SpatialGraph, SpectralGraphCache};
use crate::covstruct::{assemble_correlation, build_cluster_matrix, CovariateSet, ParameterVector};
use crate::error::{Error, Result};
use crate::identify::default_beta_grid;
use crate::init::{ive, pearson_type, qp_init, StandardizedErrors};
use crate::linalg::{to_correlation, Mask, Matrix};
use crate::mle::{fit_sce_errors, Dataset, FitOptions};
use crate::rng::{self, replicate_stream, stream_rng};
use crate::shrink::{lambda_bootstrap, nearest_pd_correlation, shrinkage_closed_form, wsce};

pub use crate::rng::sample_mvn;

/// Each upper-triangle pair is an edge with probability `p`.
pub fn erdos_renyi<G: Rng + ?Sized>(d: usize, p: f64, rng: &mut G) -> Result<SpatialGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("edge probability {p} outside [0, 1]")));
    }
    let mut edges = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    SpatialGraph::from_edges(d, &edges)
}

/// I.i.d. categorical labels.
pub fn multinomial_membership<G: Rng + ?Sized>(d: usize, probs: &[f64], rng: &mut G) -> Result<Vec<usize>> {
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidInput("probabilities must be nonnegative".into()));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("probabilities sum to {s}")));
    }
    Ok((0..d)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * s;
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return k;
                }
            }
            probs.len() - 1
        })
        .collect())
}

/// `ξ R + (1 − ξ)(0.01 I + 0.99 F)`. Here `ξ` weights the model; scenario
/// configs use the opposite orientation (`xi = 0` is model-true).
pub fn mix_misspecification(r_model: &Matrix, f_miss: &Matrix, xi: f64) -> Result<Matrix> {
    if r_model.shape() != f_miss.shape() {
        return Err(Error::Dimension("model and misspecification shapes differ".into()));
    }
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::InvalidInput(format!("mixing weight {xi} outside [0, 1]")));
    }
    let d = r_model.nrows();
    let tilde = Matrix::identity(d, d) * 0.01 + f_miss * 0.99;
    let mut out = r_model * xi + tilde * (1.0 - xi);
    for i in 0..d {
        out[(i, i)] = 1.0;
    }
    Ok(out)
}

/// `(1/d²) Σ |R*_ij − R̄_ij|`.
pub fn mae(r_true: &Matrix, r_est: &Matrix) -> f64 {
    let d = r_true.nrows() as f64;
    r_true.iter().zip(r_est.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / (d * d)
}

/// Shrinkage of the sample covariance towards a scaled identity with the
/// closed-form intensity, returned on the correlation scale. Missing entries
/// are treated as zero.
pub fn ledoit_wolf(errors: &StandardizedErrors) -> Matrix {
    let (t, d) = (errors.n_times(), errors.dim());
    let x = errors.values();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / t.max(1) as f64).collect();
    let xc = Matrix::from_fn(t, d, |i, j| x[(i, j)] - mean[j]);
    let s = xc.transpose() * &xc / t.max(1) as f64;
    let m = s.trace() / d as f64;
    let eye = Matrix::identity(d, d);
    let dist2 = (&s - &eye * m).norm_squared() / d as f64;
    let shrink = if dist2 <= 0.0 {
        1.0
    } else {
        let mut b_bar = 0.0;
        for i in 0..t {
            let row = xc.row(i);
            let outer = row.transpose() * row;
            b_bar += (outer - &s).norm_squared() / d as f64;
        }
        b_bar /= (t * t) as f64;
        b_bar.min(dist2) / dist2
    };
    let sigma = &eye * (shrink * m) + s * (1.0 - shrink);
    to_correlation(&sigma)
}

/// Share of variables unobserved at each of 11 periods, from a monotone country panel.
const MONOTONE_MISSING: [f64; 11] = [121.0, 98.0, 74.0, 56.0, 35.0, 26.0, 7.0, 4.0, 2.0, 0.0, 0.0];
const MONOTONE_TOTAL: f64 = 196.0;

/// Monotone mask: variables become observed at staggered start times and stay observed.
pub fn monotone_mask<G: Rng + ?Sized>(t: usize, d: usize, rng: &mut G) -> Mask {
    let mut order: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut mask = Mask::from_element(t, d, true);
    for step in 0..t {
        let idx = (step * 11 / t.max(1)).min(10);
        let frac = MONOTONE_MISSING[idx] / MONOTONE_TOTAL;
        let m = (frac * d as f64).round() as usize;
        for &j in order.iter().take(m.min(d)) {
            mask[(step, j)] = false;
        }
    }
    mask
}

/// Frozen region-ordered structure on 195 nodes.
#[derive(Clone, Debug)]
pub struct MasterStructure {
    /// Sub-region label of each node.
    pub region: Vec<usize>,
    /// Colonizer label; nodes without a colonizer get singleton labels.
    pub colonizer: Vec<usize>,
    pub graph: SpatialGraph,
}

/// Cumulative block sizes of the master structure.
pub const MASTER_BLOCKS: [usize; 5] = [14, 32, 65, 115, 195];

const MASTER_SEED: u64 = 0x5eed_2024;

/// The frozen stand-in structure (generated once from a fixed seed).
pub fn master_structure() -> &'static MasterStructure {
    static CELL: OnceLock<MasterStructure> = OnceLock::new();
    CELL.get_or_init(build_master)
}

fn build_master() -> MasterStructure {
    let mut rng = stream_rng(MASTER_SEED, rng::TAG_STRUCTURE);
    // Sub-region sizes per block.
    let blocks: [&[usize]; 5] = [
        &[6, 8],
        &[9, 9],
        &[11, 11, 11],
        &[12, 13, 12, 13],
        &[10, 10, 10, 10, 10, 10, 10, 10],
    ];
    let mut region = Vec::new();
    let mut pos: Vec<(f64, f64)> = Vec::new();
    let mut sub = 0;
    for (b, sizes) in blocks.iter().enumerate() {
        for (s, &n) in sizes.iter().enumerate() {
            let cx = b as f64 * 9.0 + (s % 2) as f64 * 3.5;
            let cy = (s / 2) as f64 * 3.5;
            for _ in 0..n {
                let dx: f64 = rng.sample(rand_distr::StandardNormal);
                let dy: f64 = rng.sample(rand_distr::StandardNormal);
                pos.push((cx + 1.1 * dx, cy + 1.1 * dy));
                region.push(sub);
            }
            sub += 1;
        }
    }
    let d = region.len();
    let island: Vec<bool> = (0..d).map(|_| rng.random::<f64>() < 0.08).collect();
    let mut edges = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if island[i] || island[j] {
                continue;
            }
            let dist = ((pos[i].0 - pos[j].0).powi(2) + (pos[i].1 - pos[j].1).powi(2)).sqrt();
            if dist < 1.0 {
                edges.push((i, j));
            }
        }
    }
    let probs = [0.35, 0.25, 0.2, 0.1, 0.06, 0.04];
    let mut colonizer = Vec::with_capacity(d);
    let mut next_single = probs.len();
    for i in 0..d {
        let k = match i {
            0 | 1 => 1,
            2 | 3 => 2,
            _ => multinomial_membership(1, &probs, &mut rng).expect("valid probabilities")[0],
        };
        if k == 0 {
            colonizer.push(next_single);
            next_single += 1;
        } else {
            colonizer.push(k);
        }
    }
    MasterStructure {
        region,
        colonizer,
        graph: SpatialGraph::from_edges(d, &edges).expect("valid edges"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Fss,
    Structured,
}

impl ScenarioKind {
    /// `(α₀, α_A, α_B, α_C, δ, β)` defaults.
    pub fn default_theta(self) -> ParameterVector {
        let (a, b, c, delta, beta) = match self {
            Self::Fss => (0.05, 0.09, 0.11, 0.74, 0.982),
            Self::Structured => (0.11, 0.05, 0.09, 0.01, 0.35),
        };
        let a0 = 1.0 - a - b - c - delta;
        ParameterVector::new(vec![a0, a, b, c], Some(delta), Some(beta)).expect("valid defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPattern {
    None,
    Monotone,
    /// A fixed `T × d` observed mask.
    Fixed(Vec<Vec<bool>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Pearson,
    LedoitWolf,
    Ive,
    Sce,
    Wsce,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Pearson,
        Estimator::LedoitWolf,
        Estimator::Ive,
        Estimator::Sce,
        Estimator::Wsce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pearson => "pearson",
            Self::LedoitWolf => "ledoit_wolf",
            Self::Ive => "ive",
            Self::Sce => "sce",
            Self::Wsce => "wsce",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageChoice {
    /// Closed form for known scales on complete data, bootstrap otherwise.
    Auto,
    ClosedForm,
    Bootstrap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub d: usize,
    pub t: usize,
    pub theta_star: ParameterVector,
    /// Misspecification weight: 0 keeps the model, 1 drops the covariates entirely.
    pub xi: f64,
    pub missing: MissingPattern,
    pub known_musigma: bool,
    pub seed: u64,
    pub beta_grid: Vec<f64>,
    pub shrinkage: ShrinkageChoice,
    pub bootstrap_b: usize,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, d: usize, seed: u64) -> Self {
        Self {
            kind,
            d,
            t: 11,
            theta_star: kind.default_theta(),
            xi: 0.0,
            missing: MissingPattern::None,
            known_musigma: true,
            seed,
            beta_grid: default_beta_grid(),
            shrinkage: ShrinkageChoice::Auto,
            bootstrap_b: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidInput("d must be at least 2".into()));
        }
        if self.t < 1 {
            return Err(Error::InvalidInput("T must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::InvalidInput(format!("xi {} outside [0, 1]", self.xi)));
        }
        if self.kind == ScenarioKind::Structured && self.d > master_structure().region.len() {
            return Err(Error::InvalidInput(format!(
                "structured scenario supports at most {} variables",
                master_structure().region.len()
            )));
        }
        if let MissingPattern::Fixed(rows) = &self.missing {
            if rows.len() != self.t || rows.iter().any(|r| r.len() != self.d) {
                return Err(Error::Dimension("fixed mask must be T x d".into()));
            }
        }
        if self.theta_star.alpha.len() != 4 || self.theta_star.delta.is_none() {
            return Err(Error::InvalidParameters(
                "scenario parameters must be (alpha_0, alpha_A, alpha_B, alpha_C, delta, beta)".into(),
            ));
        }
        Ok(())
    }
}

/// Covariate set `{comcol, region, global, spatial}` for a scenario replicate.
/// Cluster labels and graph behind one replicate's covariate set.
#[derive(Clone, Debug)]
pub struct ScenarioStructure {
    pub comcol: Vec<usize>,
    pub region: Vec<usize>,
    pub graph: SpatialGraph,
}

impl ScenarioStructure {
    /// `{comcol, region, global, contig}`.
    pub fn covariate_set(&self) -> Result<CovariateSet> {
        let cache = Arc::new(SpectralGraphCache::new(self.graph.clone())?);
        CovariateSet::new(self.comcol.len())?
            .with_cluster("comcol", self.comcol.clone())?
            .with_cluster("region", self.region.clone())?
            .with_global("global")?
            .with_spatial_cache("contig", cache)
    }
}

pub fn scenario_structure(config: &ScenarioConfig, replicate: u64) -> Result<ScenarioStructure> {
    let d = config.d;
    let (comcol, region, graph) = match config.kind {
        ScenarioKind::Fss => {
            let mut rc = replicate_stream(config.seed, replicate, rng::TAG_CLUSTERS);
            let a = multinomial_membership(d, &[1.0 / 3.0; 3], &mut rc)?;
            let b = multinomial_membership(d, &[0.1; 10], &mut rc)?;
            let mut rg = replicate_stream(config.seed, replicate, rng::TAG_GRAPH);
            let p = ((d as f64).ln() / d as f64).min(1.0);
            (a, b, erdos_renyi(d, p, &mut rg)?)
        }
        ScenarioKind::Structured => {
            let m = master_structure();
            let nodes: Vec<usize> = (0..d).collect();
            (
                m.colonizer[..d].to_vec(),
                m.region[..d].to_vec(),
                m.graph.induced(&nodes),
            )
        }
    };
    Ok(ScenarioStructure {
        comcol,
        region,
        graph,
    })
}

/// The roster with every pairwise interaction used for model selection on
/// the structured stand-in.
pub fn tfr_style_roster(d: usize) -> Result<CovariateSet> {
    let config = ScenarioConfig::new(ScenarioKind::Structured, d, 0);
    config.validate()?;
    scenario_structure(&config, 0)?
        .covariate_set()?
        .with_interaction("comcol", "region")?
        .with_interaction("comcol", "contig")?
        .with_interaction("region", "contig")
}

/// One simulated dataset with its generating structure.
#[derive(Clone, Debug)]
pub struct SimulatedReplicate {
    pub structure: ScenarioStructure,
    pub set: CovariateSet,
    pub r_true: Matrix,
    /// Raw observations (`μ = 0`, `σ = 1`).
    pub y: Matrix,
    pub mask: Mask,
}

impl SimulatedReplicate {
    /// Dataset with the known zero means and unit scales.
    pub fn known_dataset(&self) -> Result<Dataset> {
        let (t, d) = self.y.shape();
        Dataset::known(
            self.y.clone(),
            self.mask.clone(),
            Matrix::zeros(t, d),
            Matrix::from_element(t, d, 1.0),
        )
    }

    pub fn unknown_dataset(&self) -> Result<Dataset> {
        Dataset::unknown(self.y.clone(), self.mask.clone())
    }
}

/// Simulates replicate `replicate` of a scenario.
pub fn simulate(config: &ScenarioConfig, replicate: u64) -> Result<SimulatedReplicate> {
    config.validate()?;
    let structure = scenario_structure(config, replicate)?;
    let set = structure.covariate_set()?;
    let r_model = assemble_correlation(&config.theta_star, &set)?;
    let r_true = if config.xi > 0.0 {
        let mut rm = replicate_stream(config.seed, replicate, rng::TAG_MISSPEC);
        let labels = multinomial_membership(config.d, &[1.0 / 3.0; 3], &mut rm)?;
        let f = build_cluster_matrix(&labels)?;
        mix_misspecification(&r_model, f.fixed_matrix().expect("fixed"), 1.0 - config.xi)?
    } else {
        r_model
    };
    let mut rd = replicate_stream(config.seed, replicate, rng::TAG_DATA);
    let y = sample_mvn(&r_true, config.t, &mut rd)?;
    let mask = match &config.missing {
        MissingPattern::None => Mask::from_element(config.t, config.d, true),
        MissingPattern::Monotone => {
            let mut rk = replicate_stream(config.seed, replicate, rng::TAG_MASK);
            monotone_mask(config.t, config.d, &mut rk)
        }
        MissingPattern::Fixed(rows) => Mask::from_fn(config.t, config.d, |t, j| rows[t][j]),
    };
    Ok(SimulatedReplicate {
        structure,
        set,
        r_true,
        y,
        mask,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: u64,
    pub mae: BTreeMap<String, f64>,
    pub lambda: Option<f64>,
    pub converged: Option<bool>,
    pub theta_sce: Option<ParameterVector>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ScenarioConfig,
    pub estimators: Vec<Estimator>,
    pub replicates: Vec<ReplicateResult>,
    /// Wall-clock seconds per replicate and estimator; not reproducible.
    pub seconds: Vec<BTreeMap<String, f64>>,
}

impl BenchmarkReport {
    /// MAE of one estimator over replicates.
    pub fn mae(&self, est: Estimator) -> Vec<f64> {
        self.replicates
            .iter()
            .filter_map(|r| r.mae.get(est.name()).copied())
            .collect()
    }

    /// The reproducible part of the report as JSON.
    pub fn deterministic_json(&self) -> String {
        serde_json::to_string(&(&self.config, &self.estimators, &self.replicates))
            .expect("serializable")
    }
}

/// Runs one replicate: simulate, estimate, score.
pub fn run_replicate(
    config: &ScenarioConfig,
    estimators: &[Estimator],
    replicate: u64,
) -> Result<(ReplicateResult, BTreeMap<String, f64>)> {
    let sim = simulate(config, replicate)?;
    let set = &sim.set;
    let unknown = sim.unknown_dataset()?.errors()?;
    let model_errors = if config.known_musigma {
        sim.known_dataset()?.errors()?
    } else {
        unknown.clone()
    };
    let mut mae_map = BTreeMap::new();
    let mut secs = BTreeMap::new();
    let wants = |e: Estimator| estimators.contains(&e);

    if wants(Estimator::Pearson) {
        let clock = Instant::now();
        let p = pearson_type(&unknown)?;
        secs.insert("pearson".into(), clock.elapsed().as_secs_f64());
        mae_map.insert("pearson".into(), mae(&sim.r_true, &p));
    }
    if wants(Estimator::LedoitWolf) {
        let clock = Instant::now();
        let lw = ledoit_wolf(&unknown);
        secs.insert("ledoit_wolf".into(), clock.elapsed().as_secs_f64());
        mae_map.insert("ledoit_wolf".into(), mae(&sim.r_true, &lw));
    }
    let mut lambda = None;
    let mut converged = None;
    let mut theta_sce = None;
    let model_based = wants(Estimator::Ive) || wants(Estimator::Sce) || wants(Estimator::Wsce);
    if model_based {
        let clock = Instant::now();
        let r_p = pearson_type(&model_errors)?;
        let r_p_pd = nearest_pd_correlation(&r_p);
        let init = qp_init(&r_p, set, &config.beta_grid)?;
        let r_ive = ive(&init.theta0, set)?;
        secs.insert("ive".into(), clock.elapsed().as_secs_f64());
        if wants(Estimator::Ive) {
            mae_map.insert("ive".into(), mae(&sim.r_true, &r_ive));
        }
        if wants(Estimator::Sce) || wants(Estimator::Wsce) {
            let clock = Instant::now();
            let fit = fit_sce_errors(&model_errors, set, &init.theta0, &FitOptions::default())?;
            secs.insert("sce".into(), clock.elapsed().as_secs_f64());
            converged = Some(fit.converged);
            mae_map.insert("sce".into(), mae(&sim.r_true, &fit.r));
            if wants(Estimator::Wsce) {
                let clock = Instant::now();
                let closed = match config.shrinkage {
                    ShrinkageChoice::ClosedForm => true,
                    ShrinkageChoice::Bootstrap => false,
                    ShrinkageChoice::Auto => config.known_musigma && model_errors.is_complete(),
                };
                let est = if closed {
                    shrinkage_closed_form(&fit, set, &model_errors, &r_p, &r_p_pd)?
                } else {
                    let seed = rng::child_seed(config.seed, replicate, rng::TAG_BOOTSTRAP);
                    lambda_bootstrap(&init.theta0, set, &model_errors, config.bootstrap_b, seed)?
                };
                let r_w = wsce(&fit.r, &r_p_pd, est.lambda)?;
                secs.insert("wsce".into(), clock.elapsed().as_secs_f64());
                lambda = Some(est.lambda);
                mae_map.insert("wsce".into(), mae(&sim.r_true, &r_w));
            }
            if !wants(Estimator::Sce) {
                mae_map.remove("sce");
            }
            theta_sce = Some(fit.theta);
        }
    }
    Ok((
        ReplicateResult {
            replicate,
            mae: mae_map,
            lambda,
            converged,
            theta_sce,
        },
        secs,
    ))
}

/// Runs `reps` replicates in parallel; results are ordered by replicate.
pub fn run_benchmark(config: &ScenarioConfig, estimators: &[Estimator], reps: usize) -> Result<BenchmarkReport> {
    config.validate()?;
    let out: Vec<(ReplicateResult, BTreeMap<String, f64>)> = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_replicate(config, estimators, r))
        .collect::<Result<_>>()?;
    let (replicates, seconds) = out.into_iter().unzip();
    Ok(BenchmarkReport {
        config: config.clone(),
        estimators: estimators.to_vec(),
        replicates,
        seconds,
    })
}
