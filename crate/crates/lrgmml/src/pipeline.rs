//! Weakly supervised experiment pipeline: pair sampling, training, the
//! Mahalanobis embedding, k-NN evaluation, and the rank/t sweep runner.
//!
//! Every random choice flows from explicit seeds, and each (run, rank,
//! method) cell derives its own sub-seed, so a sweep is reproducible
//! row-for-row regardless of how cells would be scheduled.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::StiefelPoint;
use crate::objective::{
    dominant_subspace, gmml_closed_form, make_problem, project_state, MetricModel, PairScatter,
    DENSE_GUARD,
};
use crate::solver::{minimize, SolverOptions, SolverTrace};

/// Number of block power-iteration sweeps used to warm-start the basis from
/// the dissimilar scatter.
const INIT_SWEEPS: usize = 10;
const INIT_SEED: u64 = 0x1c9b_5eed;

/// Labeled point set. Labels are dense class ids in first-appearance order
/// of the original label strings.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// One row per sample.
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Original label spelling per class id.
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len().max(self.labels.iter().map(|&l| l + 1).max().unwrap_or(0))
    }

    /// Row subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = DMatrix::from_fn(indices.len(), self.dim(), |i, j| {
            self.features[(indices[i], j)]
        });
        Dataset {
            name: self.name.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub rank_list: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub k_neighbors: usize,
    pub num_runs: usize,
    pub train_fraction: f64,
    /// Pair budget multiplier: both pair sets get
    /// `pairs_per_class_pair * c * (c - 1)` draws, capped at the number of
    /// distinct pairs available.
    pub pairs_per_class_pair: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rank_list: Vec::new(),
            t_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            k_neighbors: 5,
            num_runs: 5,
            train_fraction: 0.7,
            pairs_per_class_pair: 40,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.rank_list.is_empty() {
            return Err(Error::InvalidArgument("rank_list is empty".into()));
        }
        if let Some(&r) = self.rank_list.iter().find(|&&r| r == 0 || r > d) {
            return Err(Error::InvalidArgument(format!(
                "rank {r} out of range for dimension {d}"
            )));
        }
        if self.t_grid.is_empty() {
            return Err(Error::InvalidArgument("t_grid is empty".into()));
        }
        if let Some(&t) = self.t_grid.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "t value {t} outside (0, 1)"
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if self.k_neighbors == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be >= 1".into()));
        }
        if self.num_runs == 0 {
            return Err(Error::InvalidArgument("num_runs must be >= 1".into()));
        }
        if self.pairs_per_class_pair == 0 {
            return Err(Error::InvalidArgument(
                "pairs_per_class_pair must be >= 1".into(),
            ));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Lrgmml,
    Gmml,
    Euclidean,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Lrgmml => "lrgmml",
            Method::Gmml => "gmml",
            Method::Euclidean => "euclidean",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "lrgmml" => Ok(Method::Lrgmml),
            "gmml" => Ok(Method::Gmml),
            "euclidean" => Ok(Method::Euclidean),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// One sweep cell: the k-NN test error of `method` at `rank` in run `run`,
/// with the t selected by the inner protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub dataset: String,
    pub method: Method,
    pub rank: usize,
    pub t: f64,
    pub run: usize,
    pub error: f64,
    pub seconds: f64,
    pub iterations: usize,
}

/// Splitmix64-style seed derivation so each cell of the experiment grid is
/// independently and reproducibly seeded.
pub fn derive_seed(base: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ a.wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ b.wrapping_mul(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

mod seed_tag {
    pub const SPLIT: u64 = 1;
    pub const PAIRS: u64 = 2;
    pub const INNER_SPLIT: u64 = 3;
    pub const INNER_PAIRS: u64 = 4;
}

/// Samples similar and dissimilar index pairs uniformly (with replacement
/// across draws, distinct indices within a pair). Classes with fewer than
/// two samples are excluded from similar-pair sampling with a warning; a
/// label set without two distinct classes cannot produce dissimilar pairs
/// and is rejected.
pub fn generate_pairs(
    labels: &[usize],
    count_s: usize,
    count_d: usize,
    seed: u64,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    if count_s == 0 || count_d == 0 {
        return Err(Error::InvalidArgument(
            "pair counts must be at least 1".into(),
        ));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::InvalidArgument(
            "dissimilar pairs require at least two distinct classes".into(),
        ));
    }

    let mut sim_classes: Vec<&Vec<usize>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (label, members) in &by_class {
        if members.len() < 2 {
            log::warn!(
                "class {label} has {} sample(s); excluded from similar-pair sampling",
                members.len()
            );
            continue;
        }
        sim_classes.push(members);
        weights.push((members.len() * (members.len() - 1)) as f64);
    }
    if sim_classes.is_empty() {
        return Err(Error::InvalidArgument(
            "no class has two samples; similar pairs are unavailable".into(),
        ));
    }
    let total_weight: f64 = weights.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut similar = Vec::with_capacity(count_s);
    for _ in 0..count_s {
        // Class weighted by its number of ordered same-class pairs, so pairs
        // are uniform over the full same-class pair set.
        let mut pick = rng.gen_range(0.0..total_weight);
        let mut chosen = sim_classes.len() - 1;
        for (ci, w) in weights.iter().enumerate() {
            if pick < *w {
                chosen = ci;
                break;
            }
            pick -= w;
        }
        let members = sim_classes[chosen];
        let i = members[rng.gen_range(0..members.len())];
        let j = loop {
            let j = members[rng.gen_range(0..members.len())];
            if j != i {
                break j;
            }
        };
        similar.push((i, j));
    }

    let mut dissimilar = Vec::with_capacity(count_d);
    for _ in 0..count_d {
        let i = rng.gen_range(0..labels.len());
        let j = loop {
            let j = rng.gen_range(0..labels.len());
            if labels[j] != labels[i] {
                break j;
            }
        };
        dissimilar.push((i, j));
    }

    Ok((similar, dissimilar))
}

/// Number of distinct unordered same-class and cross-class pairs, used to
/// cap the sampling budget.
pub fn distinct_pair_counts(labels: &[usize]) -> (usize, usize) {
    let mut by_class: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *by_class.entry(l).or_default() += 1;
    }
    let sizes: Vec<usize> = by_class.values().cloned().collect();
    let similar = sizes.iter().map(|&n| n * (n - 1) / 2).sum();
    let total: usize = sizes.iter().sum();
    let same_sq: usize = sizes.iter().map(|&n| n * n).sum();
    let dissimilar = (total * total - same_sq) / 2;
    (similar, dissimilar)
}

/// Trains the low-rank metric: builds the implicit scatters, warm-starts the
/// basis from the dominant subspace of the dissimilar scatter, runs the
/// Riemannian CG solver, and recovers the SPD factor from the closed-form
/// inner solution at the final basis.
pub fn train_lrgmml(
    features: &DMatrix<f64>,
    similar: &[(usize, usize)],
    dissimilar: &[(usize, usize)],
    r: usize,
    t: f64,
    solver: &SolverOptions,
) -> Result<(MetricModel, SolverTrace)> {
    let d = features.ncols();
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!(
            "rank {r} out of range for dimension {d}"
        )));
    }
    let sc_s = PairScatter::from_pairs(features, similar)?;
    let sc_d = PairScatter::from_pairs(features, dissimilar)?;

    let u0 = if r == d {
        StiefelPoint::from_matrix(DMatrix::identity(d, d))?
    } else {
        dominant_subspace(&sc_d, r, INIT_SWEEPS, INIT_SEED)?
    };
    let problem = make_problem(&sc_s, &sc_d, t, r)?;
    let (u, trace) = minimize(&problem, &u0, solver)?;
    let state = project_state(&u, &sc_s, &sc_d, t)?;
    Ok((
        MetricModel {
            u,
            b: state.b,
            t,
        },
        trace,
    ))
}

/// Full-rank baseline model from the closed form on dense scatters.
pub fn train_gmml(
    features: &DMatrix<f64>,
    similar: &[(usize, usize)],
    dissimilar: &[(usize, usize)],
    t: f64,
) -> Result<MetricModel> {
    let d = features.ncols();
    let sc_s = PairScatter::from_pairs(features, similar)?;
    let sc_d = PairScatter::from_pairs(features, dissimilar)?;
    let a = gmml_closed_form(&sc_s, &sc_d, t)?;
    Ok(MetricModel {
        u: StiefelPoint::from_matrix(DMatrix::identity(d, d))?,
        b: a,
        t,
    })
}

/// Maps points into the metric's embedding space, row i becoming
/// `B^{1/2} U^T x_i`, so squared Euclidean distances between embedded rows
/// equal the learned Mahalanobis distances.
pub fn embed(model: &MetricModel, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if points.ncols() != model.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "embed",
            expected: format!("{} columns", model.ambient_dim()),
            got: format!("{} columns", points.ncols()),
        });
    }
    let w = model.u.matrix() * model.b.power(0.5).matrix();
    Ok(points * w)
}

/// k-NN error rate under majority vote among the k nearest training rows by
/// Euclidean distance in the embedded space. Distance ties break by training
/// index order; vote ties break by smallest summed distance, then by
/// smallest class id.
pub fn knn_error(
    train_embedded: &DMatrix<f64>,
    train_labels: &[usize],
    test_embedded: &DMatrix<f64>,
    test_labels: &[usize],
    k: usize,
) -> Result<f64> {
    let n_train = train_embedded.nrows();
    let n_test = test_embedded.nrows();
    if n_test == 0 {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    if k == 0 || k > n_train {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must satisfy 1 <= k <= {n_train} training points"
        )));
    }
    if train_labels.len() != n_train || test_labels.len() != n_test {
        return Err(Error::DimensionMismatch {
            context: "knn_error",
            expected: format!("{n_train} train / {n_test} test labels"),
            got: format!("{} / {}", train_labels.len(), test_labels.len()),
        });
    }
    if train_embedded.ncols() != test_embedded.ncols() {
        return Err(Error::DimensionMismatch {
            context: "knn_error",
            expected: format!("{} columns", train_embedded.ncols()),
            got: format!("{} columns", test_embedded.ncols()),
        });
    }

    let mut errors = 0usize;
    let mut dist_idx: Vec<(f64, usize)> = Vec::with_capacity(n_train);
    for q in 0..n_test {
        dist_idx.clear();
        for i in 0..n_train {
            let mut sq = 0.0;
            for c in 0..train_embedded.ncols() {
                let diff = test_embedded[(q, c)] - train_embedded[(i, c)];
                sq += diff * diff;
            }
            dist_idx.push((sq.sqrt(), i));
        }
        dist_idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for &(dist, i) in dist_idx.iter().take(k) {
            let entry = votes.entry(train_labels[i]).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += dist;
        }
        let predicted = votes
            .iter()
            .min_by(|(ca, (va, sa)), (cb, (vb, sb))| {
                vb.cmp(va) // more votes first
                    .then(sa.total_cmp(sb)) // then smaller summed distance
                    .then(ca.cmp(cb)) // then smaller class id
            })
            .map(|(&c, _)| c)
            .expect("k >= 1 guarantees at least one vote");
        if predicted != test_labels[q] {
            errors += 1;
        }
    }
    Ok(errors as f64 / n_test as f64)
}

/// Per-feature z-scoring statistics estimated on training data.
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &DMatrix<f64>) -> Standardizer {
        let n = features.nrows().max(1);
        let d = features.ncols();
        let mut mean = vec![0.0; d];
        for i in 0..features.nrows() {
            for j in 0..d {
                mean[j] += features[(i, j)];
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut scale = vec![0.0; d];
        for i in 0..features.nrows() {
            for j in 0..d {
                let c = features[(i, j)] - mean[j];
                scale[j] += c * c;
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / n as f64).sqrt();
            if *s < 1e-12 {
                *s = 1.0; // constant feature: centering alone is enough
            }
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(features.nrows(), features.ncols(), |i, j| {
            (features[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }
}

fn seeded_shuffle(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Default pair budget: `per_class_pair * c * (c - 1)` draws for each set,
/// capped at the number of distinct pairs actually available.
pub fn pair_budget(labels: &[usize], per_class_pair: usize) -> (usize, usize) {
    let classes: std::collections::BTreeSet<usize> = labels.iter().cloned().collect();
    let c = classes.len();
    let nominal = per_class_pair * c * c.saturating_sub(1);
    let (max_s, max_d) = distinct_pair_counts(labels);
    (nominal.min(max_s).max(1), nominal.min(max_d).max(1))
}

fn train_method_model(
    method: Method,
    features: &DMatrix<f64>,
    similar: &[(usize, usize)],
    dissimilar: &[(usize, usize)],
    rank: usize,
    t: f64,
    solver: &SolverOptions,
) -> Result<(Option<MetricModel>, usize)> {
    match method {
        Method::Lrgmml => {
            let (model, trace) = train_lrgmml(features, similar, dissimilar, rank, t, solver)?;
            Ok((Some(model), trace.iterations()))
        }
        Method::Gmml => {
            let model = train_gmml(features, similar, dissimilar, t)?;
            Ok((Some(model), 0))
        }
        Method::Euclidean => Ok((None, 0)),
    }
}

fn embed_or_identity(model: &Option<MetricModel>, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match model {
        Some(m) => embed(m, points),
        None => Ok(points.clone()),
    }
}

/// Picks the t from `t_grid` minimizing inner-validation k-NN error on an
/// 80/20 split of the training data (first minimum wins), for methods that
/// take a t.
pub fn select_t(
    method: Method,
    train: &Dataset,
    rank: usize,
    cfg: &ExperimentConfig,
    seed_split: u64,
    seed_pairs: u64,
) -> Result<f64> {
    let n = train.len();
    let order = seeded_shuffle(n, seed_split);
    let n_inner = ((n as f64) * 0.8).round() as usize;
    let n_inner = n_inner.clamp(1, n - 1);
    let inner_idx = &order[..n_inner];
    let val_idx = &order[n_inner..];
    let inner = train.subset(inner_idx);
    let val = train.subset(val_idx);

    let (count_s, count_d) = pair_budget(&inner.labels, cfg.pairs_per_class_pair);
    let (similar, dissimilar) = generate_pairs(&inner.labels, count_s, count_d, seed_pairs)?;

    let mut best: Option<(f64, f64)> = None; // (error, t)
    for &t in &cfg.t_grid {
        let (model, _) = train_method_model(
            method,
            &inner.features,
            &similar,
            &dissimilar,
            rank,
            t,
            &cfg.solver,
        )?;
        let train_emb = embed_or_identity(&model, &inner.features)?;
        let val_emb = embed_or_identity(&model, &val.features)?;
        let k = cfg.k_neighbors.min(inner.len());
        let err = knn_error(&train_emb, &inner.labels, &val_emb, &val.labels, k)?;
        if best.map(|(e, _)| err < e).unwrap_or(true) {
            best = Some((err, t));
        }
    }
    Ok(best.expect("t_grid validated non-empty").1)
}

/// Runs the full protocol: for each seeded run, split train/test, z-score
/// with training statistics, select t per method on an inner split, retrain
/// on the full training side, and record the test k-NN error for every
/// (rank, method) cell. Individual cell failures are logged and skipped.
pub fn run_experiment(data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate(data.dim())?;
    if data.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "dataset {} has only {} samples",
            data.name,
            data.len()
        )));
    }
    let include_gmml = data.dim() <= DENSE_GUARD;
    let mut records = Vec::new();

    for run in 0..cfg.num_runs {
        let order = seeded_shuffle(data.len(), derive_seed(cfg.seed, seed_tag::SPLIT, run as u64, 0));
        let n_train = ((data.len() as f64) * cfg.train_fraction).round() as usize;
        let n_train = n_train.clamp(1, data.len() - 1);
        let train_idx = &order[..n_train];
        let test_idx = &order[n_train..];

        let train_raw = data.subset(train_idx);
        let test_raw = data.subset(test_idx);
        let standardizer = Standardizer::fit(&train_raw.features);
        let train = Dataset {
            features: standardizer.apply(&train_raw.features),
            ..train_raw
        };
        let test_features = standardizer.apply(&test_raw.features);

        let (count_s, count_d) = pair_budget(&train.labels, cfg.pairs_per_class_pair);
        let seed_pairs = derive_seed(cfg.seed, seed_tag::PAIRS, run as u64, 0);
        let (similar, dissimilar) = match generate_pairs(&train.labels, count_s, count_d, seed_pairs)
        {
            Ok(p) => p,
            Err(e) => {
                log::warn!("run {run}: pair generation failed: {e}; skipping run");
                continue;
            }
        };
        // Split hygiene: pairs index only into the training subset.
        debug_assert!(similar
            .iter()
            .chain(&dissimilar)
            .all(|&(i, j)| i < train.len() && j < train.len()));

        // Rank-independent methods are evaluated once per run and replicated
        // across the rank axis so sweep outputs carry them as flat baselines.
        let mut per_run: Vec<(Method, Option<(f64, f64, f64, usize)>)> = Vec::new();
        for method in [Method::Gmml, Method::Euclidean] {
            if method == Method::Gmml && !include_gmml {
                continue;
            }
            let cell = run_cell(
                method,
                &train,
                &test_features,
                &test_raw.labels,
                data.dim(),
                cfg,
                run,
                &similar,
                &dissimilar,
            );
            per_run.push((method, cell));
        }

        for &rank in &cfg.rank_list {
            let cell = run_cell(
                Method::Lrgmml,
                &train,
                &test_features,
                &test_raw.labels,
                rank,
                cfg,
                run,
                &similar,
                &dissimilar,
            );
            if let Some((t, error, seconds, iterations)) = cell {
                records.push(ResultRecord {
                    dataset: data.name.clone(),
                    method: Method::Lrgmml,
                    rank,
                    t,
                    run,
                    error,
                    seconds,
                    iterations,
                });
            }
            for (method, cell) in &per_run {
                if let Some((t, error, seconds, iterations)) = cell {
                    records.push(ResultRecord {
                        dataset: data.name.clone(),
                        method: *method,
                        rank,
                        t: *t,
                        run,
                        error: *error,
                        seconds: *seconds,
                        iterations: *iterations,
                    });
                }
            }
        }
    }
    Ok(records)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    method: Method,
    train: &Dataset,
    test_features: &DMatrix<f64>,
    test_labels: &[usize],
    rank: usize,
    cfg: &ExperimentConfig,
    run: usize,
    similar: &[(usize, usize)],
    dissimilar: &[(usize, usize)],
) -> Option<(f64, f64, f64, usize)> {
    let started = Instant::now();
    let attempt = || -> Result<(f64, f64, usize)> {
        let t = if method == Method::Euclidean {
            0.0
        } else {
            select_t(
                method,
                train,
                rank,
                cfg,
                derive_seed(cfg.seed, seed_tag::INNER_SPLIT, run as u64, rank as u64),
                derive_seed(cfg.seed, seed_tag::INNER_PAIRS, run as u64, rank as u64),
            )?
        };
        let (model, iterations) =
            train_method_model(method, &train.features, similar, dissimilar, rank, t, &cfg.solver)?;
        let train_emb = embed_or_identity(&model, &train.features)?;
        let test_emb = embed_or_identity(&model, test_features)?;
        let k = cfg.k_neighbors.min(train.len());
        let error = knn_error(&train_emb, &train.labels, &test_emb, test_labels, k)?;
        Ok((t, error, iterations))
    };
    match attempt() {
        Ok((t, error, iterations)) => {
            Some((t, error, started.elapsed().as_secs_f64(), iterations))
        }
        Err(e) => {
            log::warn!(
                "run {run}, rank {rank}, method {}: {e}; cell skipped",
                method.as_str()
            );
            None
        }
    }
}

/// Synthetic Gaussian class blobs for tests and demos: isotropic classes
/// with means `separation` apart along random directions.
pub fn synthetic_blobs(
    n_per_class: usize,
    d: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Dataset {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut means = Vec::new();
    for _ in 0..n_classes {
        let dir = DMatrix::from_fn(1, d, |_, _| {
            let v: f64 = normal.sample(&mut rng);
            v
        });
        let norm = dir.norm().max(1e-12);
        means.push(dir * (separation / norm));
    }
    let n = n_per_class * n_classes;
    let mut features = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        for i in 0..n_per_class {
            let row = c * n_per_class + i;
            for j in 0..d {
                let v: f64 = normal.sample(&mut rng);
                features[(row, j)] = means[c][(0, j)] + v;
            }
            labels.push(c);
        }
    }
    Dataset {
        name: format!("blobs-{n_classes}x{n_per_class}-d{d}"),
        features,
        labels,
        label_names: (0..n_classes).map(|c| c.to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::SpdMatrix;
    use approx::assert_relative_eq;

    #[test]
    fn pairs_small_exhaustive_case() {
        let labels = [0, 0, 1, 1];
        let (similar, dissimilar) = generate_pairs(&labels, 2, 2, 5).unwrap();
        assert_eq!(similar.len(), 2);
        assert_eq!(dissimilar.len(), 2);
        for &(i, j) in &similar {
            assert_ne!(i, j);
            assert_eq!(labels[i], labels[j]);
        }
        for &(i, j) in &dissimilar {
            assert_ne!(labels[i], labels[j]);
        }
    }

    #[test]
    fn pairs_single_class_is_rejected() {
        let labels = [0, 0, 0];
        assert!(generate_pairs(&labels, 1, 1, 0).is_err());
    }

    #[test]
    fn pairs_are_deterministic_per_seed() {
        let labels = [0, 0, 0, 1, 1, 2, 2, 2];
        let a = generate_pairs(&labels, 10, 10, 9).unwrap();
        let b = generate_pairs(&labels, 10, 10, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_pairs(&labels, 10, 10, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn singleton_class_is_skipped_for_similar_pairs() {
        let labels = [0, 0, 1, 2, 2];
        let (similar, _) = generate_pairs(&labels, 20, 5, 3).unwrap();
        for &(i, j) in &similar {
            assert_eq!(labels[i], labels[j]);
            assert_ne!(labels[i], 1, "singleton class must not appear in similar pairs");
        }
    }

    #[test]
    fn distinct_pair_counting() {
        // classes of sizes 2 and 2: 1 + 1 similar, 4 dissimilar.
        let (s, d) = distinct_pair_counts(&[0, 0, 1, 1]);
        assert_eq!(s, 2);
        assert_eq!(d, 4);
    }

    #[test]
    fn embedding_is_coordinate_selection_for_identity_model() {
        let d = 4;
        let r = 2;
        let mut u = DMatrix::zeros(d, r);
        u[(0, 0)] = 1.0;
        u[(1, 1)] = 1.0;
        let model = MetricModel {
            u: StiefelPoint::from_matrix(u).unwrap(),
            b: SpdMatrix::from_matrix(DMatrix::identity(r, r), "b").unwrap(),
            t: 0.5,
        };
        let points = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 9.0]);
        let emb = embed(&model, &points).unwrap();
        assert_relative_eq!(emb[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(emb[(0, 1)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(emb[(1, 0)], -1.0, epsilon = 1e-14);
        assert_relative_eq!(emb[(1, 1)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn embedding_preserves_mahalanobis_distances() {
        let data = synthetic_blobs(10, 6, 2, 3.0, 1);
        let (similar, dissimilar) = generate_pairs(&data.labels, 30, 30, 2).unwrap();
        let (model, _) = train_lrgmml(
            &data.features,
            &similar,
            &dissimilar,
            3,
            0.5,
            &SolverOptions::default(),
        )
        .unwrap();
        let emb = embed(&model, &data.features).unwrap();
        let a = model.metric_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let i = rng.gen_range(0..data.len());
            let j = rng.gen_range(0..data.len());
            let diff = data.features.row(i) - data.features.row(j);
            let d_a = (&diff * &a * diff.transpose())[(0, 0)];
            let emb_diff = emb.row(i) - emb.row(j);
            let d_e = emb_diff.norm_squared();
            assert!(
                (d_a - d_e).abs() <= 1e-9 * d_a.abs().max(1.0),
                "metric distance {d_a} vs embedded {d_e}"
            );
        }
    }

    #[test]
    fn knn_classifies_exact_training_point() {
        let train = DMatrix::from_row_slice(3, 1, &[0.0, 5.0, 10.0]);
        let labels = [0, 1, 2];
        let test = DMatrix::from_row_slice(1, 1, &[5.0]);
        let err = knn_error(&train, &labels, &test, &[1], 1).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn knn_majority_on_line() {
        let train = DMatrix::from_row_slice(4, 1, &[-10.0, -9.5, 10.0, 9.5]);
        let labels = [0, 0, 1, 1];
        let test = DMatrix::from_row_slice(1, 1, &[9.0]);
        let err = knn_error(&train, &labels, &test, &[1], 3).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn knn_matches_bruteforce_oracle() {
        // Independent oracle: recompute every distance, sort a fresh copy,
        // replicate the vote with explicit tie-breaking.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let train = DMatrix::from_fn(20, 3, |_, _| rng.gen_range(-1.0..1.0));
        let train_labels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..3)).collect();
        let test = DMatrix::from_fn(10, 3, |_, _| rng.gen_range(-1.0..1.0));
        let test_labels: Vec<usize> = (0..10).map(|_| rng.gen_range(0..3)).collect();
        let k = 3;
        let fast = knn_error(&train, &train_labels, &test, &test_labels, k).unwrap();

        let mut wrong = 0;
        for q in 0..10 {
            let mut all: Vec<(f64, usize)> = (0..20)
                .map(|i| ((test.row(q) - train.row(i)).norm(), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let top: Vec<(f64, usize)> = all[..k].to_vec();
            let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
            for &(d, i) in &top {
                let e = tally.entry(train_labels[i]).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += d;
            }
            let best_votes = tally.values().map(|v| v.0).max().unwrap();
            let mut cands: Vec<(usize, f64)> = tally
                .iter()
                .filter(|(_, v)| v.0 == best_votes)
                .map(|(&c, v)| (c, v.1))
                .collect();
            cands.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if cands[0].0 != test_labels[q] {
                wrong += 1;
            }
        }
        assert_eq!(fast, wrong as f64 / 10.0);
    }

    #[test]
    fn knn_rejects_empty_test_and_bad_k() {
        let train = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let labels = [0, 1];
        let empty = DMatrix::zeros(0, 1);
        assert!(knn_error(&train, &labels, &empty, &[], 1).is_err());
        let test = DMatrix::from_row_slice(1, 1, &[0.2]);
        assert!(knn_error(&train, &labels, &test, &[0], 3).is_err());
    }

    #[test]
    fn trained_subspace_contains_class_separation_direction() {
        // Two well-separated isotropic blobs: the span of the learned basis
        // should capture the mean-difference direction.
        let data = synthetic_blobs(40, 10, 2, 8.0, 7);
        let (similar, dissimilar) = generate_pairs(&data.labels, 200, 200, 8).unwrap();
        let (model, _) = train_lrgmml(
            &data.features,
            &similar,
            &dissimilar,
            2,
            0.5,
            &SolverOptions::default(),
        )
        .unwrap();
        let mut mu = vec![DMatrix::zeros(1, 10); 2];
        let mut counts = [0usize; 2];
        for i in 0..data.len() {
            let c = data.labels[i];
            mu[c] += data.features.row(i);
            counts[c] += 1;
        }
        let diff = (&mu[0] / counts[0] as f64) - (&mu[1] / counts[1] as f64);
        let v = diff.transpose() / diff.norm();
        let cos = (model.u.matrix().transpose() * &v).norm();
        assert!(cos >= 0.9, "|cos angle| = {cos}");
    }

    #[test]
    fn experiment_is_deterministic() {
        let data = synthetic_blobs(15, 6, 2, 4.0, 3);
        let cfg = ExperimentConfig {
            rank_list: vec![2, 3],
            t_grid: vec![0.3, 0.5],
            num_runs: 1,
            seed: 11,
            solver: SolverOptions {
                max_iters: 60,
                ..SolverOptions::default()
            },
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&data, &cfg).unwrap();
        let b = run_experiment(&data, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.dataset, y.dataset);
            assert_eq!(x.method, y.method);
            assert_eq!(x.rank, y.rank);
            assert_eq!(x.t, y.t);
            assert_eq!(x.error, y.error);
            assert_eq!(x.iterations, y.iterations);
        }
    }

    #[test]
    fn identity_metric_separates_linearly_separable_blobs() {
        let data = synthetic_blobs(20, 5, 2, 12.0, 5);
        let cfg = ExperimentConfig {
            rank_list: vec![2],
            t_grid: vec![0.5],
            num_runs: 1,
            k_neighbors: 1,
            seed: 4,
            ..ExperimentConfig::default()
        };
        let records = run_experiment(&data, &cfg).unwrap();
        let euclidean = records
            .iter()
            .find(|r| r.method == Method::Euclidean)
            .unwrap();
        assert_eq!(euclidean.error, 0.0);
    }

    #[test]
    fn full_rank_lrgmml_matches_gmml_error() {
        let data = synthetic_blobs(20, 8, 2, 4.0, 9);
        let cfg = ExperimentConfig {
            rank_list: vec![8],
            t_grid: vec![0.3, 0.5],
            num_runs: 2,
            seed: 13,
            solver: SolverOptions {
                max_iters: 80,
                ..SolverOptions::default()
            },
            ..ExperimentConfig::default()
        };
        let records = run_experiment(&data, &cfg).unwrap();
        let mean = |m: Method| {
            let v: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.error)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let diff = (mean(Method::Lrgmml) - mean(Method::Gmml)).abs();
        assert!(diff <= 0.01, "full-rank error gap {diff}");
    }
}
