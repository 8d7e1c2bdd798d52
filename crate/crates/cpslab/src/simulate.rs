//! Generators: Brownian / geometric Brownian / fractional Brownian path
//! ensembles, the integrated-|B| increasing example, and sticky scenario
//! trees built around freeze branches.
//!
//! Every generator is a deterministic function of its config and seed. Path
//! ensembles draw each path from an independent substream derived from the
//! master seed, so paths are reproducible independently of generation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PathEnsemble, PricePath, RealEnsemble, ScenarioTree, TreeNode};

/// Spreads a master seed into per-path substream seeds (splitmix64 finalizer).
pub fn substream_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Configuration for the continuous-path generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_steps: usize,
    pub n_paths: usize,
    pub horizon: f64,
    pub d: usize,
    pub seed: u64,
    /// Initial prices, one per asset (price-valued generators only).
    pub s0: Vec<f64>,
    pub volatility: f64,
    #[serde(default)]
    pub drift: f64,
    /// Hurst index for the fractional generator.
    #[serde(default)]
    pub hurst: Option<f64>,
    /// Cross-asset correlation matrix; identity when absent.
    #[serde(default)]
    pub correlation: Option<Vec<Vec<f64>>>,
}

impl SimConfig {
    pub fn new(n_steps: usize, n_paths: usize, horizon: f64, d: usize, seed: u64) -> Self {
        Self {
            n_steps,
            n_paths,
            horizon,
            d,
            seed,
            s0: vec![1.0; d],
            volatility: 1.0,
            drift: 0.0,
            hurst: None,
            correlation: None,
        }
    }

    pub fn with_s0(mut self, s0: Vec<f64>) -> Self {
        self.s0 = s0;
        self
    }

    pub fn with_volatility(mut self, vol: f64) -> Self {
        self.volatility = vol;
        self
    }

    pub fn with_drift(mut self, drift: f64) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_hurst(mut self, h: f64) -> Self {
        self.hurst = Some(h);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_steps < 1 || self.n_paths < 1 {
            return Err(Error::Config("n_steps and n_paths must be >= 1".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.d < 1 {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if self.s0.len() != self.d || self.s0.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(
                "s0 must have one positive entry per asset".into(),
            ));
        }
        if !(self.volatility >= 0.0) {
            return Err(Error::Config("volatility must be nonnegative".into()));
        }
        if let Some(h) = self.hurst {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::Config(format!("hurst must be in (0,1), got {h}")));
            }
        }
        if let Some(c) = &self.correlation {
            if c.len() != self.d || c.iter().any(|r| r.len() != self.d) {
                return Err(Error::Config("correlation matrix must be d x d".into()));
            }
            for i in 0..self.d {
                for j in 0..self.d {
                    if (c[i][j] - c[j][i]).abs() > 1e-12 {
                        return Err(Error::Config("correlation matrix not symmetric".into()));
                    }
                }
            }
        }
        Ok(())
    }

    fn times(&self) -> Vec<f64> {
        let dt = self.horizon / self.n_steps as f64;
        (0..=self.n_steps).map(|k| k as f64 * dt).collect()
    }

    /// Cholesky factor of the cross-asset correlation (identity if none).
    fn corr_chol(&self) -> Result<Vec<f64>> {
        match &self.correlation {
            None => {
                let mut id = vec![0.0; self.d * self.d];
                for i in 0..self.d {
                    id[i * self.d + i] = 1.0;
                }
                Ok(id)
            }
            Some(c) => {
                let flat: Vec<f64> = c.iter().flatten().copied().collect();
                cholesky(&flat, self.d).map_err(|_| {
                    Error::Config("correlation matrix is not positive definite".into())
                })
            }
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric matrix, row-major.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Numerical(format!(
                        "Cholesky pivot {s:.3e} at index {i} is not positive"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Correlated d-dimensional Brownian increments for one path, flattened as
/// `steps x d`.
fn brownian_increments(
    rng: &mut ChaCha8Rng,
    n_steps: usize,
    d: usize,
    sqrt_dt: f64,
    corr_l: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; n_steps * d];
    let mut z = vec![0.0; d];
    for step in 0..n_steps {
        for zi in z.iter_mut() {
            *zi = rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..d {
            let mut s = 0.0;
            for k in 0..=i {
                s += corr_l[i * d + k] * z[k];
            }
            out[step * d + i] = s * sqrt_dt;
        }
    }
    out
}

/// Arithmetic Brownian motion started at zero: `vol * W_t + drift * t`,
/// cross-correlated per the config. Signed values, so a [`RealEnsemble`].
pub fn gen_brownian_raw(config: &SimConfig) -> Result<RealEnsemble> {
    config.validate()?;
    let times = config.times();
    let dt = config.horizon / config.n_steps as f64;
    let corr_l = config.corr_chol()?;
    let mut paths = Vec::with_capacity(config.n_paths);
    for p in 0..config.n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, p as u64));
        let incr = brownian_increments(&mut rng, config.n_steps, config.d, dt.sqrt(), &corr_l);
        let mut path = Vec::with_capacity(config.n_steps + 1);
        let mut cur = vec![0.0; config.d];
        path.push(cur.clone());
        for step in 0..config.n_steps {
            for i in 0..config.d {
                cur[i] += config.volatility * incr[step * config.d + i] + config.drift * dt;
            }
            path.push(cur.clone());
        }
        paths.push(path);
    }
    RealEnsemble::new(times, paths, config.seed)
}

/// Geometric Brownian prices:
/// `S^i_t = s0_i * exp((drift - vol^2/2) t + vol * W^i_t)`.
pub fn gen_brownian(config: &SimConfig) -> Result<PathEnsemble> {
    config.validate()?;
    let times = config.times();
    let dt = config.horizon / config.n_steps as f64;
    let corr_l = config.corr_chol()?;
    let adj = config.drift - 0.5 * config.volatility * config.volatility;
    let mut paths = Vec::with_capacity(config.n_paths);
    for p in 0..config.n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, p as u64));
        let incr = brownian_increments(&mut rng, config.n_steps, config.d, dt.sqrt(), &corr_l);
        let mut values = Vec::with_capacity(config.n_steps + 1);
        let mut logs = vec![0.0; config.d];
        values.push(config.s0.clone());
        for step in 0..config.n_steps {
            let v: Vec<f64> = (0..config.d)
                .map(|i| {
                    logs[i] += adj * dt + config.volatility * incr[step * config.d + i];
                    config.s0[i] * logs[i].exp()
                })
                .collect();
            values.push(v);
        }
        paths.push(PricePath::new(times.clone(), values)?);
    }
    PathEnsemble::new(paths, config.seed)
}

/// Fractional Brownian covariance on the positive grid times, factorized
/// exactly by Cholesky. Shared by the raw and price variants.
fn fbm_factor(times: &[f64], hurst: f64) -> Result<Vec<f64>> {
    let n = times.len() - 1;
    let two_h = 2.0 * hurst;
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (s, t) = (times[i + 1], times[j + 1]);
            cov[i * n + j] = 0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h));
        }
    }
    cholesky(&cov, n).map_err(|e| {
        Error::Numerical(format!(
            "fractional covariance lost positive definiteness ({e}); reduce n_steps"
        ))
    })
}

/// Zero-start fractional Brownian motion with exact covariance
/// `0.5 (s^2H + t^2H - |t-s|^2H)`, scaled by the volatility. Coordinates are
/// cross-correlated through the config's correlation matrix.
pub fn gen_fbm_raw(config: &SimConfig) -> Result<RealEnsemble> {
    config.validate()?;
    let h = config
        .hurst
        .ok_or_else(|| Error::Config("fbm generator needs a hurst index".into()))?;
    let times = config.times();
    let n = config.n_steps;
    let l = fbm_factor(&times, h)?;
    let corr_l = config.corr_chol()?;
    let d = config.d;
    let mut paths = Vec::with_capacity(config.n_paths);
    for p in 0..config.n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, p as u64));
        // Cross-correlated standard normals, steps x d.
        let mut z = vec![0.0; n * d];
        let mut raw = vec![0.0; d];
        for step in 0..n {
            for r in raw.iter_mut() {
                *r = rng.sample::<f64, _>(StandardNormal);
            }
            for i in 0..d {
                let mut s = 0.0;
                for k in 0..=i {
                    s += corr_l[i * d + k] * raw[k];
                }
                z[step * d + i] = s;
            }
        }
        // B = L z per coordinate.
        let mut path = vec![vec![0.0; d]; n + 1];
        for i in 0..d {
            for row in 0..n {
                let mut s = 0.0;
                for k in 0..=row {
                    s += l[row * n + k] * z[k * d + i];
                }
                path[row + 1][i] = config.volatility * s;
            }
        }
        paths.push(path);
    }
    RealEnsemble::new(times, paths, config.seed)
}

/// Exponentiated fractional Brownian prices: `s0_i * exp(B^H,i_t)`, strictly
/// positive.
pub fn gen_fbm(config: &SimConfig) -> Result<PathEnsemble> {
    let raw = gen_fbm_raw(config)?;
    let times = raw.times.clone();
    let mut paths = Vec::with_capacity(raw.paths.len());
    for p in &raw.paths {
        let values: Vec<Vec<f64>> = p
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&config.s0)
                    .map(|(b, s0)| s0 * b.exp())
                    .collect()
            })
            .collect();
        paths.push(PricePath::new(times.clone(), values)?);
    }
    PathEnsemble::new(paths, config.seed)
}

/// Strictly increasing example process: `S_t = s0 + integral of |B_s| ds`,
/// discretized with a left-endpoint Riemann sum so the integrand is known at
/// the start of each cell. Nondecreasing on every path by construction.
pub fn gen_increasing_example(config: &SimConfig) -> Result<PathEnsemble> {
    config.validate()?;
    let times = config.times();
    let dt = config.horizon / config.n_steps as f64;
    let corr_l = config.corr_chol()?;
    let mut paths = Vec::with_capacity(config.n_paths);
    for p in 0..config.n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, p as u64));
        let incr = brownian_increments(&mut rng, config.n_steps, config.d, dt.sqrt(), &corr_l);
        let mut values = Vec::with_capacity(config.n_steps + 1);
        let mut b: Vec<f64> = vec![0.0; config.d];
        let mut s = config.s0.clone();
        values.push(s.clone());
        for step in 0..config.n_steps {
            for i in 0..config.d {
                // Left endpoint: integrate |B| over the cell ending here.
                s[i] += b[i].abs() * dt * config.volatility;
                b[i] += incr[step * config.d + i];
            }
            values.push(s.clone());
        }
        paths.push(PricePath::new(times.clone(), values)?);
    }
    PathEnsemble::new(paths, config.seed)
}

/// Configuration for the sticky tree generators. Every non-terminal node
/// gets the listed move branches plus one freeze branch that keeps the price
/// vector unchanged with probability `freeze_prob`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeGenConfig {
    pub depth: usize,
    pub d: usize,
    pub s0: Vec<f64>,
    /// Probability of the stay-put branch at every non-terminal node.
    pub freeze_prob: f64,
    /// Per-branch multiplicative factors, one inner vector of length d per
    /// move branch.
    pub moves: Vec<Vec<f64>>,
    /// Move branch probabilities; together with `freeze_prob` they sum to 1.
    pub move_probs: Vec<f64>,
}

impl TreeGenConfig {
    /// Binomial up/down moves plus freeze. For d >= 2 the moves are the
    /// independent per-coordinate combinations, `2^d` branches.
    pub fn binomial_freeze(
        depth: usize,
        d: usize,
        s0: Vec<f64>,
        up: f64,
        down: f64,
        freeze_prob: f64,
    ) -> Self {
        let mut moves = Vec::new();
        for mask in 0..(1usize << d) {
            let mv: Vec<f64> = (0..d)
                .map(|i| if mask >> i & 1 == 0 { up } else { down })
                .collect();
            moves.push(mv);
        }
        let k = moves.len();
        let move_probs = vec![(1.0 - freeze_prob) / k as f64; k];
        Self {
            depth,
            d,
            s0,
            freeze_prob,
            moves,
            move_probs,
        }
    }

    /// Co-monotone two-scale ladder: all coordinates move together by one of
    /// `1 +- h` or `1 +- h/3`. The fine scale makes every deviation bucket
    /// reachable at modest depth.
    pub fn ladder(depth: usize, d: usize, s0: Vec<f64>, h: f64, freeze_prob: f64) -> Self {
        let factors = [1.0 + h, 1.0 - h, 1.0 + h / 3.0, 1.0 - h / 3.0];
        let moves: Vec<Vec<f64>> = factors.iter().map(|f| vec![*f; d]).collect();
        let move_probs = vec![(1.0 - freeze_prob) / 4.0; 4];
        Self {
            depth,
            d,
            s0,
            freeze_prob,
            moves,
            move_probs,
        }
    }

    /// Up-only moves plus freeze: the monotone example family.
    pub fn increasing(depth: usize, d: usize, s0: Vec<f64>, up: f64, freeze_prob: f64) -> Self {
        Self {
            depth,
            d,
            s0,
            freeze_prob,
            moves: vec![vec![up; d]],
            move_probs: vec![1.0 - freeze_prob],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d < 1 || self.s0.len() != self.d || self.s0.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(
                "s0 must have one positive entry per coordinate".into(),
            ));
        }
        if !(self.freeze_prob > 0.0 && self.freeze_prob < 1.0) {
            return Err(Error::Config(format!(
                "freeze_prob must be in (0,1), got {}",
                self.freeze_prob
            )));
        }
        if self.moves.len() != self.move_probs.len() {
            return Err(Error::Config(format!(
                "{} moves but {} move probabilities",
                self.moves.len(),
                self.move_probs.len()
            )));
        }
        for mv in &self.moves {
            if mv.len() != self.d || mv.iter().any(|f| !(*f > 0.0)) {
                return Err(Error::Config(
                    "every move needs d strictly positive factors".into(),
                ));
            }
        }
        if self.move_probs.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("move probabilities must be positive".into()));
        }
        let total: f64 = self.freeze_prob + self.move_probs.iter().sum::<f64>();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "branch probabilities sum to {total} != 1"
            )));
        }
        Ok(())
    }
}

/// Builds the sticky tree: every non-terminal node branches into the
/// configured moves plus a freeze child with unchanged price vector.
pub fn build_sticky_tree(config: &TreeGenConfig) -> Result<ScenarioTree> {
    config.validate()?;
    let mut nodes: Vec<TreeNode> = vec![TreeNode {
        id: 0,
        time_index: 0,
        price: config.s0.clone(),
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for depth in 0..config.depth {
        let mut next = Vec::with_capacity(frontier.len() * (config.moves.len() + 1));
        for &id in &frontier {
            let price = nodes[id].price.clone();
            let mut children = Vec::with_capacity(config.moves.len() + 1);
            for (mv, prob) in config.moves.iter().zip(&config.move_probs) {
                let child_price: Vec<f64> =
                    price.iter().zip(mv).map(|(p, f)| p * f).collect();
                let cid = nodes.len();
                nodes.push(TreeNode {
                    id: cid,
                    time_index: depth + 1,
                    price: child_price,
                    children: Vec::new(),
                });
                children.push((cid, *prob));
                next.push(cid);
            }
            // Freeze branch: identical price vector.
            let cid = nodes.len();
            nodes.push(TreeNode {
                id: cid,
                time_index: depth + 1,
                price: price.clone(),
                children: Vec::new(),
            });
            children.push((cid, config.freeze_prob));
            next.push(cid);
            nodes[id].children = children;
        }
        frontier = next;
    }
    ScenarioTree::new(nodes, 0)
}

/// Builds the monotone sticky tree: single up-move branch (factor > 1) plus
/// freeze, so every scenario's price path is nondecreasing while the freeze
/// branches keep the tree sticky.
pub fn build_increasing_tree(config: &TreeGenConfig) -> Result<ScenarioTree> {
    if config.moves.len() != 1 {
        return Err(Error::Config(
            "increasing tree takes exactly one move branch".into(),
        ));
    }
    if config.moves[0].iter().any(|f| !(*f > 1.0)) {
        return Err(Error::Config(format!(
            "up factor must exceed 1, got {:?}",
            config.moves[0]
        )));
    }
    build_sticky_tree(config)
}
