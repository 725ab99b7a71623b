//! Fisher embeddings and the forward-backward greedy trace selector.
//!
//! The objective for a chosen set `S` is
//! `tr((lambda I + sum_{labeled} g g^T + sum_{S} g g^T)^{-1} F)` with
//! `F` the mean outer product over the candidate pool. Let `A` be the
//! current inverse. For each candidate we track `a_x = g_x^T A g_x` and
//! `b_x = g_x^T A F A g_x`; adding `x` lowers the trace by `b_x / (1 + a_x)`
//! and removing a chosen `x` raises it by `b_x / (1 - a_x)`.
//!
//! Two representations of `A` are kept behind one interface. For small
//! embedding dimension it is an explicit `d x d` matrix. Otherwise it is
//! `A = I / lambda - sum_i sign_i u_i u_i^T` with only the projections
//! `g_x^T u_i` stored, so memory scales with the pool rather than `d^2`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};
use crate::mdn::network::{backbone_features, forward_batch, MdnParams};
use crate::rng::RngStream;

/// Dimension above which the implicit representation is used.
const PRIMAL_MAX_DIM: usize = 1024;
const BLOCK_ROWS: usize = 128;

/// Per-candidate gradient rows. The factored form stores the row
/// `coef (x) features` (coefficients outer, features inner) without
/// materializing it.
#[derive(Clone, Debug, PartialEq)]
pub enum FisherEmbedding {
    Dense(Array2<f64>),
    Factored { coef: Array2<f64>, features: Array2<f64> },
}

impl FisherEmbedding {
    pub fn factored(coef: Array2<f64>, features: Array2<f64>) -> Result<Self> {
        check_dim(coef.nrows(), features.nrows())?;
        Ok(Self::Factored { coef, features })
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Dense(g) => g.nrows(),
            Self::Factored { coef, .. } => coef.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(g) => g.ncols(),
            Self::Factored { coef, features } => coef.ncols() * features.ncols(),
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        match self {
            Self::Dense(g) => g.row(i).to_vec(),
            Self::Factored { coef, features } => {
                let z = features.row(i);
                coef.row(i).iter().flat_map(|c| z.iter().map(move |v| c * v)).collect()
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Self::Dense(g) => g.clone(),
            Self::Factored { .. } => {
                let mut out = Array2::zeros((self.len(), self.dim()));
                for (i, mut r) in out.outer_iter_mut().enumerate() {
                    r.assign(&Array1::from(self.row(i)));
                }
                out
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Dense(g) => g.iter().all(|v| v.is_finite()),
            Self::Factored { coef, features } => {
                coef.iter().chain(features.iter()).all(|v| v.is_finite())
            }
        }
    }

    /// Rows of `self` followed by rows of `other`.
    fn concat(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        let cat = |a: &Array2<f64>, b: &Array2<f64>| {
            ndarray::concatenate(Axis(0), &[a.view(), b.view()]).map_err(|e| Error::InvalidParameter(e.to_string()))
        };
        match (self, other) {
            (Self::Factored { coef: c1, features: f1 }, Self::Factored { coef: c2, features: f2 })
                if c1.ncols() == c2.ncols() =>
            {
                Ok(Self::Factored {
                    coef: cat(c1, c2)?,
                    features: cat(f1, f2)?,
                })
            }
            _ => Ok(Self::Dense(cat(&self.to_dense(), &other.to_dense())?)),
        }
    }

    fn sq_norms(&self) -> Vec<f64> {
        match self {
            Self::Dense(g) => g.outer_iter().map(|r| r.dot(&r)).collect(),
            Self::Factored { coef, features } => coef
                .outer_iter()
                .zip(features.outer_iter())
                .map(|(c, f)| c.dot(&c) * f.dot(&f))
                .collect(),
        }
    }

    /// Inner products of every row with row `i`.
    fn kernel_row(&self, i: usize) -> Array1<f64> {
        match self {
            Self::Dense(g) => g.dot(&g.row(i)),
            Self::Factored { coef, features } => coef.dot(&coef.row(i)) * features.dot(&features.row(i)),
        }
    }

    /// `sum_{j < v.len()} v_j <g_x, g_j>` for every row `x`.
    fn kernel_matvec(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let n = v.len();
        match self {
            Self::Dense(g) => g.dot(&g.slice(s![..n, ..]).t().dot(&v)),
            Self::Factored { coef, features } => {
                let weighted = &coef.slice(s![..n, ..]) * &v.insert_axis(Axis(1));
                // m = sum_j v_j c_j z_j^T
                let m = weighted.t().dot(&features.slice(s![..n, ..]));
                let proj = features.dot(&m.t());
                (proj * coef).sum_axis(Axis(1))
            }
        }
    }

    /// Gram block between rows `rows` and the first `n_cols` rows.
    fn kernel_block(&self, rows: std::ops::Range<usize>, n_cols: usize) -> Array2<f64> {
        match self {
            Self::Dense(g) => g.slice(s![rows, ..]).dot(&g.slice(s![..n_cols, ..]).t()),
            Self::Factored { coef, features } => {
                let c = coef.slice(s![rows.clone(), ..]).dot(&coef.slice(s![..n_cols, ..]).t());
                let f = features.slice(s![rows, ..]).dot(&features.slice(s![..n_cols, ..]).t());
                c * f
            }
        }
    }
}

/// Gradient of the log-likelihood of member `params` with respect to its
/// mean-head weights, at one target sampled from its own prediction. Row
/// `i` samples with `stream.fork(i)`.
pub fn fisher_embed(params: &MdnParams, x: ArrayView2<f64>, stream: &RngStream) -> Result<FisherEmbedding> {
    let features = backbone_features(params, x)?;
    let mixtures = forward_batch(params, x)?;
    let arch = params.arch();
    let (k, n) = (arch.components, arch.output_dim);
    let mut coef = Array2::zeros((x.nrows(), k * n));
    for (i, (mix, mut row)) in mixtures.iter().zip(coef.outer_iter_mut()).enumerate() {
        let y = mix.sample(&mut stream.fork(i as u64));
        let resp = mix.responsibilities(&y)?;
        for c in 0..k {
            let (mu, var) = (mix.mean(c), mix.variance(c));
            for d in 0..n {
                row[c * n + d] = resp[c] * (y[d] - mu[d]) / var[d];
            }
        }
    }
    FisherEmbedding::factored(coef, features)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BaitBackend {
    #[default]
    Auto,
    /// Explicit `d x d` inverse.
    Primal,
    /// Implicit inverse over pool projections.
    Dual,
}

trait TraceState {
    fn a(&self, i: usize) -> f64;
    fn b(&self, i: usize) -> f64;
    /// Add (`sign = 1`) or remove (`sign = -1`) candidate `i`.
    fn update(&mut self, i: usize, sign: f64) -> Result<()>;
}

fn guard_denominator(c: f64) -> Result<f64> {
    if c > 1e-12 && c.is_finite() {
        Ok(c)
    } else {
        Err(Error::NonFinite(format!("rank-one update denominator {c}")))
    }
}

struct Primal {
    g: Array2<f64>,
    inv: Array2<f64>,
    fisher: Array2<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn rank_one_update(inv: &mut Array2<f64>, g: ArrayView1<f64>, sign: f64) -> Result<()> {
    let u = inv.dot(&g);
    let c = guard_denominator(1.0 + sign * g.dot(&u))?;
    let scale = sign / c;
    for (mut row, ui) in inv.outer_iter_mut().zip(u.iter()) {
        row.scaled_add(-scale * ui, &u);
    }
    Ok(())
}

fn row_quadratic(g: &Array2<f64>, m: &Array2<f64>) -> Vec<f64> {
    (g.dot(m) * g).sum_axis(Axis(1)).to_vec()
}

impl Primal {
    fn new(cands: &FisherEmbedding, labeled: &FisherEmbedding, lambda: f64) -> Result<Self> {
        let g = cands.to_dense();
        let d = g.ncols();
        let mut inv = Array2::eye(d) / lambda;
        let gl = labeled.to_dense();
        for row in gl.outer_iter() {
            rank_one_update(&mut inv, row, 1.0)?;
        }
        let fisher = g.t().dot(&g) / g.nrows() as f64;
        let a = row_quadratic(&g, &inv);
        let b = row_quadratic(&g, &inv.dot(&fisher).dot(&inv));
        Ok(Self { g, inv, fisher, a, b })
    }
}

impl TraceState for Primal {
    fn a(&self, i: usize) -> f64 {
        self.a[i]
    }

    fn b(&self, i: usize) -> f64 {
        self.b[i]
    }

    fn update(&mut self, i: usize, sign: f64) -> Result<()> {
        let u = self.inv.dot(&self.g.row(i));
        let c = guard_denominator(1.0 + sign * self.g.row(i).dot(&u))?;
        let s = self.g.dot(&u);
        let fu = self.fisher.dot(&u);
        let r = self.g.dot(&self.inv.dot(&fu));
        let ufu = u.dot(&fu);
        for x in 0..self.a.len() {
            self.a[x] -= sign * s[x] * s[x] / c;
            self.b[x] += -2.0 * sign * s[x] * r[x] / c + s[x] * s[x] * ufu / (c * c);
        }
        let scale = sign / c;
        for (mut row, ui) in self.inv.outer_iter_mut().zip(u.iter()) {
            row.scaled_add(-scale * ui, &u);
        }
        Ok(())
    }
}

/// Rows `0..nc` are candidates, the rest labeled.
struct Dual {
    emb: FisherEmbedding,
    nc: usize,
    inv_lambda: f64,
    /// `cols[i][x] = g_x^T u_i`.
    cols: Vec<Array1<f64>>,
    signs: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Dual {
    fn new(cands: &FisherEmbedding, labeled: &FisherEmbedding, lambda: f64) -> Result<Self> {
        let nc = cands.len();
        let emb = if labeled.is_empty() { cands.clone() } else { cands.concat(labeled)? };
        let inv_lambda = 1.0 / lambda;
        let a = emb.sq_norms().into_iter().map(|v| v * inv_lambda).collect();
        let mut st = Self {
            emb,
            nc,
            inv_lambda,
            cols: Vec::new(),
            signs: Vec::new(),
            a,
            b: Vec::new(),
        };
        for j in nc..st.emb.len() {
            st.push_column(j, 1.0)?;
        }
        st.b = st.initial_b();
        Ok(st)
    }

    /// `g_x^T A g_i` for every row `x` under the current inverse.
    fn projections(&self, i: usize) -> Array1<f64> {
        let mut s = self.emb.kernel_row(i) * self.inv_lambda;
        for (col, sign) in self.cols.iter().zip(&self.signs) {
            s.scaled_add(-sign * col[i], col);
        }
        s
    }

    fn push_column(&mut self, i: usize, sign: f64) -> Result<Array1<f64>> {
        let s = self.projections(i);
        let c = guard_denominator(1.0 + sign * s[i])?;
        let e = s / c.sqrt();
        for (a, v) in self.a.iter_mut().zip(e.iter()) {
            *a -= sign * v * v;
        }
        self.cols.push(e.clone());
        self.signs.push(sign);
        Ok(e)
    }

    fn initial_b(&self) -> Vec<f64> {
        let nc = self.nc;
        let r = self.cols.len();
        let mut e = Array2::zeros((nc, r));
        let mut es = Array2::zeros((nc, r));
        for (i, (col, sign)) in self.cols.iter().zip(&self.signs).enumerate() {
            e.column_mut(i).assign(&col.slice(s![..nc]));
            es.column_mut(i).assign(&(&col.slice(s![..nc]) * *sign));
        }
        let mut b = Vec::with_capacity(nc);
        let mut start = 0;
        while start < nc {
            let end = (start + BLOCK_ROWS).min(nc);
            let mut t = self.emb.kernel_block(start..end, nc) * self.inv_lambda;
            if r > 0 {
                t -= &es.slice(s![start..end, ..]).dot(&e.t());
            }
            b.extend(t.outer_iter().map(|row| row.dot(&row) / nc as f64));
            start = end;
        }
        b
    }
}

impl TraceState for Dual {
    fn a(&self, i: usize) -> f64 {
        self.a[i]
    }

    fn b(&self, i: usize) -> f64 {
        self.b[i]
    }

    fn update(&mut self, i: usize, sign: f64) -> Result<()> {
        let nc = self.nc;
        // T e under the inverse before this update, restricted to candidates
        let s = self.projections(i);
        let c = guard_denominator(1.0 + sign * s[i])?;
        let e = s / c.sqrt();
        let ec = e.slice(s![..nc]);
        let mut t = self.emb.kernel_matvec(ec) * self.inv_lambda;
        for (col, sg) in self.cols.iter().zip(&self.signs) {
            let w = col.slice(s![..nc]).dot(&ec);
            t.scaled_add(-sg * w, col);
        }
        let ee = ec.dot(&ec);
        let inv_n = 1.0 / nc as f64;
        for x in 0..nc {
            self.b[x] += inv_n * (-2.0 * sign * e[x] * t[x] + e[x] * e[x] * ee);
        }
        for (a, v) in self.a.iter_mut().zip(e.iter()) {
            *a -= sign * v * v;
        }
        self.cols.push(e);
        self.signs.push(sign);
        Ok(())
    }
}

/// Forward-backward greedy batch selection with the default backend.
pub fn select_bait(cands: &FisherEmbedding, labeled: &FisherEmbedding, k: usize, lambda: f64) -> Result<Vec<usize>> {
    select_bait_with(cands, labeled, k, lambda, BaitBackend::Auto)
}

/// Greedily adds `min(2k, n)` candidates maximizing `b / (1 + a)` (lowest
/// index on ties), then removes the surplus one at a time, each time the
/// member minimizing `b / (1 - a)` (most recently added on ties). Returns
/// the survivors in the order they were added.
pub fn select_bait_with(
    cands: &FisherEmbedding,
    labeled: &FisherEmbedding,
    k: usize,
    lambda: f64,
    backend: BaitBackend,
) -> Result<Vec<usize>> {
    let n = cands.len();
    if n == 0 {
        return Err(Error::Empty("candidate pool"));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("batch size {k} for {n} candidates")));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("ridge must be positive, got {lambda}")));
    }
    if !labeled.is_empty() {
        check_dim(cands.dim(), labeled.dim())?;
    }
    if !cands.is_finite() || !labeled.is_finite() {
        return Err(Error::NonFinite("fisher embedding".into()));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let primal = match backend {
        BaitBackend::Primal => true,
        BaitBackend::Dual => false,
        BaitBackend::Auto => cands.dim() <= PRIMAL_MAX_DIM,
    };
    let mut state: Box<dyn TraceState> = if primal {
        Box::new(Primal::new(cands, labeled, lambda)?)
    } else {
        Box::new(Dual::new(cands, labeled, lambda)?)
    };

    let mut chosen = Vec::with_capacity((2 * k).min(n));
    let mut taken = vec![false; n];
    for _ in 0..(2 * k).min(n) {
        let mut best: Option<(usize, f64)> = None;
        for x in (0..n).filter(|&x| !taken[x]) {
            let gain = state.b(x) / (1.0 + state.a(x));
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((x, gain));
            }
        }
        let (x, _) = best.expect("candidates remain");
        taken[x] = true;
        chosen.push(x);
        state.update(x, 1.0)?;
    }
    while chosen.len() > k {
        let mut worst: Option<(usize, f64)> = None;
        for (pos, &x) in chosen.iter().enumerate() {
            let loss = state.b(x) / (1.0 - state.a(x));
            if worst.is_none_or(|(_, l)| loss <= l) {
                worst = Some((pos, loss));
            }
        }
        let (pos, _) = worst.expect("nonempty");
        let x = chosen.remove(pos);
        state.update(x, -1.0)?;
    }
    Ok(chosen)
}

/// Exact trace objective for a chosen subset, via an explicit inverse.
pub fn bait_objective(cands: &FisherEmbedding, labeled: &FisherEmbedding, chosen: &[usize], lambda: f64) -> Result<f64> {
    let g = cands.to_dense();
    let d = g.ncols();
    let mut inv = Array2::eye(d) / lambda;
    for row in labeled.to_dense().outer_iter() {
        rank_one_update(&mut inv, row, 1.0)?;
    }
    for &i in chosen {
        rank_one_update(&mut inv, g.row(i), 1.0)?;
    }
    let fisher = g.t().dot(&g) / g.nrows() as f64;
    Ok((inv * fisher.t()).sum())
}
