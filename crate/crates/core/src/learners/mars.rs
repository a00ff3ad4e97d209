//! Additive adaptive regression splines.
//!
//! The forward pass greedily adds hinge terms (pairs for [`SplineVariant::Mars`],
//! single truncated hinges for [`SplineVariant::PolyMars`]) chosen by residual
//! sum-of-squares reduction. Candidate columns are scored against an
//! orthonormal basis of the current model using running sums over each
//! feature's sorted values, so every knot of a feature costs O(terms).
//! The backward pass deletes terms one at a time and keeps the subset with
//! the lowest generalized cross-validation score.
//!
//! The polynomial variant only admits a hinge on feature `j` once the linear
//! term of `j` is in the model, and never prunes that linear term while a
//! hinge on `j` remains.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{stable_mean, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarsParams {
    /// Maximum number of terms including the intercept; `None` means
    /// `max(21, 2p + 1)`.
    pub max_terms: Option<usize>,
    pub max_knots_per_feature: usize,
    /// GCV cost per knot.
    pub penalty: f64,
    /// Forward pass stops when the R² gain of the best candidate is below this.
    pub threshold: f64,
}

impl Default for MarsParams {
    fn default() -> Self {
        Self {
            max_terms: None,
            max_knots_per_feature: 100,
            penalty: 3.0,
            threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplineVariant {
    Mars,
    PolyMars,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Basis {
    Intercept,
    Linear { feature: usize },
    /// `max(0, x - knot)` when `positive`, else `max(0, knot - x)`.
    Hinge { feature: usize, knot: f64, positive: bool },
}

impl Basis {
    pub fn eval(&self, row: &[f64]) -> f64 {
        match *self {
            Basis::Intercept => 1.0,
            Basis::Linear { feature } => row[feature],
            Basis::Hinge {
                feature,
                knot,
                positive,
            } => {
                let d = if positive { row[feature] - knot } else { knot - row[feature] };
                d.max(0.0)
            }
        }
    }

    fn feature(&self) -> Option<usize> {
        match *self {
            Basis::Intercept => None,
            Basis::Linear { feature } | Basis::Hinge { feature, .. } => Some(feature),
        }
    }

    fn is_hinge(&self) -> bool {
        matches!(self, Basis::Hinge { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineModel {
    pub variant: SplineVariant,
    pub terms: Vec<Basis>,
    pub coefficients: Vec<f64>,
    pub max_terms: usize,
    /// GCV of the model at the end of the forward pass.
    pub gcv_forward: f64,
    /// GCV of the pruned model.
    pub gcv: f64,
}

impl SplineModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| c * b.eval(row))
            .sum()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }
}

/// Orthonormal basis stored row-major with a fixed stride.
struct OrthoBasis {
    n: usize,
    stride: usize,
    m: usize,
    q: Vec<f64>,
}

impl OrthoBasis {
    fn new(n: usize, stride: usize) -> Self {
        Self {
            n,
            stride,
            m: 0,
            q: vec![0.0; n * stride],
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.stride..i * self.stride + self.m]
    }

    /// Adds `c` after two rounds of Gram-Schmidt; returns the unit vector or
    /// `None` when `c` is numerically in the current span.
    fn push(&mut self, c: &[f64]) -> Option<Vec<f64>> {
        if self.m >= self.stride {
            return None;
        }
        let c_norm2: f64 = c.iter().map(|v| v * v).sum();
        if c_norm2 <= 0.0 {
            return None;
        }
        let mut v = c.to_vec();
        for _ in 0..2 {
            for k in 0..self.m {
                let dot: f64 = (0..self.n).map(|i| self.q[i * self.stride + k] * v[i]).sum();
                for (i, vi) in v.iter_mut().enumerate() {
                    *vi -= dot * self.q[i * self.stride + k];
                }
            }
        }
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        if norm2 <= 1e-10 * c_norm2 {
            return None;
        }
        let norm = norm2.sqrt();
        for (i, vi) in v.iter_mut().enumerate() {
            *vi /= norm;
            self.q[i * self.stride + self.m] = *vi;
        }
        self.m += 1;
        Some(v)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    reduction: f64,
    feature: usize,
    /// Standardized knot; `None` for a linear term.
    knot: Option<f64>,
    use_pos: bool,
    use_neg: bool,
}

/// Projection statistics of one candidate column against the current basis.
struct ColumnStats {
    qt: Vec<f64>,
    norm2: f64,
    dot_r: f64,
}

impl ColumnStats {
    fn perp(&self) -> f64 {
        self.norm2 - self.qt.iter().map(|v| v * v).sum::<f64>()
    }
}

fn valid_perp(s: &ColumnStats) -> Option<f64> {
    let g = s.perp();
    (s.norm2 > 1e-12 && g > 1e-9 * s.norm2).then_some(g)
}

pub fn fit(x: &Matrix, y: &[f64], params: &MarsParams, variant: SplineVariant) -> Result<SplineModel> {
    let n = x.n_rows();
    let p = x.n_cols();
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    if n < 2 {
        return Err(Error::invalid("spline fit needs at least two rows"));
    }
    let max_terms = params.max_terms.unwrap_or_else(|| 21.max(2 * p + 1)).max(1);
    let y_mean = stable_mean(y.iter().copied());
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let tss: f64 = yc.iter().map(|v| v * v).sum();

    // Standardized features; constant features are never used.
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for j in 0..p {
        let col = x.column(j);
        mean[j] = col.iter().sum::<f64>() / n as f64;
        sd[j] = (col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt();
    }
    let xs: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let s = if sd[j] > 0.0 { sd[j] } else { 1.0 };
            (0..n).map(|i| (x.get(i, j) - mean[j]) / s).collect()
        })
        .collect();
    let sorted: Vec<Vec<usize>> = xs
        .iter()
        .map(|col| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            o
        })
        .collect();
    let knots: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            if sd[j] <= 0.0 {
                return Vec::new();
            }
            let mut u: Vec<f64> = sorted[j].iter().map(|&i| xs[j][i]).collect();
            u.dedup();
            let k = u.len();
            let max_k = params.max_knots_per_feature.max(2);
            if k > max_k {
                (0..max_k)
                    .map(|t| u[((t as f64) * (k - 1) as f64 / (max_k - 1) as f64).round() as usize])
                    .collect()
            } else {
                u
            }
        })
        .collect();

    let mut basis = OrthoBasis::new(n, max_terms);
    basis.push(&vec![1.0; n]);
    let mut terms = vec![Basis::Intercept];
    let mut term_cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut resid = yc.clone();
    let mut has_linear = vec![false; p];
    let mut banned: Vec<(usize, Option<u64>)> = Vec::new();

    let to_raw = |j: usize, t: f64| mean[j] + t * sd[j];

    while tss > 0.0 && terms.len() < max_terms {
        let rss: f64 = resid.iter().map(|v| v * v).sum();
        if 1.0 - rss / tss > 0.999 {
            break;
        }
        let slots = max_terms - terms.len();
        let mut best: Option<Candidate> = None;
        let consider = |c: Candidate, best: &mut Option<Candidate>| {
            let key = (c.feature, c.knot.map(f64::to_bits));
            if c.reduction.is_finite()
                && c.reduction > 0.0
                && !banned.contains(&key)
                && best.is_none_or(|b| c.reduction > b.reduction)
            {
                *best = Some(c);
            }
        };

        for j in 0..p {
            if sd[j] <= 0.0 {
                continue;
            }
            if variant == SplineVariant::PolyMars && !has_linear[j] {
                let stats = column_stats(&basis, &xs[j], &resid);
                if let Some(g) = valid_perp(&stats) {
                    consider(
                        Candidate {
                            reduction: (stats.dot_r * stats.dot_r / g).min(rss),
                            feature: j,
                            knot: None,
                            use_pos: true,
                            use_neg: false,
                        },
                        &mut best,
                    );
                }
                continue;
            }
            for cand in hinge_candidates(&basis, &xs[j], &sorted[j], &knots[j], &resid, variant, slots) {
                consider(
                    Candidate {
                        reduction: cand.reduction.min(rss),
                        feature: j,
                        ..cand
                    },
                    &mut best,
                );
            }
        }

        let Some(c) = best else { break };
        if c.reduction / tss < params.threshold {
            break;
        }

        let mut added = false;
        let mut new_terms: Vec<Basis> = Vec::new();
        match c.knot {
            None => new_terms.push(Basis::Linear { feature: c.feature }),
            Some(t) => {
                let knot = to_raw(c.feature, t);
                if c.use_pos {
                    new_terms.push(Basis::Hinge {
                        feature: c.feature,
                        knot,
                        positive: true,
                    });
                }
                if c.use_neg {
                    new_terms.push(Basis::Hinge {
                        feature: c.feature,
                        knot,
                        positive: false,
                    });
                }
            }
        }
        for term in new_terms {
            if terms.len() >= max_terms {
                break;
            }
            let col: Vec<f64> = (0..n).map(|i| term.eval(x.row(i))).collect();
            if let Some(q) = basis.push(&col) {
                let dot: f64 = q.iter().zip(&resid).map(|(a, b)| a * b).sum();
                for (r, qi) in resid.iter_mut().zip(&q) {
                    *r -= dot * qi;
                }
                if matches!(term, Basis::Linear { .. }) {
                    has_linear[c.feature] = true;
                }
                terms.push(term);
                term_cols.push(col);
                added = true;
            }
        }
        if !added {
            banned.push((c.feature, c.knot.map(f64::to_bits)));
        }
    }

    let (terms, coefficients, gcv_forward, gcv) = prune(&terms, &term_cols, &yc, y_mean, params.penalty, variant)?;
    Ok(SplineModel {
        variant,
        terms,
        coefficients,
        max_terms,
        gcv_forward,
        gcv,
    })
}

fn column_stats(basis: &OrthoBasis, col: &[f64], resid: &[f64]) -> ColumnStats {
    let mut qt = vec![0.0; basis.m];
    let mut norm2 = 0.0;
    let mut dot_r = 0.0;
    for (i, &c) in col.iter().enumerate() {
        for (k, q) in basis.row(i).iter().enumerate() {
            qt[k] += q * c;
        }
        norm2 += c * c;
        dot_r += c * resid[i];
    }
    ColumnStats { qt, norm2, dot_r }
}

/// Running sums over a set of rows: `sum q`, `sum q x`, `n`, `sum x`,
/// `sum x^2`, `sum r`, `sum r x`.
struct Running {
    q: Vec<f64>,
    qx: Vec<f64>,
    n: f64,
    x: f64,
    xx: f64,
    r: f64,
    rx: f64,
}

impl Running {
    fn new(m: usize) -> Self {
        Self {
            q: vec![0.0; m],
            qx: vec![0.0; m],
            n: 0.0,
            x: 0.0,
            xx: 0.0,
            r: 0.0,
            rx: 0.0,
        }
    }

    fn add(&mut self, q: &[f64], x: f64, r: f64) {
        for k in 0..q.len() {
            self.q[k] += q[k];
            self.qx[k] += q[k] * x;
        }
        self.n += 1.0;
        self.x += x;
        self.xx += x * x;
        self.r += r;
        self.rx += r * x;
    }

    /// Stats of `max(0, x - t)` over rows above the knot.
    fn above(&self, t: f64) -> ColumnStats {
        ColumnStats {
            qt: self.qx.iter().zip(&self.q).map(|(a, b)| a - t * b).collect(),
            norm2: self.xx - 2.0 * t * self.x + t * t * self.n,
            dot_r: self.rx - t * self.r,
        }
    }

    /// Stats of `max(0, t - x)` over rows at or below the knot.
    fn below(&self, t: f64) -> ColumnStats {
        ColumnStats {
            qt: self.q.iter().zip(&self.qx).map(|(a, b)| t * a - b).collect(),
            norm2: t * t * self.n - 2.0 * t * self.x + self.xx,
            dot_r: t * self.r - self.rx,
        }
    }
}

fn hinge_candidates(
    basis: &OrthoBasis,
    col: &[f64],
    order: &[usize],
    knots: &[f64],
    resid: &[f64],
    variant: SplineVariant,
    slots: usize,
) -> Vec<Candidate> {
    let n = col.len();
    let m = basis.m;
    let k = knots.len();

    let mut below: Vec<Option<ColumnStats>> = (0..k).map(|_| None).collect();
    if variant == SplineVariant::Mars {
        let mut acc = Running::new(m);
        let mut ptr = 0;
        for (ki, &t) in knots.iter().enumerate() {
            while ptr < n && col[order[ptr]] <= t {
                let i = order[ptr];
                acc.add(basis.row(i), col[i], resid[i]);
                ptr += 1;
            }
            below[ki] = Some(acc.below(t));
        }
    }
    let mut above: Vec<Option<ColumnStats>> = (0..k).map(|_| None).collect();
    let mut acc = Running::new(m);
    let mut ptr = n;
    for ki in (0..k).rev() {
        let t = knots[ki];
        while ptr > 0 && col[order[ptr - 1]] > t {
            let i = order[ptr - 1];
            acc.add(basis.row(i), col[i], resid[i]);
            ptr -= 1;
        }
        above[ki] = Some(acc.above(t));
    }

    let mut out = Vec::with_capacity(k);
    for ki in 0..k {
        let pos = above[ki].as_ref().expect("filled above");
        let gp = valid_perp(pos);
        let single_pos = gp.map(|g| pos.dot_r * pos.dot_r / g);
        let (reduction, use_pos, use_neg) = match below[ki].as_ref() {
            None => match single_pos {
                Some(r) => (r, true, false),
                None => continue,
            },
            Some(neg) => {
                let gn = valid_perp(neg);
                let single_neg = gn.map(|g| neg.dot_r * neg.dot_r / g);
                let pair = match (gp, gn) {
                    (Some(gp), Some(gn)) if slots >= 2 => {
                        let cross = -pos.qt.iter().zip(&neg.qt).map(|(a, b)| a * b).sum::<f64>();
                        let det = gp * gn - cross * cross;
                        (det > 1e-9 * gp * gn).then(|| {
                            (gn * pos.dot_r * pos.dot_r - 2.0 * cross * pos.dot_r * neg.dot_r
                                + gp * neg.dot_r * neg.dot_r)
                                / det
                        })
                    }
                    _ => None,
                };
                match (pair, single_pos, single_neg) {
                    (Some(r), _, _) => (r, true, true),
                    (None, Some(a), Some(b)) => {
                        if a >= b {
                            (a, true, false)
                        } else {
                            (b, false, true)
                        }
                    }
                    (None, Some(a), None) => (a, true, false),
                    (None, None, Some(b)) => (b, false, true),
                    (None, None, None) => continue,
                }
            }
        };
        out.push(Candidate {
            reduction,
            feature: 0,
            knot: Some(knots[ki]),
            use_pos,
            use_neg,
        });
    }
    out
}

struct SubsetFit {
    coef: Vec<f64>,
    inv_diag: Vec<f64>,
    rss: f64,
}

fn solve_subset(gram: &DMatrix<f64>, xty: &DVector<f64>, tss: f64, active: &[usize]) -> SubsetFit {
    let m = active.len();
    let mut g = DMatrix::from_fn(m, m, |a, b| gram[(active[a], active[b])]);
    let c = DVector::from_fn(m, |a, _| xty[active[a]]);
    let mut jitter = 0.0;
    let chol = loop {
        if let Some(ch) = g.clone().cholesky() {
            break ch;
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        for a in 0..m {
            g[(a, a)] += jitter;
        }
    };
    let coef = chol.solve(&c);
    let inv = chol.inverse();
    let rss = (tss - coef.dot(&c)).max(0.0);
    SubsetFit {
        coef: coef.iter().copied().collect(),
        inv_diag: (0..m).map(|a| inv[(a, a)]).collect(),
        rss,
    }
}

fn gcv_score(rss: f64, n: usize, terms: &[Basis], active: &[usize], penalty: f64, variant: SplineVariant) -> f64 {
    let m = active.len() as f64;
    let knots = match variant {
        SplineVariant::Mars => (m - 1.0) / 2.0,
        SplineVariant::PolyMars => active.iter().filter(|&&a| terms[a].is_hinge()).count() as f64,
    };
    let cost = m + penalty * knots;
    let nf = n as f64;
    if cost >= nf {
        return f64::INFINITY;
    }
    (rss / nf) / (1.0 - cost / nf).powi(2)
}

type Pruned = (Vec<Basis>, Vec<f64>, f64, f64);

fn prune(
    terms: &[Basis],
    cols: &[Vec<f64>],
    yc: &[f64],
    y_mean: f64,
    penalty: f64,
    variant: SplineVariant,
) -> Result<Pruned> {
    let n = yc.len();
    let m = terms.len();
    let scales: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE))
        .collect();
    let gram = DMatrix::from_fn(m, m, |a, b| {
        cols[a].iter().zip(&cols[b]).map(|(u, v)| u * v).sum::<f64>() / (scales[a] * scales[b])
    });
    let xty = DVector::from_fn(m, |a, _| cols[a].iter().zip(yc).map(|(u, v)| u * v).sum::<f64>() / scales[a]);
    let tss: f64 = yc.iter().map(|v| v * v).sum();

    let mut active: Vec<usize> = (0..m).collect();
    let full = solve_subset(&gram, &xty, tss, &active);
    let gcv_forward = gcv_score(full.rss, n, terms, &active, penalty, variant);
    let mut best_active = active.clone();
    let mut best_gcv = gcv_forward;
    let mut fit = full;

    while active.len() > 1 {
        let mut drop: Option<(usize, f64)> = None;
        for (pos, &t) in active.iter().enumerate() {
            if t == 0 {
                continue;
            }
            if variant == SplineVariant::PolyMars {
                if let Basis::Linear { feature } = terms[t] {
                    let has_hinge = active
                        .iter()
                        .any(|&o| terms[o].is_hinge() && terms[o].feature() == Some(feature));
                    if has_hinge {
                        continue;
                    }
                }
            }
            let delta = fit.coef[pos] * fit.coef[pos] / fit.inv_diag[pos];
            if drop.is_none_or(|(_, d)| delta < d) {
                drop = Some((pos, delta));
            }
        }
        let Some((pos, _)) = drop else { break };
        active.remove(pos);
        fit = solve_subset(&gram, &xty, tss, &active);
        let gcv = gcv_score(fit.rss, n, terms, &active, penalty, variant);
        if gcv <= best_gcv {
            best_gcv = gcv;
            best_active = active.clone();
        }
    }

    let chosen = solve_subset(&gram, &xty, tss, &best_active);
    let mut out_terms = Vec::with_capacity(best_active.len());
    let mut out_coef = Vec::with_capacity(best_active.len());
    for (k, &t) in best_active.iter().enumerate() {
        let mut c = chosen.coef[k] / scales[t];
        if t == 0 {
            c += y_mean;
        }
        out_terms.push(terms[t]);
        out_coef.push(c);
    }
    if !out_coef.iter().all(|c| c.is_finite()) {
        return Err(Error::Numeric("spline coefficients are not finite".into()));
    }
    Ok((out_terms, out_coef, gcv_forward, best_gcv))
}
