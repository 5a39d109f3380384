//! Straight-line reference computations for tests.
//!
//! Nothing here calls into the rest of the crate: every routine works on plain
//! nested `Vec`s with scalar loops so that it can check the optimized code
//! paths independently.

/// `out[k][i] = images[k] · concepts[i]`.
pub fn annotate(concepts: &[Vec<f64>], images: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; concepts.len()]; images.len()];
    for k in 0..images.len() {
        for i in 0..concepts.len() {
            let mut s = 0.0;
            for j in 0..images[k].len() {
                s += images[k][j] * concepts[i][j];
            }
            out[k][i] = s;
        }
    }
    out
}

/// Population mean and variance by two passes.
pub fn mean_variance(column: &[f64]) -> (f64, f64) {
    let n = column.len() as f64;
    let mut mean = 0.0;
    for v in column {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in column {
        var += (v - mean) * (v - mean);
    }
    (mean, var / n)
}

pub fn column(rows: &[Vec<f64>], c: usize) -> Vec<f64> {
    rows.iter().map(|r| r[c]).collect()
}

/// Average ranks by counting: `1 + #less + (#equal - 1) / 2`.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&u| u < v).count() as f64;
            let equal = values.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_variance(a);
    let (mb, _) = mean_variance(b);
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    num / (da.sqrt() * db.sqrt())
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Top-`k` indices by a full stable sort on (value desc, index asc).
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    pairs.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn overlap(a: &[f64], b: &[f64], k: usize) -> usize {
    let ta = top_k(a, k);
    top_k(b, k).iter().filter(|i| ta.contains(i)).count()
}

/// Greedy rough selection written out step by step. `exact` selects the
/// orthogonal projection update, otherwise `v -= (v·w / |v|) w`.
pub fn greedy_select(
    concepts: &[Vec<f64>],
    images: &[Vec<f64>],
    m: usize,
    exact: bool,
) -> (Vec<usize>, Vec<f64>) {
    let mut v: Vec<Vec<f64>> = images.to_vec();
    let mut selected: Vec<usize> = Vec::new();
    let mut scores = Vec::new();
    for _ in 0..m {
        let c = annotate(concepts, &v);
        let mut best: Option<usize> = None;
        let mut best_var = f64::NEG_INFINITY;
        for t in 0..concepts.len() {
            if selected.contains(&t) {
                continue;
            }
            let (_, var) = mean_variance(&column(&c, t));
            if var > best_var {
                best_var = var;
                best = Some(t);
            }
        }
        let t = best.unwrap();
        selected.push(t);
        scores.push(best_var);
        let w = &concepts[t];
        for row in v.iter_mut() {
            let mut d = 0.0;
            let mut vv = 0.0;
            let mut ww = 0.0;
            for j in 0..row.len() {
                d += row[j] * w[j];
                vv += row[j] * row[j];
                ww += w[j] * w[j];
            }
            let coeff = if exact { d / ww } else { d / vv.sqrt() };
            for j in 0..row.len() {
                row[j] -= coeff * w[j];
            }
        }
    }
    (selected, scores)
}

/// Mean softmax cross-entropy of `W (gate ⊙ x) + b` plus `lambda |W|²`.
pub fn objective(
    x: &[Vec<f64>],
    labels: &[usize],
    gate_logits: Option<&[f64]>,
    weights: &[Vec<f64>],
    bias: &[f64],
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for (row, &y) in x.iter().zip(labels) {
        let mut z = Vec::new();
        for (c, wc) in weights.iter().enumerate() {
            let mut s = bias[c];
            for j in 0..row.len() {
                let g = match gate_logits {
                    Some(m) => 1.0 / (1.0 + (-m[j]).exp()),
                    None => 1.0,
                };
                s += wc[j] * g * row[j];
            }
            z.push(s);
        }
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    let mut penalty = 0.0;
    for wc in weights {
        for w in wc {
            penalty += w * w;
        }
    }
    total / x.len() as f64 + lambda * penalty
}

/// Central difference of `f` along every coordinate of `params`.
pub fn central_differences(params: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`, maximized over entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Deterministic LCG stream for fixtures, independent of the crate's RNG.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[-1, 1)`.
    pub fn signed(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    pub fn vector(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.signed()).collect()
    }

    pub fn unit_vector(&mut self, d: usize) -> Vec<f64> {
        loop {
            let v = self.vector(d);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-3 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}
