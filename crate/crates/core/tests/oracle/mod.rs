//! Brute-force reference implementations used by the acceptance checks.
//!
//! Nothing here calls into the aggregation code; models are plain `Vec<f64>`.

#![allow(dead_code)]

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Calls `visit` with every `k`-subset of `items` (in lexicographic order).
fn subsets(items: &[usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    fn go(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            visit(cur);
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            go(items, k, i + 1, cur, visit);
            cur.pop();
        }
    }
    go(items, k, 0, &mut Vec::new(), visit);
}

/// Krum score of `i` within `pool`: smallest possible sum of squared
/// distances to `k` other members, found by trying every `k`-subset.
pub fn krum_score_brute(models: &[Vec<f64>], pool: &[usize], i: usize, k: usize) -> f64 {
    let others: Vec<usize> = pool.iter().copied().filter(|&j| j != i).collect();
    let mut best = f64::INFINITY;
    subsets(&others, k, &mut |s| {
        let total: f64 = s.iter().map(|&j| sq(&models[i], &models[j])).sum();
        if total < best {
            best = total;
        }
    });
    if k == 0 {
        0.0
    } else {
        best
    }
}

/// Index selected by Krum among `pool` (lowest score, earliest on ties).
pub fn krum_pick(models: &[Vec<f64>], pool: &[usize], k: usize) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for &i in pool {
        let s = krum_score_brute(models, pool, i, k);
        if s < best.0 || (s == best.0 && i < best.1) {
            best = (s, i);
        }
    }
    best.1
}

/// Krum with bound `f`: the selected index.
pub fn krum(models: &[Vec<f64>], f: usize) -> usize {
    let n = models.len();
    let pool: Vec<usize> = (0..n).collect();
    krum_pick(models, &pool, n - f - 2)
}

pub fn median(models: &[Vec<f64>]) -> Vec<f64> {
    let d = models[0].len();
    (0..d)
        .map(|c| {
            let mut col: Vec<f64> = models.iter().map(|m| m[c]).collect();
            // insertion sort, independent of the library's ordering helpers
            for i in 1..col.len() {
                let mut j = i;
                while j > 0 && col[j - 1] > col[j] {
                    col.swap(j - 1, j);
                    j -= 1;
                }
            }
            let n = col.len();
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / 2.0
            }
        })
        .collect()
}

/// Bulyan: `n - 2f` Krum picks on the shrinking pool, then per coordinate the
/// mean of the `n - 4f` selected values nearest the selection's median
/// (ties by client index). Returns the selection (in pick order) and the aggregate.
pub fn bulyan(models: &[Vec<f64>], f: usize) -> (Vec<usize>, Vec<f64>) {
    let n = models.len();
    let theta = n - 2 * f;
    let beta = theta - 2 * f;
    let mut pool: Vec<usize> = (0..n).collect();
    let mut picked = Vec::new();
    for _ in 0..theta {
        let k = pool.len().saturating_sub(f + 2);
        let i = krum_pick(models, &pool, k);
        picked.push(i);
        pool.retain(|&j| j != i);
    }
    let selected: Vec<Vec<f64>> = picked.iter().map(|&i| models[i].clone()).collect();
    let med = median(&selected);
    let d = models[0].len();
    let agg = (0..d)
        .map(|c| {
            let mut entries: Vec<(f64, usize, f64)> = picked
                .iter()
                .map(|&i| ((models[i][c] - med[c]).abs(), i, models[i][c]))
                .collect();
            entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            entries[..beta].iter().map(|e| e.2).sum::<f64>() / beta as f64
        })
        .collect();
    (picked, agg)
}

/// Hand iteration of the scalar iterative filter, written with the raw
/// product formula for credibilities.
pub struct HandTrace {
    pub weights: Vec<Vec<f64>>,
    pub estimates: Vec<f64>,
    pub final_weights: Vec<f64>,
    pub aggregate: f64,
}

pub fn simeon_scalar(xs: &[f64], eps: f64, max_iter: usize) -> HandTrace {
    let n = xs.len() as f64;
    let cred = |devs: &[f64], vars: &[f64]| -> Vec<f64> {
        let c: Vec<f64> = devs
            .iter()
            .map(|d| {
                let prod: f64 = vars
                    .iter()
                    .map(|v| (-d / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
                    .product();
                prod.powf(1.0 / n)
            })
            .collect();
        let s: f64 = c.iter().sum();
        c.iter().map(|x| x / s).collect()
    };
    let mut e = xs.iter().sum::<f64>() / n;
    let devs: Vec<f64> = xs.iter().map(|x| (x - e) * (x - e)).collect();
    let common = devs.iter().sum::<f64>() / n;
    let mut w = cred(&devs, &vec![common; xs.len()]);
    let mut weights = vec![w.clone()];
    let mut estimates = vec![e];
    let mut vars = Vec::new();
    for _ in 0..max_iter {
        let next: f64 = xs.iter().zip(&w).map(|(x, wi)| x * wi).sum();
        vars = xs.iter().map(|x| ((x - next) * (x - next)).max(1e-12)).collect();
        w = cred(&vars, &vars);
        weights.push(w.clone());
        estimates.push(next);
        let shift = (next - e).abs();
        e = next;
        if shift < eps {
            break;
        }
    }
    let inv: Vec<f64> = vars.iter().map(|v| 1.0 / v).collect();
    let s: f64 = inv.iter().sum();
    let final_weights: Vec<f64> = inv.iter().map(|r| r / s).collect();
    let aggregate = xs.iter().zip(&final_weights).map(|(x, r)| x * r).sum();
    HandTrace {
        weights,
        estimates,
        final_weights,
        aggregate,
    }
}

/// Central finite difference of `f` in coordinate `i` with step `h`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Mean cross-entropy of a `d_in -> hidden (ReLU) -> classes` network laid out
/// as `W1 (hidden x d_in), b1, W2 (classes x hidden), b2`, computed naively.
pub fn mlp_loss(theta: &[f64], d_in: usize, hidden: usize, classes: usize, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let w1 = &theta[..hidden * d_in];
    let b1 = &theta[hidden * d_in..hidden * d_in + hidden];
    let off = hidden * d_in + hidden;
    let w2 = &theta[off..off + classes * hidden];
    let b2 = &theta[off + classes * hidden..];
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let h: Vec<f64> = (0..hidden)
            .map(|j| (b1[j] + (0..d_in).map(|k| w1[j * d_in + k] * x[k]).sum::<f64>()).max(0.0))
            .collect();
        let z: Vec<f64> = (0..classes)
            .map(|c| b2[c] + (0..hidden).map(|j| w2[c * hidden + j] * h[j]).sum::<f64>())
            .collect();
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / xs.len() as f64
}
