//! Brute-force reference implementations used by `selftest`.
//!
//! Everything here works on nested `Vec`s with explicit loops, plain sums of
//! exponentials and `std` floating-point functions. Nothing is shared with
//! the tape, the masked contrast op or the metric code it checks.

pub type Rows = Vec<Vec<f64>>;

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for k in 0..u.len() {
        uv += u[k] * v[k];
        uu += u[k] * u[k];
        vv += v[k] * v[k];
    }
    uv / (uu.sqrt() * vv.sqrt())
}

/// Per-anchor `−ln(e^{s(aᵢ,bᵢ)/τ} / Σⱼ e^{s(aᵢ,bⱼ)/τ})`. Serves both the
/// unsupervised text loss and the modal SimCLR loss.
pub fn simclr(a: &Rows, b: &Rows, tau: f64) -> Vec<f64> {
    let n = a.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let num = (cosine(&a[i], &b[i]) / tau).exp();
        let mut den = 0.0;
        for j in 0..n {
            den += (cosine(&a[i], &b[j]) / tau).exp();
        }
        out.push(-(num / den).ln());
    }
    out
}

/// Supervised text loss: every entailment and every contradiction of the
/// batch sits in each anchor's denominator.
pub fn text_sup(src: &Rows, pos: &Rows, neg: &Rows, tau: f64) -> Vec<f64> {
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let num = (cosine(&src[i], &pos[i]) / tau).exp();
        let mut den = 0.0;
        for j in 0..n {
            den += (cosine(&src[i], &pos[j]) / tau).exp();
            den += (cosine(&src[i], &neg[j]) / tau).exp();
        }
        out.push(-(num / den).ln());
    }
    out
}

/// Modal SupCon variant: same-label second views (the anchor's own one
/// included) over cross-label second views.
pub fn supcon(a: &Rows, b: &Rows, labels: &[usize], tau: f64) -> Vec<f64> {
    let n = a.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            let e = (cosine(&a[i], &b[j]) / tau).exp();
            if labels[j] == labels[i] {
                num += e;
            } else {
                den += e;
            }
        }
        out.push(-(num / den).ln());
    }
    out
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..u.len() {
        let d = u[k] - v[k];
        s += d * d;
    }
    s
}

pub fn alignment(a: &Rows, b: &Rows) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += squared_distance(&unit(&a[i]), &unit(&b[i]));
    }
    s / a.len() as f64
}

/// `ln` of the mean `exp(−2‖uᵢ − uⱼ‖²)` over pairs `i < j`, and the mean
/// itself.
pub fn uniformity(x: &Rows) -> (f64, f64) {
    let u: Rows = x.iter().map(|r| unit(r)).collect();
    let mut s = 0.0;
    let mut pairs = 0usize;
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            s += (-2.0 * squared_distance(&u[i], &u[j])).exp();
            pairs += 1;
        }
    }
    let raw = s / pairs as f64;
    (raw.ln(), raw)
}

/// Rank of each value counting smaller values and half of the other equal
/// ones, starting at 1.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut r = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut below = 0.0;
        let mut equal = 0.0;
        for j in 0..x.len() {
            if x[j] < x[i] {
                below += 1.0;
            } else if x[j] == x[i] && j != i {
                equal += 1.0;
            }
        }
        r.push(1.0 + below + equal / 2.0);
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    num / (vx * vy).sqrt()
}

/// Top `k` rows by cosine to `query`, picked one at a time; a tie keeps the
/// lower index.
pub fn top_k(query: &[f64], corpus: &Rows, k: usize) -> Vec<(usize, f64)> {
    let scores: Vec<f64> = corpus.iter().map(|r| cosine(query, r)).collect();
    let mut taken = vec![false; corpus.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for j in 0..corpus.len() {
            if taken[j] {
                continue;
            }
            if best.map_or(true, |b| scores[j] > scores[b]) {
                best = Some(j);
            }
        }
        let b = best.expect("k never exceeds the corpus size");
        taken[b] = true;
        out.push((b, scores[b]));
    }
    out
}
