#![allow(dead_code)]

//! Straight-loop reference implementations used as test oracles. They share
//! no code with the library.

pub fn rmse(p: &[f64], d: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut i = 0;
    while i < p.len() {
        s += (p[i] - d[i]) * (p[i] - d[i]);
        i += 1;
    }
    (s / p.len() as f64).sqrt()
}

/// (mean, total, included, excluded)
pub fn ned(p: &[f64], sd: &[f64], d: &[f64], eps: f64) -> Option<(f64, f64, usize, usize)> {
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for i in 0..p.len() {
        if sd[i] < eps {
            continue;
        }
        let e = (p[i] - d[i]).abs() / sd[i];
        sum += e;
        sq += e * e;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    Some((sum / n as f64, (sq / n as f64).sqrt(), n, p.len() - n))
}

/// (average, maximum, included, excluded)
pub fn rel(p: &[f64], d: &[f64], eps: f64) -> Option<(f64, f64, usize, usize)> {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut n = 0usize;
    for i in 0..p.len() {
        if p[i].abs() < eps {
            continue;
        }
        let r = ((d[i] - p[i]) / p[i]).abs();
        sum += r;
        if r > max {
            max = r;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    Some((sum / n as f64, max, n, p.len() - n))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation, divisor n - 1.
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut s = 0.0;
    for x in xs {
        s += (x - m) * (x - m);
    }
    (s / (xs.len() - 1) as f64).sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
