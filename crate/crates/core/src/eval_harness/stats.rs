//! Correlation coefficients. Both return `None` when a variance is zero or
//! fewer than two points are given.

/// Pearson r from a single pass of running means and co-moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    if x.len() < 2 {
        return None;
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Kendall tau-b in O(n log n): sort by (x, y), count tied runs, then count
/// discordant pairs as the inversions a merge sort on y removes.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "kendall_tau_b: length mismatch");
    let n = x.len();
    if n < 2 {
        return None;
    }
    // adding 0.0 folds -0.0 into +0.0 so total_cmp agrees with ==
    let x: Vec<f64> = x.iter().map(|v| v + 0.0).collect();
    let y: Vec<f64> = y.iter().map(|v| v + 0.0).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: u64| t * (t.saturating_sub(1)) / 2;
    let runs = |same: &dyn Fn(usize, usize) -> bool, order: &[usize]| -> u64 {
        let mut total = 0;
        let mut run = 1u64;
        for k in 1..order.len() {
            if same(order[k - 1], order[k]) {
                run += 1;
            } else {
                total += pairs(run);
                run = 1;
            }
        }
        total + pairs(run)
    };
    let x_ties = runs(&|a, b| x[a] == x[b], &idx);
    let joint_ties = runs(&|a, b| x[a] == x[b] && y[a] == y[b], &idx);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let y_order: Vec<usize> = (0..n).collect();
    let y_ties = runs(&|a, b| ys[a] == ys[b], &y_order);

    let n0 = pairs(n as u64);
    let s = n0 as i128 - x_ties as i128 - y_ties as i128 + joint_ties as i128 - 2 * swaps as i128;
    let denom = ((n0 - x_ties) as f64 * (n0 - y_ties) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some(s as f64 / denom)
}

/// Stable merge sort; returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k2 = k + mid - i;
    buf[k2..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}
