//! Brute-force reference implementations for the pacelaw test suites.
//!
//! Everything in this crate is deliberately naive: direct double loops,
//! exhaustive enumeration, dense Gaussian elimination. None of it shares
//! code with the main library, so agreement between the two is meaningful
//! evidence of correctness. Only ever used as a dev-dependency.

/// Time-above-speed curve by direct double loop.
///
/// For every grid speed `v`, sums `(t[j] - t[j-1])` over all samples whose
/// speed strictly exceeds `v`, in sample order. The first sample carries no
/// weight.
pub fn profile_brute_force(times: &[f64], speeds: &[f64], grid: &[f64]) -> Vec<f64> {
    assert_eq!(times.len(), speeds.len());
    let mut out = Vec::with_capacity(grid.len());
    for &v in grid {
        let mut total = 0.0;
        for j in 1..times.len() {
            if speeds[j] > v {
                total += times[j] - times[j - 1];
            }
        }
        out.push(total);
    }
    out
}

/// Euclidean projection of `values` onto the cone of non-increasing vectors,
/// found by exhaustive enumeration of contiguous block partitions.
///
/// The projection is piecewise constant with block values equal to block
/// means, so enumerating all `2^(n-1)` partitions and keeping the feasible
/// one with the smallest squared error recovers it exactly. Only usable for
/// small `n`.
pub fn monotone_decreasing_projection(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    assert!((1..=16).contains(&n), "enumeration oracle limited to small inputs");
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Bit i of `cuts` set => a block boundary between positions i and i+1.
    for cuts in 0u32..(1u32 << (n - 1)) {
        let mut candidate = vec![0.0; n];
        let mut start = 0;
        let mut prev_mean = f64::INFINITY;
        let mut feasible = true;
        for end in 0..n {
            let boundary = end == n - 1 || (cuts >> end) & 1 == 1;
            if !boundary {
                continue;
            }
            let block = &values[start..=end];
            let mean = block.iter().sum::<f64>() / block.len() as f64;
            if mean > prev_mean {
                feasible = false;
                break;
            }
            for slot in candidate.iter_mut().take(end + 1).skip(start) {
                *slot = mean;
            }
            prev_mean = mean;
            start = end + 1;
        }
        if !feasible {
            continue;
        }
        let sse: f64 = candidate
            .iter()
            .zip(values)
            .map(|(c, v)| (c - v) * (c - v))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, candidate));
        }
    }
    best.expect("the all-in-one-block partition is always feasible").1
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`. Returns `None` when a pivot is negligible.
pub fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut pivot_row = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[pivot_row * n + col].abs() {
                pivot_row = row;
            }
        }
        if m[pivot_row * n + col].abs() < 1e-12 {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for k in col + 1..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Some(x)
}

/// Ordinary least squares through the normal equations.
/// `x` is row-major `n x p` with `n >= p` and full column rank.
pub fn least_squares(x: &[f64], y: &[f64], n: usize, p: usize) -> Option<Vec<f64>> {
    assert_eq!(x.len(), n * p);
    assert_eq!(y.len(), n);
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            xty[j] += x[i * p + j] * y[i];
            for k in 0..p {
                xtx[j * p + k] += x[i * p + j] * x[i * p + k];
            }
        }
    }
    solve_dense(&xtx, &xty, p)
}

/// Exact minimiser of `||y - X b||^2 + l2 ||b||^2 + l1 ||b||_1` found by
/// enumerating all sign patterns of the solution.
///
/// For each pattern the stationarity system restricted to the active set is
/// solved exactly; the candidate is accepted when the recovered signs match
/// the pattern and every inactive coordinate satisfies the subgradient bound
/// `|2 x_j' (y - X b)| <= l1 + tol`. Convexity makes the accepted candidate a
/// global minimiser. Exponential in `p` (3^p patterns), so only for tiny `p`.
pub fn elastic_net_enumeration(
    x: &[f64],
    y: &[f64],
    n: usize,
    p: usize,
    l1: f64,
    l2: f64,
    tol: f64,
) -> Option<Vec<f64>> {
    assert_eq!(x.len(), n * p);
    assert_eq!(y.len(), n);
    assert!(p <= 8, "3^p sign patterns; keep p small");
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            xty[j] += x[i * p + j] * y[i];
            for k in 0..p {
                xtx[j * p + k] += x[i * p + j] * x[i * p + k];
            }
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let patterns = 3usize.pow(p as u32);
    for code in 0..patterns {
        let mut signs = vec![0i8; p];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = match c % 3 {
                0 => 0,
                1 => 1,
                _ => -1,
            };
            c /= 3;
        }
        let active: Vec<usize> = (0..p).filter(|&j| signs[j] != 0).collect();
        let beta = if active.is_empty() {
            vec![0.0; p]
        } else {
            let a = active.len();
            let mut sys = vec![0.0; a * a];
            let mut rhs = vec![0.0; a];
            for (r, &j) in active.iter().enumerate() {
                rhs[r] = xty[j] - 0.5 * l1 * signs[j] as f64;
                for (cidx, &k) in active.iter().enumerate() {
                    sys[r * a + cidx] = xtx[j * p + k];
                    if j == k {
                        sys[r * a + cidx] += l2;
                    }
                }
            }
            let sol = match solve_dense(&sys, &rhs, a) {
                Some(sol) => sol,
                None => continue,
            };
            let mut beta = vec![0.0; p];
            for (r, &j) in active.iter().enumerate() {
                beta[j] = sol[r];
            }
            beta
        };

        let mut ok = true;
        for j in 0..p {
            if signs[j] != 0 && beta[j] * f64::from(signs[j]) < 0.0 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        // Subgradient bound on inactive coordinates.
        for j in 0..p {
            if signs[j] != 0 {
                continue;
            }
            let mut grad = xty[j];
            for k in 0..p {
                grad -= xtx[j * p + k] * beta[k];
            }
            if 2.0 * grad.abs() > l1 + tol {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let obj = elastic_net_objective(x, y, n, p, &beta, l1, l2);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, beta));
        }
    }
    best.map(|(_, beta)| beta)
}

/// `||y - X b||^2 + l2 ||b||^2 + l1 ||b||_1` for row-major `x`.
pub fn elastic_net_objective(
    x: &[f64],
    y: &[f64],
    n: usize,
    p: usize,
    beta: &[f64],
    l1: f64,
    l2: f64,
) -> f64 {
    let mut obj = 0.0;
    for i in 0..n {
        let mut pred = 0.0;
        for j in 0..p {
            pred += x[i * p + j] * beta[j];
        }
        let r = y[i] - pred;
        obj += r * r;
    }
    for &b in beta {
        obj += l2 * b * b + l1 * b.abs();
    }
    obj
}
