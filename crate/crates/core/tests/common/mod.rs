//! Independent numerical oracles shared by the integration tests.

#![allow(dead_code)]

use oac3::{ProbMatrix, SimilarityMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rows drawn uniformly from `[lo, 1]` and normalized.
pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, k: usize, lo: f64) -> ProbMatrix {
    let mut values = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(lo..1.0)).collect();
        let total: f64 = row.iter().sum();
        values.extend(row.iter().map(|v| v / total));
    }
    ProbMatrix::new(n, k, values).unwrap()
}

/// Each pair linked with probability `density`, weight in `[0.05, 1]`.
pub fn random_similarity(rng: &mut ChaCha8Rng, n: usize, density: f64) -> SimilarityMatrix {
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                triplets.push((i, j, rng.random_range(0.05..=1.0)));
            }
        }
    }
    SimilarityMatrix::from_triplets(n, triplets).unwrap()
}

/// One Nelder–Mead run; returns the best vertex and its value.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < 1e-13 {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|c| simplex[..d].iter().map(|x| x[c]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let reflected = along(1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
        } else {
            let contracted = if fr < values[d] { along(0.5) } else { along(-0.5) };
            let fc = f(&contracted);
            if fc < values[d].min(fr) {
                simplex[d] = contracted;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    simplex[i] = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(x, b)| b + 0.5 * (x - b))
                        .collect();
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best].clone(), values[best])
}

/// Nelder–Mead with restarts from the incumbent until it stops improving.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64]) -> Vec<f64> {
    let (mut x, mut fx) = nelder_mead(f, x0, 0.1, 20_000);
    for step in [1e-2, 1e-3, 1e-4, 1e-2, 1e-5] {
        let (y, fy) = nelder_mead(f, &x, step, 20_000);
        if fy <= fx {
            x = y;
            fx = fy;
        }
    }
    x
}

/// Euclidean projection onto `{x : Σx = 1, x ≥ floor}`.
pub fn project_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let k = v.len();
    let mass = 1.0 - floor * k as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut u = shifted.clone();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - mass) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|x| (x - theta).max(0.0) + floor).collect()
}

/// Base-2 KL divergence with the linear correction term, coordinatewise.
pub fn kl2(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (a * (a / b).ln() - a + b) / std::f64::consts::LN_2)
        .sum()
}

/// Unsplit objective for base-2 KL, written independently of the library.
pub fn j0_kl(pi: &ProbMatrix, s: &SimilarityMatrix, alpha: f64, y: &[Vec<f64>]) -> f64 {
    let n = pi.n();
    let mut total = 0.0;
    for i in 0..n {
        total += kl2(pi.row(i), &y[i]);
        for j in 0..n {
            if i != j {
                total += alpha * s.get(i, j) * kl2(&y[i], &y[j]);
            }
        }
    }
    total
}

fn j0_kl_gradient(pi: &ProbMatrix, s: &SimilarityMatrix, alpha: f64, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = pi.n();
    let ln2 = std::f64::consts::LN_2;
    let mut g = vec![vec![0.0; pi.k()]; n];
    for m in 0..n {
        for l in 0..pi.k() {
            let ym = y[m][l];
            // d(π_m, y_m) with respect to its second argument.
            let mut acc = (1.0 - pi.row(m)[l] / ym) / ln2;
            for j in 0..n {
                if j == m {
                    continue;
                }
                let w = alpha * s.get(m, j);
                // y_m as first argument, then as second argument.
                acc += w * (ym / y[j][l]).ln() / ln2;
                acc += w * (1.0 - y[j][l] / ym) / ln2;
            }
            g[m][l] = acc;
        }
    }
    g
}

/// Projected gradient descent with Armijo backtracking on the unsplit
/// base-2 KL objective over the simplex rows.
pub fn minimize_j0_kl(pi: &ProbMatrix, s: &SimilarityMatrix, alpha: f64) -> Vec<Vec<f64>> {
    let floor = 1e-9;
    let mut y: Vec<Vec<f64>> = pi.rows().map(|r| r.to_vec()).collect();
    let mut fy = j0_kl(pi, s, alpha, &y);
    let mut step = 1.0;
    for _ in 0..200_000 {
        let g = j0_kl_gradient(pi, s, alpha, &y);
        let mut accepted = false;
        while step > 1e-16 {
            let cand: Vec<Vec<f64>> = y
                .iter()
                .zip(&g)
                .map(|(row, gr)| {
                    let moved: Vec<f64> = row.iter().zip(gr).map(|(a, b)| a - step * b).collect();
                    project_simplex(&moved, floor)
                })
                .collect();
            let decrease: f64 = y
                .iter()
                .zip(&cand)
                .zip(&g)
                .map(|((a, b), gr)| a.iter().zip(b).zip(gr).map(|((x, z), d)| d * (x - z)).sum::<f64>())
                .sum();
            let fc = j0_kl(pi, s, alpha, &cand);
            if fc <= fy - 1e-4 * decrease {
                let moved = y
                    .iter()
                    .zip(&cand)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, z)| (x - z).abs()).fold(0.0, f64::max))
                    .fold(0.0, f64::max);
                y = cand;
                fy = fc;
                accepted = true;
                step *= 2.0;
                if moved < 1e-14 {
                    return y;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    y
}

