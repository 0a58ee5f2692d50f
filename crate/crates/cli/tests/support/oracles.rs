//! Brute-force reference implementations, written against the textbook
//! definitions with flat indexing and no shared code with the library.

/// Cross-correlation of `x[n][ci][t][h][w]` with `w[co][ci][kt][kh][kw]`,
/// zero padding `pad`, step `stride`. Shapes are passed explicitly.
#[allow(clippy::too_many_arguments)]
pub fn conv3d(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    b: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 5]) {
    let [n, cin, t, h, wd] = xs;
    let [cout, _, kt, kh, kw] = ws;
    let out_len = |i: usize, k: usize, p: usize, s: usize| (i + 2 * p - k) / s + 1;
    let (to, ho, wo) = (
        out_len(t, kt, pad[0], stride[0]),
        out_len(h, kh, pad[1], stride[1]),
        out_len(wd, kw, pad[2], stride[2]),
    );
    let mut out = vec![0.0; n * cout * to * ho * wo];
    let xi = |a: usize, c: usize, z: i64, y: i64, q: i64| -> f64 {
        if z < 0 || y < 0 || q < 0 || z >= t as i64 || y >= h as i64 || q >= wd as i64 {
            0.0
        } else {
            x[(((a * cin + c) * t + z as usize) * h + y as usize) * wd + q as usize]
        }
    };
    let mut idx = 0;
    for a in 0..n {
        for co in 0..cout {
            for oz in 0..to {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b[co]);
                        for ci in 0..cin {
                            for dz in 0..kt {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let z = (oz * stride[0] + dz) as i64 - pad[0] as i64;
                                        let y = (oy * stride[1] + dy) as i64 - pad[1] as i64;
                                        let q = (ox * stride[2] + dx) as i64 - pad[2] as i64;
                                        let wv = w[(((co * cin + ci) * kt + dz) * kh + dy) * kw + dx];
                                        acc += xi(a, ci, z, y, q) * wv;
                                    }
                                }
                            }
                        }
                        out[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    (out, [n, cout, to, ho, wo])
}

/// Max over each window, no padding.
pub fn maxpool3d(x: &[f64], xs: [usize; 5], k: [usize; 3], s: [usize; 3]) -> (Vec<f64>, [usize; 5]) {
    let [n, c, t, h, w] = xs;
    let (to, ho, wo) = ((t - k[0]) / s[0] + 1, (h - k[1]) / s[1] + 1, (w - k[2]) / s[2] + 1);
    let mut out = Vec::with_capacity(n * c * to * ho * wo);
    for plane in 0..n * c {
        for oz in 0..to {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = f64::NEG_INFINITY;
                    for dz in 0..k[0] {
                        for dy in 0..k[1] {
                            for dx in 0..k[2] {
                                let (z, y, q) = (oz * s[0] + dz, oy * s[1] + dy, ox * s[2] + dx);
                                m = m.max(x[((plane * t + z) * h + y) * w + q]);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    (out, [n, c, to, ho, wo])
}

/// `y[i][j] = b[j] + sum_d x[i][d] w[d][j]`.
pub fn fully_connected(x: &[f64], n: usize, d: usize, w: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            let mut acc = b[j];
            for e in 0..d {
                acc += x[i * d + e] * w[e * k + j];
            }
            y[i * k + j] = acc;
        }
    }
    y
}

/// Average precision by counting: item `i` ranks after every higher score and
/// after equal scores with a smaller index.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let rank = |i: usize| {
        1 + (0..scores.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let mut terms = Vec::new();
    for i in (0..scores.len()).filter(|&i| positive[i]) {
        let r = rank(i);
        let above = (0..scores.len()).filter(|&j| positive[j] && rank(j) <= r).count();
        terms.push(above as f64 / r as f64);
    }
    (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Mean AP over classes with at least one positive.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> f64 {
    let k = scores[0].len();
    let aps: Vec<f64> = (0..k)
        .filter_map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let p: Vec<bool> = labels.iter().map(|r| r[c]).collect();
            average_precision(&s, &p)
        })
        .collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}
