//! Slow reference implementations used as test oracles. Kept deliberately
//! naive and separate from the library code paths.
#![allow(dead_code)]

use lowdose_core::volume::{LabelSet, Mask};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn in_set(m: &Mask, set: LabelSet, p: [i64; 3]) -> bool {
    let d = m.dims();
    if (0..3).any(|a| p[a] < 0 || p[a] >= d[a] as i64) {
        return false;
    }
    set.contains(m.get(p[0] as usize, p[1] as usize, p[2] as usize))
}

/// Selected voxels with a face neighbor outside the selection, where
/// positions beyond the volume count as outside.
pub fn surface(m: &Mask, set: LabelSet) -> Vec<[i64; 3]> {
    let d = m.dims();
    let mut out = Vec::new();
    for z in 0..d[2] as i64 {
        for y in 0..d[1] as i64 {
            for x in 0..d[0] as i64 {
                if !in_set(m, set, [x, y, z]) {
                    continue;
                }
                let steps = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
                if steps.iter().any(|s| !in_set(m, set, [x + s[0], y + s[1], z + s[2]])) {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// All-pairs pooled directed distances in mm.
pub fn pooled(a: &Mask, b: &Mask, set: LabelSet) -> Option<Vec<f64>> {
    let sa = surface(a, set);
    let sb = surface(b, set);
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let sp = a.spacing();
    let dist = |p: &[i64; 3], q: &[i64; 3]| {
        let mut s = 0.0;
        for k in 0..3 {
            let t = (p[k] - q[k]) as f64 * sp[k];
            s += t * t;
        }
        s.sqrt()
    };
    let directed = |from: &[[i64; 3]], to: &[[i64; 3]]| -> Vec<f64> {
        from.iter().map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).collect()
    };
    let mut d = directed(&sa, &sb);
    d.extend(directed(&sb, &sa));
    Some(d)
}

/// (hd95, asd) from the all-pairs oracle.
pub fn hd95_asd(a: &Mask, b: &Mask, set: LabelSet) -> Option<(f64, f64)> {
    let mut d = pooled(a, b, set)?;
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = d.len();
    let pos = 0.95 * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    let hd = if i + 1 < n { d[i] * (1.0 - frac) + d[i + 1] * frac } else { d[i] };
    let asd = d.iter().sum::<f64>() / n as f64;
    Some((hd, asd))
}

/// Random label volume: each voxel is 0, 1 or 2 with the given fill rate.
pub fn random_mask(rng: &mut ChaCha8Rng, max_side: usize, fill: f64) -> Mask {
    let dims = [rng.gen_range(1..=max_side), rng.gen_range(1..=max_side), rng.gen_range(1..=max_side)];
    let spacing = [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..3.0)];
    random_mask_like(rng, dims, spacing, fill)
}

pub fn random_mask_like(rng: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3], fill: f64) -> Mask {
    let n = dims.iter().product();
    let labels = (0..n).map(|_| if rng.gen_bool(fill) { rng.gen_range(1..=2u8) } else { 0 }).collect();
    Mask::new(dims, spacing, labels).unwrap()
}

/// Two-sided signed-rank p value by enumerating all 2^n sign patterns.
/// Zero differences are dropped; tied magnitudes get average ranks.
pub fn wilcoxon_enumerated(d: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let ranks: Vec<f64> = d
        .iter()
        .map(|v| {
            let less = d.iter().filter(|u| u.abs() < v.abs()).count() as f64;
            let same = d.iter().filter(|u| u.abs() == v.abs()).count() as f64;
            less + (same + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for signs in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s.min(total - s) <= w + 1e-9 {
            hits += 1;
        }
    }
    (w, (hits as f64 / (1u64 << n) as f64).min(1.0))
}
